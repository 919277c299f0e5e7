#include "fiberseg/arch.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <tuple>

namespace fiberseg {

using json = nlohmann::json;
using nn::Network;

std::string ArchSpec::id() const {
    std::string base = family == Family::UNet ? "unet" : "tiramisu";
    return base + (dims == 2 ? "2d" : "3d");
}

float ArchSpec::effective_dropout() const {
    if (dropout_rate >= 0.0f) return dropout_rate;
    if (family == Family::Tiramisu) return 0.2f;
    return dims == 2 ? 0.5f : 0.0f;
}

void ArchSpec::validate() const {
    if (dims != 2 && dims != 3) throw InvalidSpec("ArchSpec: dims must be 2 or 3");
    if (depth < 1) throw InvalidSpec("ArchSpec: depth must be >= 1");
    if (base_channels < 1 || growth_rate < 1 || layers_per_block < 1 || first_conv_channels < 1)
        throw InvalidSpec("ArchSpec: channel parameters must be >= 1");
    if (effective_dropout() < 0.0f || effective_dropout() >= 1.0f)
        throw InvalidSpec("ArchSpec: dropout rate must be in [0, 1)");
}

ArchSpec ArchSpec::unet2d(int depth, int64_t base, uint64_t seed) {
    ArchSpec s;
    s.family = Family::UNet;
    s.dims = 2;
    s.depth = depth;
    s.base_channels = base;
    s.seed = seed;
    return s;
}

ArchSpec ArchSpec::unet3d(int depth, int64_t base, uint64_t seed) {
    ArchSpec s = unet2d(depth, base, seed);
    s.dims = 3;
    return s;
}

ArchSpec ArchSpec::tiramisu2d(int depth, int64_t growth, int layers, uint64_t seed) {
    ArchSpec s;
    s.family = Family::Tiramisu;
    s.dims = 2;
    s.depth = depth;
    s.growth_rate = growth;
    s.layers_per_block = layers;
    s.seed = seed;
    return s;
}

ArchSpec ArchSpec::tiramisu3d(int depth, int64_t growth, int layers, uint64_t seed) {
    ArchSpec s = tiramisu2d(depth, growth, layers, seed);
    s.dims = 3;
    return s;
}

ArchSpec ArchSpec::from_id(const std::string& id, uint64_t seed) {
    if (id == "unet2d") return unet2d(4, 64, seed);
    if (id == "unet3d") return unet3d(4, 32, seed);
    if (id == "tiramisu2d") return tiramisu2d(5, 16, 4, seed);
    if (id == "tiramisu3d") return tiramisu3d(3, 16, 4, seed);
    throw InvalidSpec("unknown architecture id: " + id);
}

namespace {

struct Builder {
    Network net;
    std::mt19937 init_rng;
    uint64_t dropout_seq = 0;
    uint64_t seed;
    int dims;
    bool use_bn;

    Builder(const ArchSpec& spec)
        : init_rng(static_cast<uint32_t>(spec.seed * 0x9e3779b9u + 12345u)),
          seed(spec.seed), dims(spec.dims), use_bn(spec.batch_norm) {}

    int conv(int in_node, int64_t in_ch, int64_t out_ch, int64_t kernel) {
        return net.add(std::make_unique<nn::Conv>(dims, in_ch, out_ch, kernel, init_rng),
                       {in_node});
    }
    int bn_relu(int in_node, int64_t ch) {
        int x = in_node;
        if (use_bn) x = net.add(std::make_unique<nn::BatchNorm>(ch), {x});
        return net.add(std::make_unique<nn::Relu>(), {x});
    }
    int dropout(int in_node, float rate) {
        return net.add(std::make_unique<nn::Dropout>(rate, seed * 7919 + (dropout_seq++)),
                       {in_node});
    }
    int pool(int in_node) { return net.add(std::make_unique<nn::MaxPool>(dims), {in_node}); }
    int upconv(int in_node, int64_t in_ch, int64_t out_ch) {
        return net.add(std::make_unique<nn::UpConv>(dims, in_ch, out_ch, init_rng), {in_node});
    }
    int concat(std::vector<int> inputs) {
        return net.add(std::make_unique<nn::Concat>(), std::move(inputs));
    }
    int sigmoid(int in_node) { return net.add(std::make_unique<nn::Sigmoid>(), {in_node}); }

    // conv3 -> [BN] -> relu, twice
    int double_conv(int in_node, int64_t in_ch, int64_t out_ch) {
        int x = conv(in_node, in_ch, out_ch, 3);
        x = bn_relu(x, out_ch);
        x = conv(x, out_ch, out_ch, 3);
        return bn_relu(x, out_ch);
    }
};

Network build_unet(const ArchSpec& spec) {
    Builder b(spec);
    const float rate = spec.effective_dropout();
    const int d = spec.depth;

    std::vector<int> skips;
    std::vector<int64_t> skip_ch;
    int x = Network::kInput;
    int64_t in_ch = 1;
    for (int level = 0; level < d; ++level) {
        const int64_t ch = spec.base_channels << level;
        x = b.double_conv(x, in_ch, ch);
        skips.push_back(x);
        skip_ch.push_back(ch);
        x = b.pool(x);
        in_ch = ch;
    }

    // bottleneck; 2D U-net carries dropout here
    const int64_t bott_ch = spec.base_channels << d;
    x = b.double_conv(x, in_ch, bott_ch);
    if (spec.family == ArchSpec::Family::UNet && spec.dims == 2 && rate > 0.0f)
        x = b.dropout(x, rate);

    int64_t cur = bott_ch;
    for (int level = d - 1; level >= 0; --level) {
        const int64_t ch = skip_ch[static_cast<size_t>(level)];
        x = b.upconv(x, cur, ch);
        x = b.concat({x, skips[static_cast<size_t>(level)]});
        x = b.double_conv(x, 2 * ch, ch);
        if (level == 0 && spec.dims == 2 && rate > 0.0f)
            x = b.dropout(x, rate);  // last analysis layer
        cur = ch;
    }

    x = b.conv(x, cur, 1, 1);
    b.sigmoid(x);
    return std::move(b.net);
}

Network build_tiramisu(const ArchSpec& spec) {
    Builder b(spec);
    const float rate = spec.effective_dropout();
    const int L = spec.layers_per_block;
    const int64_t k = spec.growth_rate;

    // one dense-block layer: BN -> relu -> conv3(growth) -> dropout
    auto dense_layer = [&](int in_node, int64_t in_ch) {
        int x = b.bn_relu(in_node, in_ch);
        x = b.conv(x, in_ch, k, 3);
        if (rate > 0.0f) x = b.dropout(x, rate);
        return x;
    };
    // returns {full stack id, new-features id, full channels}
    auto block = [&](int in_node, int64_t in_ch) {
        std::vector<int> new_ids;
        int stack = in_node;
        int64_t cur = in_ch;
        for (int l = 0; l < L; ++l) {
            const int nf = dense_layer(stack, cur);
            new_ids.push_back(nf);
            stack = b.concat({stack, nf});
            cur += k;
        }
        const int news = new_ids.size() == 1 ? new_ids[0] : b.concat(new_ids);
        return std::tuple<int, int, int64_t>{stack, news, cur};
    };

    const int64_t m = static_cast<int64_t>(L) * k;  // new features per block
    int x = b.conv(Network::kInput, 1, spec.first_conv_channels, 3);
    int64_t cur = spec.first_conv_channels;

    std::vector<int> skips;
    std::vector<int64_t> skip_ch;
    for (int level = 0; level < spec.depth; ++level) {
        auto [stack, news, ch] = block(x, cur);
        (void)news;
        skips.push_back(stack);
        skip_ch.push_back(ch);
        // transition down: BN -> relu -> conv1 -> dropout -> pool
        int t = b.bn_relu(stack, ch);
        t = b.conv(t, ch, ch, 1);
        if (rate > 0.0f) t = b.dropout(t, rate);
        x = b.pool(t);
        cur = ch;
    }

    // bottleneck block: only its new features are upsampled
    auto [bstack, bnews, bch] = block(x, cur);
    (void)bstack;
    (void)bch;
    int up_src = bnews;
    int64_t up_ch = m;

    int64_t final_ch = 0;
    for (int level = spec.depth - 1; level >= 0; --level) {
        int t = b.upconv(up_src, up_ch, up_ch);
        int in_node = b.concat({t, skips[static_cast<size_t>(level)]});
        const int64_t in_ch = up_ch + skip_ch[static_cast<size_t>(level)];
        auto [stack, news, ch] = block(in_node, in_ch);
        if (level == 0) {
            up_src = stack;  // topmost block feeds the classifier with its full stack
            final_ch = ch;
        } else {
            up_src = news;
            up_ch = m;
        }
    }

    x = b.conv(up_src, final_ch, 1, 1);
    b.sigmoid(x);
    return std::move(b.net);
}

}  // namespace

Network build(const ArchSpec& spec) {
    spec.validate();
    if (spec.family == ArchSpec::Family::UNet) return build_unet(spec);
    return build_tiramisu(spec);
}

namespace {

json spec_to_json(const ArchSpec& s) {
    return json{{"family", s.family == ArchSpec::Family::UNet ? "unet" : "tiramisu"},
                {"dims", s.dims},
                {"depth", s.depth},
                {"base_channels", s.base_channels},
                {"first_conv_channels", s.first_conv_channels},
                {"growth_rate", s.growth_rate},
                {"layers_per_block", s.layers_per_block},
                {"dropout_rate", s.dropout_rate},
                {"batch_norm", s.batch_norm},
                {"seed", s.seed}};
}

ArchSpec spec_from_json(const json& j) {
    ArchSpec s;
    s.family = j.at("family") == "unet" ? ArchSpec::Family::UNet : ArchSpec::Family::Tiramisu;
    s.dims = j.at("dims");
    s.depth = j.at("depth");
    s.base_channels = j.at("base_channels");
    s.first_conv_channels = j.at("first_conv_channels");
    s.growth_rate = j.at("growth_rate");
    s.layers_per_block = j.at("layers_per_block");
    s.dropout_rate = j.at("dropout_rate");
    s.batch_norm = j.at("batch_norm");
    s.seed = j.at("seed");
    return s;
}

constexpr char kMagic[8] = {'F', 'S', 'E', 'G', 'N', 'E', 'T', '1'};

std::vector<nn::Tensor*> all_tensors(Network& net) {
    std::vector<nn::Tensor*> out;
    for (size_t i = 0; i < net.node_count(); ++i) {
        for (nn::Tensor* p : net.layer(i).params()) out.push_back(p);
        for (nn::Tensor* b : net.layer(i).buffers()) out.push_back(b);
    }
    return out;
}

}  // namespace

void save_weights(Network& net, const ArchSpec& spec, const std::filesystem::path& path) {
    json layers = json::array();
    for (size_t i = 0; i < net.node_count(); ++i) {
        json shapes = json::array();
        for (nn::Tensor* p : net.layer(i).params()) shapes.push_back(p->shape());
        for (nn::Tensor* b : net.layer(i).buffers()) shapes.push_back(b->shape());
        layers.push_back({{"kind", net.layer(i).kind()}, {"tensors", shapes}});
    }
    json header{{"arch", spec.id()}, {"spec", spec_to_json(spec)}, {"layers", layers}};
    const std::string hs = header.dump();

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write weights: " + path.string());
        f.write(kMagic, 8);
        const uint64_t len = hs.size();
        f.write(reinterpret_cast<const char*>(&len), 8);
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (nn::Tensor* t : all_tensors(net))
            f.write(reinterpret_cast<const char*>(t->data()),
                    static_cast<std::streamsize>(t->size() * 4));
        if (!f) throw IoError("short write: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

std::pair<Network, ArchSpec> load_weights(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read weights: " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw CorruptFile("bad magic in weight file: " + path.string());
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    if (f.gcount() != 8) throw CorruptFile("truncated weight header: " + path.string());
    std::string hs(len, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(len));
    if (static_cast<uint64_t>(f.gcount()) != len)
        throw CorruptFile("truncated weight header: " + path.string());

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception&) {
        throw CorruptFile("unparsable weight header: " + path.string());
    }
    ArchSpec spec = spec_from_json(header.at("spec"));
    Network net = build(spec);

    const json& layers = header.at("layers");
    if (layers.size() != net.node_count())
        throw CorruptFile("weight header layer count mismatch: " + path.string());
    for (size_t i = 0; i < net.node_count(); ++i)
        if (layers[i].at("kind") != net.layer(i).kind())
            throw CorruptFile("weight header layer kind mismatch: " + path.string());

    for (nn::Tensor* t : all_tensors(net)) {
        f.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * 4));
        if (f.gcount() != static_cast<std::streamsize>(t->size() * 4))
            throw CorruptFile("truncated weight blobs: " + path.string());
    }
    return {std::move(net), spec};
}

std::pair<Network, ArchSpec> load_weights_as(const std::filesystem::path& path,
                                             const std::string& expected_id) {
    // check the header id before building, so mismatches fail fast
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read weights: " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw CorruptFile("bad magic in weight file: " + path.string());
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(len));
    if (static_cast<uint64_t>(f.gcount()) != len)
        throw CorruptFile("truncated weight header: " + path.string());
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception&) {
        throw CorruptFile("unparsable weight header: " + path.string());
    }
    if (header.at("arch") != expected_id)
        throw ArchMismatch("weight file is '" + header.at("arch").get<std::string>() +
                           "', expected '" + expected_id + "'");
    return load_weights(path);
}

}  // namespace fiberseg
