#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fiberseg/arch.hpp"
#include "fiberseg/augment.hpp"
#include "fiberseg/classic.hpp"
#include "fiberseg/config.hpp"
#include "fiberseg/metrics.hpp"
#include "fiberseg/phantom.hpp"
#include "fiberseg/predictor.hpp"
#include "fiberseg/volume.hpp"

namespace fs = std::filesystem;
using namespace fiberseg;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Common {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    int workers = 1;
    ConfigFile file;  // loaded from --config when given

    void load() {
        if (!config_path.empty()) file = parse_config(config_path);
    }
};

// CLI flag wins; otherwise config file; otherwise the built-in default
int64_t resolve_int(const CLI::Option* opt, const Common& c, const std::string& sec,
                    const std::string& key, int64_t current) {
    return opt->count() ? current : c.file.get_int(sec, key, current);
}
double resolve_double(const CLI::Option* opt, const Common& c, const std::string& sec,
                      const std::string& key, double current) {
    return opt->count() ? current : c.file.get_double(sec, key, current);
}
bool resolve_bool(const CLI::Option* opt, const Common& c, const std::string& sec,
                  const std::string& key, bool current) {
    return opt->count() ? current : c.file.get_bool(sec, key, current);
}
std::string resolve_str(const CLI::Option* opt, const Common& c, const std::string& sec,
                        const std::string& key, std::string current) {
    return opt->count() ? current : c.file.get(sec, key, current);
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "key=value config file with [section] headers");
    cmd->add_option("--out", c.out_dir, "output directory")->required();
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--workers", c.workers, "worker count (1 = deterministic reference mode)");
}

void finish_common(CLI::App* cmd, Common& c) {
    c.load();
    if (!cmd->get_option("--seed")->count())
        c.seed = static_cast<uint64_t>(c.file.get_int("", "seed", 0));
    if (!cmd->get_option("--workers")->count())
        c.workers = static_cast<int>(c.file.get_int("", "workers", 1));
    fs::create_directories(c.out_dir);
}

void write_manifest(const Common& c, ConfigFile manifest) {
    manifest.set("", "version", kVersion);
    manifest.set_int("", "seed", static_cast<int64_t>(c.seed));
    manifest.set_int("", "workers", c.workers);
    write_config(manifest, fs::path(c.out_dir) / "manifest.cfg");
    // structured log of every resolved parameter
    std::cout << manifest.dump();
}

FloatArray load_volume(const std::string& input) {
    const fs::path p(input);
    if (fs::is_directory(p)) return read_stack(open_stack(p)).as_float();
    return read_volume_raw(p).as_float();
}

void write_float_volume(const FloatArray& vol, const fs::path& path) {
    write_volume_raw(Volume::from_float(vol, DType::F32), path);
}

void write_mask_volume(const MaskArray& mask, const fs::path& path) {
    Volume v;
    v.shape = {mask.extent(0), mask.extent(1), mask.extent(2)};
    v.dtype = DType::U8;
    v.bytes.assign(mask.raw().begin(), mask.raw().end());
    write_volume_raw(v, path);
}

MaskArray read_mask_volume(const fs::path& path) {
    const Volume v = read_volume_raw(path);
    if (v.dtype != DType::U8) throw InvalidSpec("expected a U8 mask volume: " + path.string());
    MaskArray m({v.shape[0], v.shape[1], v.shape[2]});
    std::copy(v.bytes.begin(), v.bytes.end(), m.raw().begin());
    return m;
}

// ------------------------------------------------------------------ phantom

int cmd_phantom(CLI::App* cmd, Common& c, PhantomConfig& pc,
                std::vector<int64_t>& defect_slices) {
    finish_common(cmd, c);
    pc.n_fibers = static_cast<int>(
        resolve_int(cmd->get_option("--fibers"), c, "phantom", "fibers", pc.n_fibers));
    pc.radius_min =
        resolve_double(cmd->get_option("--radius-min"), c, "phantom", "radius_min", pc.radius_min);
    pc.radius_max =
        resolve_double(cmd->get_option("--radius-max"), c, "phantom", "radius_max", pc.radius_max);
    pc.depth = resolve_int(cmd->get_option("--depth"), c, "phantom", "depth", pc.depth);
    pc.size = resolve_int(cmd->get_option("--size"), c, "phantom", "size", pc.size);
    pc.noise_sigma = static_cast<float>(
        resolve_double(cmd->get_option("--noise"), c, "phantom", "noise", pc.noise_sigma));
    if (!cmd->get_option("--defect-slice")->count() && c.file.has("phantom", "defect_slices")) {
        defect_slices.clear();
        std::istringstream ds(c.file.get("phantom", "defect_slices", ""));
        for (std::string tok; std::getline(ds, tok, ',');)
            if (!tok.empty()) defect_slices.push_back(std::stoll(tok));
    }
    pc.defect_slices = defect_slices;
    pc.seed = c.seed;

    const Phantom p = make_phantom(pc);
    const fs::path out(c.out_dir);
    write_float_volume(p.volume, out / "volume.raw");
    write_mask_volume(p.gold_mask, out / "gold_mask.raw");
    write_labels_raw(p.gold_labels, out / "gold_labels.raw");

    ConfigFile manifest;
    manifest.set("", "command", "phantom");
    manifest.set_int("phantom", "fibers", pc.n_fibers);
    manifest.set_double("phantom", "radius_min", pc.radius_min);
    manifest.set_double("phantom", "radius_max", pc.radius_max);
    manifest.set_int("phantom", "depth", pc.depth);
    manifest.set_int("phantom", "size", pc.size);
    manifest.set_double("phantom", "noise", pc.noise_sigma);
    std::string ds;
    for (int64_t z : pc.defect_slices) ds += (ds.empty() ? "" : ",") + std::to_string(z);
    manifest.set("phantom", "defect_slices", ds);
    write_manifest(c, manifest);
    std::cout << "phantom: " << p.fibers.size() << " fibers, " << pc.depth << "x" << pc.size
              << "x" << pc.size << "\n";
    return 0;
}

// -------------------------------------------------------------------- train

nn::Dataset slice_dataset_2d(const FloatArray& vol, const MaskArray& gold) {
    nn::Dataset d;
    const int64_t h = vol.extent(1), w = vol.extent(2), plane = h * w;
    for (int64_t z = 0; z < vol.extent(0); ++z) {
        nn::Tensor x({1, h, w}), y({1, h, w});
        std::copy_n(vol.data() + z * plane, plane, x.data());
        for (int64_t i = 0; i < plane; ++i) y[i] = gold[z * plane + i] ? 1.0f : 0.0f;
        d.inputs.push_back(std::move(x));
        d.targets.push_back(std::move(y));
    }
    return d;
}

nn::Dataset chunk_dataset_3d(const FloatArray& vol, const MaskArray& gold, int64_t patch) {
    nn::Dataset d;
    const int64_t depth = vol.extent(0), h = vol.extent(1), w = vol.extent(2);
    for (int64_t z = 0; z + patch <= depth; z += patch)
        for (int64_t y = 0; y + patch <= h; y += patch)
            for (int64_t x = 0; x + patch <= w; x += patch) {
                nn::Tensor xi({1, patch, patch, patch}), yi({1, patch, patch, patch});
                int64_t k = 0;
                for (int64_t dz = 0; dz < patch; ++dz)
                    for (int64_t dy = 0; dy < patch; ++dy)
                        for (int64_t dx = 0; dx < patch; ++dx, ++k) {
                            const int64_t idx = ((z + dz) * h + y + dy) * w + x + dx;
                            xi[k] = vol[idx];
                            yi[k] = gold[idx] ? 1.0f : 0.0f;
                        }
                d.inputs.push_back(std::move(xi));
                d.targets.push_back(std::move(yi));
            }
    return d;
}

int cmd_train(CLI::App* cmd, Common& c, std::string& arch_id, std::string& data_dir,
              nn::TrainConfig& tc, std::string& optimizer, double& val_fraction, bool& no_augment,
              int64_t& patch, int& depth_opt, int64_t& base_opt) {
    finish_common(cmd, c);
    arch_id = resolve_str(cmd->get_option("--arch"), c, "train", "arch", arch_id);
    data_dir = resolve_str(cmd->get_option("--data"), c, "train", "data", data_dir);
    tc.epochs =
        static_cast<int>(resolve_int(cmd->get_option("--epochs"), c, "train", "epochs", tc.epochs));
    tc.batch_size = static_cast<int>(
        resolve_int(cmd->get_option("--batch-size"), c, "train", "batch_size", tc.batch_size));
    tc.learning_rate = static_cast<float>(resolve_double(cmd->get_option("--learning-rate"), c,
                                                         "train", "learning_rate",
                                                         tc.learning_rate));
    optimizer = resolve_str(cmd->get_option("--optimizer"), c, "train", "optimizer", optimizer);
    val_fraction = resolve_double(cmd->get_option("--val-fraction"), c, "train", "val_fraction",
                                  val_fraction);
    no_augment = resolve_bool(cmd->get_option("--no-augment"), c, "train", "no_augment",
                              no_augment);
    patch = resolve_int(cmd->get_option("--patch"), c, "train", "patch", patch);
    depth_opt =
        static_cast<int>(resolve_int(cmd->get_option("--depth"), c, "train", "depth", depth_opt));
    base_opt = resolve_int(cmd->get_option("--base-channels"), c, "train", "base_channels",
                           base_opt);
    if (data_dir.empty()) throw ConfigError("train: --data (or [train] data) is required");
    tc.seed = c.seed;
    if (optimizer == "adam") tc.optimizer = nn::Optimizer::Adam;
    else if (optimizer == "rmsprop") tc.optimizer = nn::Optimizer::RmsProp;
    else throw ConfigError("train: optimizer must be adam or rmsprop");

    ArchSpec spec = ArchSpec::from_id(arch_id, c.seed);
    if (depth_opt > 0) spec.depth = depth_opt;
    if (base_opt > 0) spec.base_channels = base_opt;
    nn::Network net = build(spec);

    const fs::path data(data_dir);
    const FloatArray vol = load_volume((data / "volume.raw").string());
    const MaskArray gold = read_mask_volume(data / "gold_mask.raw");
    require_same_shape(vol.shape(), gold.shape(), "train data");

    nn::Dataset all = spec.dims == 2 ? slice_dataset_2d(vol, gold)
                                     : chunk_dataset_3d(vol, gold, patch);
    if (all.inputs.empty()) throw EmptyDataset("train: dataset is empty");
    const size_t n_val = static_cast<size_t>(val_fraction * static_cast<double>(all.inputs.size()));
    nn::Dataset train_set, val_set;
    for (size_t i = 0; i < all.inputs.size(); ++i) {
        nn::Dataset& dst = i < all.inputs.size() - n_val ? train_set : val_set;
        dst.inputs.push_back(std::move(all.inputs[i]));
        dst.targets.push_back(std::move(all.targets[i]));
    }

    nn::AugmentFn augment_fn;
    if (!no_augment) {
        AugmentConfig ac;
        ac.seed = c.seed;
        augment_fn = make_augment_fn(ac);
    }
    const nn::TrainHistory hist = nn::train(net, train_set, val_set, tc, augment_fn);

    const fs::path out(c.out_dir);
    save_weights(net, spec, out / "weights.fsegnet");
    hist.write_csv((out / "history.csv").string());

    ConfigFile manifest;
    manifest.set("", "command", "train");
    manifest.set("train", "arch", arch_id);
    manifest.set("train", "data", data_dir);
    manifest.set_int("train", "epochs", tc.epochs);
    manifest.set_int("train", "batch_size", tc.batch_size);
    manifest.set_double("train", "learning_rate", tc.learning_rate);
    manifest.set("train", "optimizer", optimizer);
    manifest.set_double("train", "val_fraction", val_fraction);
    manifest.set_bool("train", "no_augment", no_augment);
    manifest.set_int("train", "patch", patch);
    if (depth_opt > 0) manifest.set_int("train", "depth", depth_opt);
    if (base_opt > 0) manifest.set_int("train", "base_channels", base_opt);
    write_manifest(c, manifest);
    if (!hist.epochs.empty())
        std::cout << "train: final loss " << hist.epochs.back().loss << ", accuracy "
                  << hist.epochs.back().accuracy << "\n";
    return 0;
}

// ------------------------------------------------------------------ predict

int cmd_predict(CLI::App* cmd, Common& c, std::string& arch_id, std::string& weights,
                std::string& input, PredictConfig& pcfg, int64_t& tile_size, int64_t& stride,
                bool& no_auto_pad, bool& want_binary, bool& want_labels) {
    finish_common(cmd, c);
    arch_id = resolve_str(cmd->get_option("--arch"), c, "predict", "arch", arch_id);
    weights = resolve_str(cmd->get_option("--weights"), c, "predict", "weights", weights);
    input = resolve_str(cmd->get_option("--input"), c, "predict", "input", input);
    pcfg.threshold = static_cast<float>(resolve_double(cmd->get_option("--threshold"), c,
                                                       "predict", "threshold", pcfg.threshold));
    tile_size = resolve_int(cmd->get_option("--tile-size"), c, "predict", "tile_size", tile_size);
    stride = resolve_int(cmd->get_option("--stride"), c, "predict", "stride", stride);
    no_auto_pad =
        resolve_bool(cmd->get_option("--no-auto-pad"), c, "predict", "no_auto_pad", no_auto_pad);
    want_binary = resolve_bool(cmd->get_option("--binary"), c, "predict", "binary", want_binary);
    want_labels = resolve_bool(cmd->get_option("--label"), c, "predict", "label", want_labels);
    if (weights.empty() || input.empty())
        throw ConfigError("predict: --weights and --input are required");

    auto [net, spec] = arch_id.empty() ? load_weights(weights)
                                       : load_weights_as(weights, arch_id);
    pcfg.auto_pad = !no_auto_pad;
    pcfg.workers = c.workers;
    if (tile_size > 0 || stride > 0) {
        const TileSpec dflt = default_tile_spec(spec.dims);
        const int64_t t = tile_size > 0 ? tile_size : dflt.tile[0];
        const int64_t s = stride > 0 ? stride : dflt.stride[0];
        pcfg.tile = spec.dims == 2 ? TileSpec::square2d(t, s) : TileSpec::cube3d(t, s);
    }

    const FloatArray vol = load_volume(input);
    PredictTiming timing;
    const FloatArray prob = predict_volume(net, spec.dims, vol, pcfg, &timing);

    const fs::path out(c.out_dir);
    write_float_volume(prob, out / "prob.raw");
    MaskArray mask;
    if (want_binary || want_labels) {
        mask = MaskArray(prob.shape());
        for (int64_t i = 0; i < prob.size(); ++i) mask[i] = prob[i] > pcfg.threshold ? 1 : 0;
        if (want_binary) write_mask_volume(mask, out / "mask.raw");
    }
    if (want_labels) {
        const Instances inst = label_instances(mask);
        write_labels_raw(inst.labels, out / "labels.raw");
        std::ofstream stats(out / "instances.csv");
        stats << "label,voxels,cz,cy,cx,equiv_radius\n";
        for (const InstanceStats& s : inst.stats)
            stats << s.label << "," << s.voxels << "," << s.cz << "," << s.cy << "," << s.cx
                  << "," << s.equiv_radius << "\n";
    }
    {
        std::ofstream tf(out / "timing.csv");
        tf << "slice,seconds\n";
        for (size_t i = 0; i < timing.slice_seconds.size(); ++i)
            tf << i << "," << timing.slice_seconds[i] << "\n";
        tf << "total," << timing.total_seconds << "\n";
    }

    ConfigFile manifest;
    manifest.set("", "command", "predict");
    manifest.set("predict", "arch", spec.id());
    manifest.set("predict", "weights", weights);
    manifest.set("predict", "input", input);
    manifest.set_double("predict", "threshold", pcfg.threshold);
    const TileSpec used = pcfg.tile.tile.empty() ? default_tile_spec(spec.dims) : pcfg.tile;
    manifest.set_int("predict", "tile_size", used.tile[0]);
    manifest.set_int("predict", "stride", used.stride[0]);
    manifest.set_bool("predict", "no_auto_pad", no_auto_pad);
    manifest.set_bool("predict", "binary", want_binary);
    manifest.set_bool("predict", "label", want_labels);
    write_manifest(c, manifest);
    std::cout << "predict: " << vol.extent(0) << " slices in " << timing.total_seconds << " s\n";
    return 0;
}

// ----------------------------------------------------------- segment-classic

int cmd_classic(CLI::App* cmd, Common& c, std::string& input, ClassicParams& params) {
    finish_common(cmd, c);
    input = resolve_str(cmd->get_option("--input"), c, "classic", "input", input);
    params.tv_weight = static_cast<float>(resolve_double(cmd->get_option("--tv-weight"), c,
                                                         "classic", "tv_weight",
                                                         params.tv_weight));
    params.otsu_classes = static_cast<int>(resolve_int(cmd->get_option("--otsu-classes"), c,
                                                       "classic", "otsu_classes",
                                                       params.otsu_classes));
    params.wusem_initial_radius = static_cast<int>(
        resolve_int(cmd->get_option("--initial-radius"), c, "classic", "initial_radius",
                    params.wusem_initial_radius));
    params.wusem_delta_radius = static_cast<int>(
        resolve_int(cmd->get_option("--delta-radius"), c, "classic", "delta_radius",
                    params.wusem_delta_radius));
    params.watershed_line = !resolve_bool(cmd->get_option("--no-watershed-line"), c, "classic",
                                          "no_watershed_line", !params.watershed_line);
    if (input.empty()) throw ConfigError("segment-classic: --input is required");

    const FloatArray vol = load_volume(input);
    const int64_t d = vol.extent(0), h = vol.extent(1), w = vol.extent(2);
    LabelArray labels({d, h, w});
    std::ofstream counts(fs::path(c.out_dir) / "counts.csv");
    counts << "slice,labels\n";
    FloatArray slice({h, w});
    for (int64_t z = 0; z < d; ++z) {
        std::copy_n(vol.data() + z * h * w, h * w, slice.data());
        const LabelArray lab = segment_classic(slice, params);
        std::copy_n(lab.data(), h * w, labels.data() + z * h * w);
        counts << z << "," << max_label(lab) << "\n";
    }
    write_labels_raw(labels, fs::path(c.out_dir) / "labels.raw");

    ConfigFile manifest;
    manifest.set("", "command", "segment-classic");
    manifest.set("classic", "input", input);
    manifest.set_double("classic", "tv_weight", params.tv_weight);
    manifest.set_int("classic", "otsu_classes", params.otsu_classes);
    manifest.set_int("classic", "initial_radius", params.wusem_initial_radius);
    manifest.set_int("classic", "delta_radius", params.wusem_delta_radius);
    manifest.set_bool("classic", "no_watershed_line", !params.watershed_line);
    write_manifest(c, manifest);
    return 0;
}

// ----------------------------------------------------------------- evaluate

int cmd_evaluate(CLI::App* cmd, Common& c, std::string& pred, std::string& gold,
                 double& threshold) {
    finish_common(cmd, c);
    pred = resolve_str(cmd->get_option("--pred"), c, "evaluate", "pred", pred);
    gold = resolve_str(cmd->get_option("--gold"), c, "evaluate", "gold", gold);
    threshold = resolve_double(cmd->get_option("--threshold"), c, "evaluate", "threshold",
                               threshold);
    if (pred.empty() || gold.empty())
        throw ConfigError("evaluate: --pred and --gold are required");

    const FloatArray prob = load_volume(pred);
    const MaskArray gm = read_mask_volume(gold);
    require_same_shape(prob.shape(), gm.shape(), "evaluate");

    const int64_t h = prob.extent(1), w = prob.extent(2), plane = h * w;
    const MetricsReport report = evaluate_stack(
        prob.extent(0),
        [&](int64_t z) {
            FloatArray s({h, w});
            std::copy_n(prob.data() + z * plane, plane, s.data());
            return s;
        },
        [&](int64_t z) {
            MaskArray s({h, w});
            std::copy_n(gm.data() + z * plane, plane, s.data());
            return s;
        },
        static_cast<float>(threshold));

    const fs::path out(c.out_dir);
    {
        std::ofstream per(out / "per_slice.csv");
        per << "slice,dice,matthews,auc,both_empty\n";
        for (size_t z = 0; z < report.slices.size(); ++z) {
            const SliceMetrics& s = report.slices[z];
            per << z << "," << s.dice << "," << s.matthews << "," << s.auc << ","
                << (s.both_empty ? 1 : 0) << "\n";
        }
    }
    ConfigFile rep;
    rep.set("", "command", "evaluate");
    rep.set("evaluate", "pred", pred);
    rep.set("evaluate", "gold", gold);
    rep.set_double("evaluate", "threshold", threshold);
    rep.set_double("report", "dice_mean", report.dice.mean);
    rep.set_double("report", "dice_std", report.dice.std);
    rep.set_double("report", "matthews_mean", report.matthews.mean);
    rep.set_double("report", "matthews_std", report.matthews.std);
    rep.set_double("report", "auc_mean", report.auc.mean);
    rep.set_double("report", "dice_total", dice(report.total));
    rep.set_double("report", "matthews_total", matthews(report.total));
    write_config(rep, out / "report.cfg");
    write_manifest(c, rep);
    std::cout << "evaluate: dice " << report.dice.mean << " +/- " << report.dice.std
              << ", matthews " << report.matthews.mean << ", auc " << report.auc.mean << "\n";
    return 0;
}

// ------------------------------------------------------------------- report

int cmd_report(CLI::App* cmd, Common& c, std::vector<std::string>& runs) {
    finish_common(cmd, c);
    ConfigFile combined;
    combined.set("", "command", "report");
    std::cout << "run,dice_mean,dice_std,matthews_mean,auc_mean\n";
    for (const std::string& run : runs) {
        const ConfigFile r = parse_config(fs::path(run) / "report.cfg");
        const std::string name = fs::path(run).filename().string();
        std::cout << name << "," << r.get("report", "dice_mean", "nan") << ","
                  << r.get("report", "dice_std", "nan") << ","
                  << r.get("report", "matthews_mean", "nan") << ","
                  << r.get("report", "auc_mean", "nan") << "\n";
        for (const char* key : {"dice_mean", "dice_std", "matthews_mean", "matthews_std",
                                "auc_mean", "dice_total", "matthews_total"})
            combined.set(name, key, r.get("report", key, "nan"));
    }
    write_config(combined, fs::path(c.out_dir) / "combined_report.cfg");
    write_manifest(c, combined);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fiber segmentation toolkit for microCT volumes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // phantom
    Common c_ph;
    PhantomConfig pc;
    std::vector<int64_t> defects;
    CLI::App* ph = app.add_subcommand("phantom", "generate a synthetic fiber volume with gold");
    add_common(ph, c_ph);
    ph->add_option("--fibers", pc.n_fibers, "number of fibers");
    ph->add_option("--radius-min", pc.radius_min, "min fiber radius, px");
    ph->add_option("--radius-max", pc.radius_max, "max fiber radius, px");
    ph->add_option("--depth", pc.depth, "slices");
    ph->add_option("--size", pc.size, "slice edge, px");
    ph->add_option("--noise", pc.noise_sigma, "gaussian noise sigma");
    ph->add_option("--defect-slice", defects, "slice indices to wipe out");

    // train
    Common c_tr;
    std::string arch_id = "unet2d", data_dir, optimizer = "adam";
    nn::TrainConfig tc;
    double val_fraction = 0.2;
    bool no_augment = false;
    int64_t patch = 16, base_opt = 0;
    int depth_opt = 0;
    CLI::App* tr = app.add_subcommand("train", "train a network on a phantom/gold directory");
    add_common(tr, c_tr);
    tr->add_option("--arch", arch_id, "unet2d|unet3d|tiramisu2d|tiramisu3d");
    tr->add_option("--data", data_dir, "directory with volume.raw + gold_mask.raw");
    tr->add_option("--epochs", tc.epochs, "training epochs");
    tr->add_option("--batch-size", tc.batch_size, "batch size");
    tr->add_option("--learning-rate", tc.learning_rate, "learning rate");
    tr->add_option("--optimizer", optimizer, "adam|rmsprop");
    tr->add_option("--val-fraction", val_fraction, "validation split fraction");
    tr->add_flag("--no-augment", no_augment, "disable geometric augmentation");
    tr->add_option("--patch", patch, "3D training cube edge");
    tr->add_option("--depth", depth_opt, "override architecture depth");
    tr->add_option("--base-channels", base_opt, "override first-level channels");

    // predict
    Common c_pr;
    std::string p_arch, p_weights, p_input;
    PredictConfig pcfg;
    int64_t tile_size = 0, stride = 0;
    bool no_auto_pad = false, want_binary = false, want_labels = false;
    CLI::App* pr = app.add_subcommand("predict", "run tiled inference over a volume");
    add_common(pr, c_pr);
    pr->add_option("--arch", p_arch, "expected architecture id (checked against weights)");
    pr->add_option("--weights", p_weights, "weight file");
    pr->add_option("--input", p_input, "volume.raw or slice directory");
    pr->add_option("--threshold", pcfg.threshold, "binarization threshold");
    pr->add_option("--tile-size", tile_size, "tile edge (default 288 2D / 64 3D)");
    pr->add_option("--stride", stride, "tile stride (default 256 2D / 32 3D)");
    pr->add_flag("--no-auto-pad", no_auto_pad, "fail instead of padding to a valid geometry");
    pr->add_flag("--binary", want_binary, "also write the thresholded mask");
    pr->add_flag("--label", want_labels, "also write instance labels and stats");

    // segment-classic
    Common c_cl;
    std::string cl_input;
    ClassicParams params;
    CLI::App* cl = app.add_subcommand("segment-classic",
                                      "histogram equalization + TV + multi-Otsu + WUSEM");
    add_common(cl, c_cl);
    cl->add_option("--input", cl_input, "volume.raw or slice directory");
    cl->add_option("--tv-weight", params.tv_weight, "TV denoising weight");
    cl->add_option("--otsu-classes", params.otsu_classes, "multi-Otsu class count");
    cl->add_option("--initial-radius", params.wusem_initial_radius, "WUSEM initial radius");
    cl->add_option("--delta-radius", params.wusem_delta_radius, "WUSEM radius step");
    bool no_ws_line = false;
    cl->add_flag("--no-watershed-line", no_ws_line, "do not carve watershed lines");

    // evaluate
    Common c_ev;
    std::string ev_pred, ev_gold;
    double ev_threshold = 0.5;
    CLI::App* ev = app.add_subcommand("evaluate", "score a probability volume against gold");
    add_common(ev, c_ev);
    ev->add_option("--pred", ev_pred, "probability volume (prob.raw)");
    ev->add_option("--gold", ev_gold, "gold mask volume (U8 raw)");
    ev->add_option("--threshold", ev_threshold, "binarization threshold");

    // report
    Common c_rp;
    std::vector<std::string> runs;
    CLI::App* rp = app.add_subcommand("report", "aggregate evaluate outputs");
    add_common(rp, c_rp);
    rp->add_option("--run", runs, "evaluate output directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors
    }

    try {
        if (ph->parsed()) return cmd_phantom(ph, c_ph, pc, defects);
        if (tr->parsed())
            return cmd_train(tr, c_tr, arch_id, data_dir, tc, optimizer, val_fraction, no_augment,
                             patch, depth_opt, base_opt);
        if (pr->parsed())
            return cmd_predict(pr, c_pr, p_arch, p_weights, p_input, pcfg, tile_size, stride,
                               no_auto_pad, want_binary, want_labels);
        if (cl->parsed()) {
            if (no_ws_line) params.watershed_line = false;
            return cmd_classic(cl, c_cl, cl_input, params);
        }
        if (ev->parsed()) return cmd_evaluate(ev, c_ev, ev_pred, ev_gold, ev_threshold);
        if (rp->parsed()) return cmd_report(rp, c_rp, runs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
