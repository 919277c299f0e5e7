#include "fiberseg/volume.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

namespace fiberseg {

namespace fs = std::filesystem;

size_t dtype_size(DType d) {
    switch (d) {
        case DType::U8: return 1;
        case DType::U16: return 2;
        case DType::F32: return 4;
        case DType::I32: return 4;
    }
    return 0;
}

const char* dtype_name(DType d) {
    switch (d) {
        case DType::U8: return "uint8";
        case DType::U16: return "uint16";
        case DType::F32: return "float32";
        case DType::I32: return "int32";
    }
    return "?";
}

DType dtype_from_name(const std::string& name) {
    if (name == "uint8") return DType::U8;
    if (name == "uint16") return DType::U16;
    if (name == "float32") return DType::F32;
    if (name == "int32") return DType::I32;
    throw CorruptFile("unknown dtype: " + name);
}

void Volume::validate() const {
    if (shape[0] < 1 || shape[1] < 1 || shape[2] < 1)
        throw ShapeMismatch("Volume: all shape components must be >= 1");
    if (bytes.size() != static_cast<size_t>(voxels()) * dtype_size(dtype))
        throw ShapeMismatch("Volume: byte count does not match shape*dtype");
}

namespace {

void normalize_into(const uint8_t* src, DType dtype, int64_t n, float* dst) {
    switch (dtype) {
        case DType::U8:
            for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
            break;
        case DType::U16: {
            const uint16_t* s = reinterpret_cast<const uint16_t*>(src);
            for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(s[i]) / 65535.0f;
            break;
        }
        case DType::F32: {
            const float* s = reinterpret_cast<const float*>(src);
            std::copy_n(s, n, dst);
            break;
        }
        case DType::I32:
            throw ShapeMismatch("cannot normalize int32 labels as image data");
    }
}

}  // namespace

FloatArray Volume::slice_float(int64_t z) const {
    if (z < 0 || z >= shape[0]) throw IndexOutOfRange("Volume::slice_float: z out of range");
    FloatArray out({shape[1], shape[2]});
    const size_t es = dtype_size(dtype);
    const uint8_t* src = bytes.data() + static_cast<size_t>(z * shape[1] * shape[2]) * es;
    normalize_into(src, dtype, shape[1] * shape[2], out.data());
    return out;
}

FloatArray Volume::as_float() const {
    FloatArray out({shape[0], shape[1], shape[2]});
    normalize_into(bytes.data(), dtype, voxels(), out.data());
    return out;
}

Volume Volume::from_float(const FloatArray& vol3d, DType dtype, double spacing_um,
                          const std::string& name) {
    if (vol3d.rank() != 3) throw ShapeMismatch("from_float: expects a 3D field");
    Volume v;
    v.shape = {vol3d.extent(0), vol3d.extent(1), vol3d.extent(2)};
    v.dtype = dtype;
    v.spacing_um = spacing_um;
    v.name = name;
    const int64_t n = vol3d.size();
    v.bytes.resize(static_cast<size_t>(n) * dtype_size(dtype));
    switch (dtype) {
        case DType::U8: {
            uint8_t* d = v.bytes.data();
            for (int64_t i = 0; i < n; ++i)
                d[i] = static_cast<uint8_t>(std::lround(std::clamp(vol3d[i], 0.0f, 1.0f) * 255.0f));
            break;
        }
        case DType::U16: {
            uint16_t* d = reinterpret_cast<uint16_t*>(v.bytes.data());
            for (int64_t i = 0; i < n; ++i)
                d[i] = static_cast<uint16_t>(std::lround(std::clamp(vol3d[i], 0.0f, 1.0f) * 65535.0f));
            break;
        }
        case DType::F32:
            std::memcpy(v.bytes.data(), vol3d.data(), static_cast<size_t>(n) * 4);
            break;
        case DType::I32:
            throw ShapeMismatch("from_float: int32 is for label maps");
    }
    return v;
}

namespace {

bool glob_match(const std::string& pattern, const std::string& text) {
    // '*' wildcard only
    std::string re;
    for (char c : pattern) {
        if (c == '*') re += ".*";
        else if (std::string("\\^$.|?+()[]{}").find(c) != std::string::npos) { re += '\\'; re += c; }
        else re += c;
    }
    return std::regex_match(text, std::regex(re));
}

struct SliceHeader {
    int64_t height, width;
    DType dtype;
};

SliceHeader probe_slice(const fs::path& p) {
    cv::Mat img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw IoError("cannot read slice image: " + p.string());
    if (img.channels() != 1) throw InconsistentSliceShape("slice is not grayscale: " + p.string());
    DType d;
    if (img.depth() == CV_8U) d = DType::U8;
    else if (img.depth() == CV_16U) d = DType::U16;
    else throw InconsistentSliceShape("unsupported slice bit depth: " + p.string());
    return {img.rows, img.cols, d};
}

}  // namespace

SliceStackSource open_stack(const fs::path& dir, const std::string& pattern) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    SliceStackSource src;
    src.directory = dir;
    src.pattern = pattern;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        if (glob_match(pattern, e.path().filename().string()))
            src.files.push_back(e.path());
    }
    if (src.files.empty())
        throw NoSlicesFound("no slices matching '" + pattern + "' in " + dir.string());
    std::sort(src.files.begin(), src.files.end());
    auto hdr = probe_slice(src.files.front());
    src.height = hdr.height;
    src.width = hdr.width;
    src.dtype = hdr.dtype;
    return src;
}

void read_slice_raw(const SliceStackSource& src, int64_t z, std::vector<uint8_t>& out, DType& dtype) {
    if (z < 0 || z >= src.depth()) throw IndexOutOfRange("read_slice: z out of range");
    const fs::path& p = src.files[static_cast<size_t>(z)];
    cv::Mat img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw IoError("cannot read slice image: " + p.string());
    auto hdr = probe_slice(p);
    if (hdr.height != src.height || hdr.width != src.width || hdr.dtype != src.dtype)
        throw InconsistentSliceShape("slice shape/dtype differs from first slice: " + p.string());
    dtype = hdr.dtype;
    const size_t es = dtype_size(hdr.dtype);
    out.resize(static_cast<size_t>(hdr.height * hdr.width) * es);
    if (!img.isContinuous()) img = img.clone();
    std::memcpy(out.data(), img.data, out.size());
}

FloatArray read_slice(const SliceStackSource& src, int64_t z) {
    std::vector<uint8_t> raw;
    DType d;
    read_slice_raw(src, z, raw, d);
    FloatArray out({src.height, src.width});
    normalize_into(raw.data(), d, src.height * src.width, out.data());
    return out;
}

Volume read_stack(const SliceStackSource& src) {
    Volume v;
    v.shape = src.shape();
    v.dtype = src.dtype;
    v.name = src.directory.filename().string();
    const size_t slice_bytes = static_cast<size_t>(src.height * src.width) * dtype_size(src.dtype);
    v.bytes.resize(slice_bytes * static_cast<size_t>(src.depth()));
    std::vector<uint8_t> raw;
    DType d;
    for (int64_t z = 0; z < src.depth(); ++z) {
        read_slice_raw(src, z, raw, d);
        std::memcpy(v.bytes.data() + slice_bytes * static_cast<size_t>(z), raw.data(), slice_bytes);
    }
    return v;
}

namespace {

void write_sidecar(const fs::path& meta, const std::array<int64_t, 3>& shape, DType dtype,
                   double spacing_um) {
    std::ofstream f(meta);
    if (!f) throw IoError("cannot write sidecar: " + meta.string());
    f << "shape=" << shape[0] << " " << shape[1] << " " << shape[2] << "\n"
      << "dtype=" << dtype_name(dtype) << "\n"
      << "order=zyx\n"
      << "endianness=little\n"
      << "spacing_um=" << spacing_um << "\n";
}

std::map<std::string, std::string> read_sidecar(const fs::path& meta) {
    std::ifstream f(meta);
    if (!f) throw IoError("cannot read sidecar: " + meta.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

void write_blob(const fs::path& path, const uint8_t* data, size_t n) {
    // write to temp, rename on success
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write: " + path.string());
        f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!f) throw IoError("short write: " + path.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

void write_volume_raw(const Volume& vol, const fs::path& path) {
    vol.validate();
    write_blob(path, vol.bytes.data(), vol.bytes.size());
    write_sidecar(fs::path(path.string() + ".meta"), vol.shape, vol.dtype, vol.spacing_um);
}

Volume read_volume_raw(const fs::path& path) {
    auto kv = read_sidecar(fs::path(path.string() + ".meta"));
    Volume v;
    std::istringstream ss(kv.at("shape"));
    ss >> v.shape[0] >> v.shape[1] >> v.shape[2];
    v.dtype = dtype_from_name(kv.at("dtype"));
    if (kv.count("spacing_um")) v.spacing_um = std::stod(kv.at("spacing_um"));
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read: " + path.string());
    const size_t expect = static_cast<size_t>(v.voxels()) * dtype_size(v.dtype);
    v.bytes.resize(expect);
    f.read(reinterpret_cast<char*>(v.bytes.data()), static_cast<std::streamsize>(expect));
    if (static_cast<size_t>(f.gcount()) != expect)
        throw CorruptFile("raw volume shorter than sidecar shape: " + path.string());
    v.name = path.stem().string();
    return v;
}

void write_volume_slices(const Volume& vol, const fs::path& dir, const std::string& stem) {
    vol.validate();
    if (vol.dtype == DType::F32 || vol.dtype == DType::I32)
        throw IoError("slice-stack output supports 8/16-bit grayscale only");
    fs::create_directories(dir);
    const int cv_type = vol.dtype == DType::U8 ? CV_8UC1 : CV_16UC1;
    const size_t slice_bytes = static_cast<size_t>(vol.shape[1] * vol.shape[2]) * dtype_size(vol.dtype);
    for (int64_t z = 0; z < vol.shape[0]; ++z) {
        cv::Mat img(static_cast<int>(vol.shape[1]), static_cast<int>(vol.shape[2]), cv_type,
                    const_cast<uint8_t*>(vol.bytes.data() + slice_bytes * static_cast<size_t>(z)));
        std::ostringstream name;
        name << stem << "_";
        name.width(4);
        name.fill('0');
        name << z;
        fs::path out = dir / (name.str() + ".png");
        if (!cv::imwrite(out.string(), img))
            throw IoError("cannot write slice: " + out.string());
    }
}

void write_labels_raw(const LabelArray& labels, const fs::path& path, double spacing_um) {
    if (labels.rank() != 2 && labels.rank() != 3)
        throw ShapeMismatch("write_labels_raw: 2D/3D only");
    std::array<int64_t, 3> shape = labels.rank() == 3
        ? std::array<int64_t, 3>{labels.extent(0), labels.extent(1), labels.extent(2)}
        : std::array<int64_t, 3>{1, labels.extent(0), labels.extent(1)};
    write_blob(path, reinterpret_cast<const uint8_t*>(labels.data()),
               static_cast<size_t>(labels.size()) * 4);
    write_sidecar(fs::path(path.string() + ".meta"), shape, DType::I32, spacing_um);
}

LabelArray read_labels_raw(const fs::path& path) {
    auto kv = read_sidecar(fs::path(path.string() + ".meta"));
    if (dtype_from_name(kv.at("dtype")) != DType::I32)
        throw CorruptFile("label file dtype is not int32: " + path.string());
    std::array<int64_t, 3> shape;
    std::istringstream ss(kv.at("shape"));
    ss >> shape[0] >> shape[1] >> shape[2];
    LabelArray out(shape[0] == 1 ? std::vector<int64_t>{shape[1], shape[2]}
                                 : std::vector<int64_t>{shape[0], shape[1], shape[2]});
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read: " + path.string());
    const size_t expect = static_cast<size_t>(out.size()) * 4;
    f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expect));
    if (static_cast<size_t>(f.gcount()) != expect)
        throw CorruptFile("label file shorter than sidecar shape: " + path.string());
    return out;
}

}  // namespace fiberseg
