#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fiberseg/arch.hpp"
#include "fiberseg/augment.hpp"
#include "fiberseg/classic.hpp"
#include "fiberseg/metrics.hpp"
#include "fiberseg/phantom.hpp"
#include "fiberseg/predictor.hpp"
#include "fiberseg/volume.hpp"

namespace py = pybind11;
using namespace fiberseg;

namespace {

template <typename T>
NdArray<T> from_numpy(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    NdArray<T> out(shape);
    std::copy_n(a.data(), out.size(), out.data());
    return out;
}

template <typename T>
py::array_t<T> to_numpy(const NdArray<T>& a) {
    std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
    py::array_t<T> out(shape);
    std::copy_n(a.data(), a.size(), out.mutable_data());
    return out;
}

using FArr = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MArr = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

ConfusionCounts confusion_np(const MArr& pred, const MArr& gold) {
    return confusion(from_numpy<uint8_t>(pred), from_numpy<uint8_t>(gold));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fiber segmentation core: classic pipeline, FCN inference, metrics";

    py::register_exception<Error>(m, "FibersegError");

    // ---- classic pipeline
    m.def(
        "equalize_histogram",
        [](const FArr& f, int bins) { return to_numpy(equalize_histogram(from_numpy<float>(f), bins)); },
        py::arg("image"), py::arg("bins") = 256);
    m.def(
        "denoise_tv",
        [](const FArr& f, float weight, int max_iter, float tol) {
            return to_numpy(denoise_tv_chambolle(from_numpy<float>(f), weight, max_iter, tol).field);
        },
        py::arg("image"), py::arg("weight") = 0.3f, py::arg("max_iter") = 200,
        py::arg("tol") = 2e-4f);
    m.def(
        "multi_otsu",
        [](const FArr& f, int classes) { return multi_otsu(from_numpy<float>(f), classes); },
        py::arg("image"), py::arg("classes") = 4);
    m.def(
        "wusem",
        [](const MArr& mask, int initial_radius, int delta_radius, bool watershed_line) {
            return to_numpy(
                wusem(from_numpy<uint8_t>(mask), initial_radius, delta_radius, watershed_line));
        },
        py::arg("mask"), py::arg("initial_radius") = 0, py::arg("delta_radius") = 2,
        py::arg("watershed_line") = true);
    m.def(
        "segment_classic",
        [](const FArr& slice, float tv_weight, int otsu_classes, int initial_radius,
           int delta_radius, bool watershed_line) {
            ClassicParams p;
            p.tv_weight = tv_weight;
            p.otsu_classes = otsu_classes;
            p.wusem_initial_radius = initial_radius;
            p.wusem_delta_radius = delta_radius;
            p.watershed_line = watershed_line;
            return to_numpy(segment_classic(from_numpy<float>(slice), p));
        },
        py::arg("slice"), py::arg("tv_weight") = 0.3f, py::arg("otsu_classes") = 4,
        py::arg("initial_radius") = 0, py::arg("delta_radius") = 2,
        py::arg("watershed_line") = true);

    // ---- metrics
    m.def(
        "dice",
        [](const MArr& pred, const MArr& gold) { return dice(confusion_np(pred, gold)); },
        py::arg("pred"), py::arg("gold"));
    m.def(
        "matthews",
        [](const MArr& pred, const MArr& gold) { return matthews(confusion_np(pred, gold)); },
        py::arg("pred"), py::arg("gold"));
    m.def(
        "roc_auc",
        [](const FArr& scores, const MArr& gold) {
            return roc_auc(from_numpy<float>(scores), from_numpy<uint8_t>(gold)).second;
        },
        py::arg("scores"), py::arg("gold"));

    // ---- phantom
    m.def(
        "make_phantom",
        [](int n_fibers, double radius_min, double radius_max, int64_t depth, int64_t size,
           float noise, const std::vector<int64_t>& defect_slices, uint64_t seed) {
            PhantomConfig cfg;
            cfg.n_fibers = n_fibers;
            cfg.radius_min = radius_min;
            cfg.radius_max = radius_max;
            cfg.depth = depth;
            cfg.size = size;
            cfg.noise_sigma = noise;
            cfg.defect_slices = defect_slices;
            cfg.seed = seed;
            const Phantom p = make_phantom(cfg);
            py::dict out;
            out["volume"] = to_numpy(p.volume);
            out["gold_mask"] = to_numpy(p.gold_mask);
            out["gold_labels"] = to_numpy(p.gold_labels);
            return out;
        },
        py::arg("n_fibers") = 200, py::arg("radius_min") = 6.5, py::arg("radius_max") = 10.0,
        py::arg("depth") = 64, py::arg("size") = 512, py::arg("noise") = 0.05f,
        py::arg("defect_slices") = std::vector<int64_t>{}, py::arg("seed") = 0);

    // ---- training + prediction
    m.def(
        "train_network",
        [](const std::string& arch, const FArr& volume, const MArr& gold,
           const std::string& weights_out, int epochs, int batch_size, float learning_rate,
           const std::string& optimizer, uint64_t seed, int depth, int64_t base_channels,
           bool augment) {
            ArchSpec spec = ArchSpec::from_id(arch, seed);
            if (depth > 0) spec.depth = depth;
            if (base_channels > 0) spec.base_channels = base_channels;
            nn::Network net = build(spec);

            const FloatArray vol = from_numpy<float>(volume);
            const MaskArray gm = from_numpy<uint8_t>(gold);
            require_same_shape(vol.shape(), gm.shape(), "train_network");
            if (vol.rank() != 3) throw ShapeMismatch("train_network: expected a (d, h, w) volume");

            nn::Dataset data;
            const int64_t plane = vol.extent(1) * vol.extent(2);
            if (spec.dims == 2) {
                for (int64_t z = 0; z < vol.extent(0); ++z) {
                    nn::Tensor x({1, vol.extent(1), vol.extent(2)});
                    nn::Tensor y(x.shape());
                    std::copy_n(vol.data() + z * plane, plane, x.data());
                    for (int64_t i = 0; i < plane; ++i) y[i] = gm[z * plane + i] ? 1.0f : 0.0f;
                    data.inputs.push_back(std::move(x));
                    data.targets.push_back(std::move(y));
                }
            } else {
                nn::Tensor x({1, vol.extent(0), vol.extent(1), vol.extent(2)});
                nn::Tensor y(x.shape());
                std::copy_n(vol.data(), vol.size(), x.data());
                for (int64_t i = 0; i < vol.size(); ++i) y[i] = gm[i] ? 1.0f : 0.0f;
                data.inputs.push_back(std::move(x));
                data.targets.push_back(std::move(y));
            }

            nn::TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.learning_rate = learning_rate;
            cfg.optimizer = optimizer == "rmsprop" ? nn::Optimizer::RmsProp : nn::Optimizer::Adam;
            cfg.seed = seed;
            nn::AugmentFn fn;
            if (augment) {
                AugmentConfig ac;
                ac.seed = seed;
                fn = make_augment_fn(ac);
            }
            const nn::TrainHistory hist = nn::train(net, data, {}, cfg, fn);
            save_weights(net, spec, weights_out);
            return hist.epochs.empty() ? 0.0 : hist.epochs.back().loss;
        },
        py::arg("arch"), py::arg("volume"), py::arg("gold"), py::arg("weights_out"),
        py::arg("epochs") = 5, py::arg("batch_size") = 4, py::arg("learning_rate") = 1e-4f,
        py::arg("optimizer") = "adam", py::arg("seed") = 0, py::arg("depth") = 0,
        py::arg("base_channels") = 0, py::arg("augment") = false);

    m.def(
        "predict",
        [](const std::string& weights, const FArr& volume, int64_t tile, int64_t stride,
           bool auto_pad) {
            auto [net, spec] = load_weights(weights);
            PredictConfig cfg;
            cfg.auto_pad = auto_pad;
            if (tile > 0 && stride > 0)
                cfg.tile = spec.dims == 2 ? TileSpec::square2d(tile, stride)
                                          : TileSpec::cube3d(tile, stride);
            return to_numpy(predict_volume(net, spec.dims, from_numpy<float>(volume), cfg));
        },
        py::arg("weights"), py::arg("volume"), py::arg("tile") = 0, py::arg("stride") = 0,
        py::arg("auto_pad") = true);

    m.def(
        "label_instances",
        [](const MArr& mask, double spacing_um) {
            const Instances inst = label_instances(from_numpy<uint8_t>(mask), spacing_um);
            py::list stats;
            for (const InstanceStats& s : inst.stats) {
                py::dict d;
                d["label"] = s.label;
                d["voxels"] = s.voxels;
                d["centroid"] = py::make_tuple(s.cz, s.cy, s.cx);
                d["equiv_radius"] = s.equiv_radius;
                stats.append(d);
            }
            return py::make_tuple(to_numpy(inst.labels), stats);
        },
        py::arg("mask"), py::arg("spacing_um") = 1.0);

    m.attr("__version__") = "1.0.0";
}
