#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <cstring>

#include "multidepth/config.hpp"
#include "multidepth/formats.hpp"
#include "multidepth/geometry.hpp"
#include "multidepth/metrics.hpp"
#include "multidepth/mrcm.hpp"
#include "multidepth/pipeline.hpp"
#include "multidepth/sampling.hpp"
#include "multidepth/synth.hpp"

namespace py = pybind11;
using namespace multidepth;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Depth crosses the boundary as float32 HxW; 0, negative or non-finite means invalid.
DepthMap to_depth(const FloatArray& a) {
    if (a.ndim() != 2) throw py::value_error("depth must be a 2-D array");
    DepthMap d(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    const float* p = a.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (std::isfinite(p[i]) && p[i] > 0) {
            d.depth[i] = p[i];
            d.valid[i] = 1;
        }
    }
    return d;
}

FloatArray from_depth(const DepthMap& d) {
    FloatArray a({d.height, d.width});
    float* p = a.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) p[i] = d.valid[i] ? d.depth[i] : 0.0f;
    return a;
}

// Images are float32 CxHxW in [0, 1]; HxW is read as one channel.
ImageTensor to_image(const FloatArray& a) {
    if (a.ndim() == 2) {
        std::vector<float> v(a.data(), a.data() + a.size());
        return ImageTensor(1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), std::move(v));
    }
    if (a.ndim() != 3) throw py::value_error("image must be a 2-D or 3-D (C, H, W) array");
    std::vector<float> v(a.data(), a.data() + a.size());
    return ImageTensor(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                       std::move(v));
}

FloatArray from_image(const ImageTensor& img) {
    FloatArray a({img.channels(), img.height(), img.width()});
    std::memcpy(a.mutable_data(), img.data().data(), img.data().size() * sizeof(float));
    return a;
}

CameraIntrinsics to_intrinsics(const py::dict& k) {
    CameraIntrinsics K{k["fx"].cast<double>(), k["fy"].cast<double>(), k["cx"].cast<double>(), k["cy"].cast<double>()};
    K.validate();
    return K;
}

py::dict from_intrinsics(const CameraIntrinsics& K) {
    py::dict d;
    d["fx"] = K.fx;
    d["fy"] = K.fy;
    d["cx"] = K.cx;
    d["cy"] = K.cy;
    return d;
}

py::array_t<double> points_array(const PointCloud& pc) {
    py::array_t<double> a({static_cast<py::ssize_t>(pc.size()), py::ssize_t{3}});
    double* p = a.mutable_data();
    for (const auto& q : pc.points) {
        *p++ = q.x;
        *p++ = q.y;
        *p++ = q.z;
    }
    return a;
}

PointCloud to_cloud(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error("points must have shape (N, 3)");
    PointCloud pc;
    const double* p = a.data();
    for (py::ssize_t i = 0; i < a.shape(0); ++i) pc.points.push_back({p[3 * i], p[3 * i + 1], p[3 * i + 2]});
    return pc;
}

MaskSet to_masks(const std::optional<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>& a) {
    MaskSet ms;
    if (!a) return ms;
    if (a->ndim() != 3) throw py::value_error("masks must have shape (M, H, W)");
    const int m = static_cast<int>(a->shape(0)), h = static_cast<int>(a->shape(1)), w = static_cast<int>(a->shape(2));
    ms.height = h;
    ms.width = w;
    const std::uint8_t* p = a->data();
    for (int i = 0; i < m; ++i) {
        Mask mk(h, w);
        for (std::size_t j = 0; j < mk.bits.size(); ++j) mk.bits[j] = p[static_cast<std::size_t>(i) * h * w + j] ? 1 : 0;
        char id[16];
        std::snprintf(id, sizeof(id), "%04d", i);
        ms.add(id, std::move(mk));
    }
    return ms;
}

py::dict report_dict(const MetricsReport& r) {
    py::dict d;
    for (std::size_t i = 0; i < kDeltaExponents.size(); ++i) {
        char key[32];
        std::snprintf(key, sizeof(key), "delta_%g", kDeltaExponents[i]);
        d[key] = r.delta[i];
    }
    d["si_log"] = r.si_log;
    d["abs_rel"] = r.abs_rel;
    d["rmse"] = r.rmse;
    d["f_score"] = r.f_score;
    d["valid_pixels"] = r.valid_pixel_count;
    return d;
}

PipelineConfig config_from(const std::optional<std::string>& toml_text, const std::string& preset) {
    return toml_text ? parse_config(*toml_text, preset) : preset_config(preset);
}

} // namespace

PYBIND11_MODULE(_multidepth, m) {
    m.doc() = "Multi-view consistent depth refinement";

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            error(e.what());
        }
    });

    m.def("pixel_unshuffle", [](const FloatArray& img, int s) {
        std::vector<FloatArray> out;
        for (const auto& sub : pixel_unshuffle(to_image(img), s)) out.push_back(from_image(sub));
        return out;
    }, py::arg("image"), py::arg("s"), "Split a (C, H, W) image into s*s sub-images.");

    m.def("pixel_shuffle", [](const std::vector<FloatArray>& subs, int s) {
        std::vector<ImageTensor> v;
        for (const auto& a : subs) v.push_back(to_image(a));
        return from_image(pixel_shuffle(v, s));
    }, py::arg("subs"), py::arg("s"));

    m.def("mean_of_k_medians", &mean_of_k_medians, py::arg("values"), py::arg("k") = 3);

    m.def("aggregate", [](const FloatArray& layers, int k) {
        if (layers.ndim() != 3) throw py::value_error("layers must have shape (L, H, W)");
        const int L = static_cast<int>(layers.shape(0)), H = static_cast<int>(layers.shape(1)),
                  W = static_cast<int>(layers.shape(2));
        PredictionStack stack;
        stack.height = H;
        stack.width = W;
        for (int l = 0; l < L; ++l) {
            Layer layer;
            layer.kind = l == 0 ? SampleKind::Full : SampleKind::Crop;
            FloatArray plane({H, W});
            std::memcpy(plane.mutable_data(), layers.data() + static_cast<std::size_t>(l) * H * W,
                        sizeof(float) * H * W);
            layer.depth = to_depth(plane);
            layer.coverage = Mask(H, W);
            layer.coverage.bits = layer.depth.valid;
            stack.layers.push_back(std::move(layer));
        }
        MrcmConfig cfg;
        cfg.k = k;
        return from_depth(aggregate(stack, cfg));
    }, py::arg("layers"), py::arg("k") = 3,
       "Per-pixel mean-of-k-medians over (L, H, W) layers; layer 0 is the full prediction, 0 marks no prediction.");

    m.def("unproject", [](const FloatArray& depth, const py::dict& K, double scale) {
        return points_array(unproject(to_depth(depth), to_intrinsics(K), scale));
    }, py::arg("depth"), py::arg("K"), py::arg("scale") = 1.0);

    m.def("f_score", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
                        const py::array_t<double, py::array::c_style | py::array::forcecast>& gt, double tau) {
        return f_score(to_cloud(pred), to_cloud(gt), tau);
    }, py::arg("pred"), py::arg("gt"), py::arg("tau"));

    m.def("delta_threshold", [](const FloatArray& p, const FloatArray& g, double t) {
        return delta_threshold(to_depth(p), to_depth(g), t);
    }, py::arg("pred"), py::arg("gt"), py::arg("t"));
    m.def("si_log", [](const FloatArray& p, const FloatArray& g) { return si_log(to_depth(p), to_depth(g)); },
          py::arg("pred"), py::arg("gt"));
    m.def("evaluate", [](const FloatArray& p, const FloatArray& g, const py::dict& K, double tau) {
        return report_dict(evaluate(to_depth(p), to_depth(g), to_intrinsics(K), tau));
    }, py::arg("pred"), py::arg("gt"), py::arg("K"), py::arg("tau") = 0.25);

    m.def("generate_scene", [](std::uint64_t seed, int width, int height) {
        SceneSpec spec = preset_config("desk").synth;
        spec.width = width;
        spec.height = height;
        Rng rng = Rng(seed).derive(0);
        const Scene s = generate_scene(spec, rng);
        py::dict d;
        d["rgb"] = from_image(s.rgb);
        d["depth"] = from_depth(s.depth);
        d["K"] = from_intrinsics(s.K);
        py::array_t<std::uint8_t> masks({static_cast<py::ssize_t>(s.masks.size()), py::ssize_t{height}, py::ssize_t{width}});
        std::uint8_t* mp = masks.mutable_data();
        for (const auto& mk : s.masks.masks) mp = std::copy(mk.bits.begin(), mk.bits.end(), mp);
        d["masks"] = masks;
        return d;
    }, py::arg("seed") = 0, py::arg("width") = 64, py::arg("height") = 64);

    m.def("default_config", [](const std::string& preset) { return serialize_config(preset_config(preset)); },
          py::arg("preset") = "desk", "TOML text of a preset.");

    m.def("refine", [](const FloatArray& rgb, const FloatArray& depth, std::optional<std::filesystem::path> weights,
                       int iterations, std::uint64_t seed,
                       std::optional<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>> masks,
                       std::optional<std::string> config, const std::string& preset) {
        const PipelineConfig cfg = config_from(config, preset);
        const RNetWeights w = weights ? rnet_from_weights_file(load_weights(*weights)) : zero_weights<float>(cfg.rnet);
        const ImageTensor img = to_image(rgb);
        const DepthMap d = to_depth(depth);
        const MaskSet ms = to_masks(masks);
        DepthMap out;
        {
            py::gil_scoped_release release;
            out = refine_iterations(w, img, d, ms, cfg, seed, iterations);
        }
        return from_depth(out);
    }, py::arg("rgb"), py::arg("depth"), py::arg("weights") = py::none(), py::arg("iterations") = 5,
       py::arg("seed") = 0, py::arg("masks") = py::none(), py::arg("config") = py::none(), py::arg("preset") = "desk",
       "Run MRCM refinement cycles. Without weights the refiner is the identity.");

    m.def("load_depth", [](const std::filesystem::path& p) { return from_depth(load_depth(p)); }, py::arg("path"));
    m.def("save_depth", [](const std::filesystem::path& p, const FloatArray& d) { save_depth(p, to_depth(d)); },
          py::arg("path"), py::arg("depth"));
}
