// Acceptance gate. Runs each numbered criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit status is nonzero when any
// selected criterion fails.
//
//   acceptance                 run 1..8
//   acceptance --criterion N   run only N (may be repeated)
//   acceptance --workdir DIR   scratch directory (default: a temp dir)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "multidepth/commands.hpp"
#include "multidepth/config.hpp"
#include "multidepth/formats.hpp"
#include "multidepth/geometry.hpp"
#include "multidepth/losses.hpp"
#include "multidepth/metrics.hpp"
#include "multidepth/mrcm.hpp"
#include "multidepth/pipeline.hpp"
#include "multidepth/rnet.hpp"
#include "multidepth/rng.hpp"
#include "multidepth/sampling.hpp"
#include "multidepth/synth.hpp"

using namespace multidepth;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_workdir;

fs::path scratch(const std::string& name) {
    fs::path p = g_workdir / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

ImageTensor random_image(int c, int h, int w, Rng& rng) {
    ImageTensor img(c, h, w);
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
    return img;
}

DepthMap random_depth(int h, int w, Rng& rng, double lo = 0.5, double hi = 5.0) {
    DepthMap d(h, w, 0.0f, true);
    for (auto& v : d.depth) v = static_cast<float>(rng.uniform(lo, hi));
    return d;
}

MaskSet block_masks(int h, int w) {
    MaskSet ms;
    ms.height = h;
    ms.width = w;
    Mask left(h, w), right(h, w), top(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (x < w / 2) left.set(y, x, true); else right.set(y, x, true);
            if (y < h / 3) top.set(y, x, true);
        }
    }
    ms.add("left", left);
    ms.add("right", right);
    ms.add("top", top);
    return ms;
}

// Weights with every tensor drawn at random, including the head.
RNetWeights random_weights(const RNetConfig& cfg, Rng& rng, double scale) {
    RNetWeights w = zero_weights<float>(cfg);
    for (auto& p : w.params) {
        const double fan_in = p.shape.size() == 4 ? static_cast<double>(p.shape[1] * p.shape[2] * p.shape[3]) : 1.0;
        const double s = p.shape.size() == 4 ? scale / std::sqrt(fan_in) : 0.05 * scale;
        for (auto& v : p.value) v = static_cast<float>(rng.normal(0.0, s));
    }
    return w;
}

// 1: pixel shuffle identity, MRCM oracle, projection roundtrip.
Outcome criterion_1() {
    Rng rng(101);
    bool shuffle_ok = true;
    for (int s : {2, 3, 4}) {
        for (int trial = 0; trial < 100; ++trial) {
            const int c = 1 + static_cast<int>(rng.uniform_int(3));
            const int h = s * (1 + static_cast<int>(rng.uniform_int(8)));
            const int w = s * (1 + static_cast<int>(rng.uniform_int(8)));
            const ImageTensor img = random_image(c, h, w, rng);
            if (!(pixel_shuffle(pixel_unshuffle(img, s), s) == img)) shuffle_ok = false;
        }
    }

    // Brute force: explicit sort and window, summed in double in ascending order.
    auto oracle = [](std::vector<float> values, int k) {
        std::sort(values.begin(), values.end());
        const int m = static_cast<int>(values.size());
        const int take = std::min(k, m);
        const int start = m >= k ? (m - k) / 2 : 0;
        double sum = 0.0;
        for (int i = start; i < start + take; ++i) sum += values[i];
        return static_cast<float>(sum / take);
    };
    bool mrcm_ok = true;
    std::size_t multisets = 0;
    for (int k = 1; k <= 5; ++k) {
        const int n = 2000;
        const int max_layers = 12;
        PredictionStack stack;
        stack.height = 1;
        stack.width = n;
        std::vector<int> size(n);
        for (auto& sz : size) sz = 1 + static_cast<int>(rng.uniform_int(max_layers));
        for (int l = 0; l < max_layers; ++l) {
            Layer layer;
            layer.kind = l == 0 ? SampleKind::Full : SampleKind::Crop;
            layer.depth = DepthMap(1, n);
            layer.coverage = Mask(1, n);
            for (int x = 0; x < n; ++x) {
                if (l >= size[x]) continue;
                // Coarse values so that ties occur.
                const double v = rng.uniform() < 0.3 ? 1.0 + 0.25 * static_cast<double>(rng.uniform_int(4))
                                                     : rng.uniform(0.5, 8.0);
                layer.depth.depth[x] = static_cast<float>(v);
                layer.depth.valid[x] = 1;
                layer.coverage.set(0, x, true);
            }
            stack.layers.push_back(std::move(layer));
        }
        MrcmConfig cfg;
        cfg.k = k;
        const DepthMap out = aggregate(stack, cfg);
        for (int x = 0; x < n; ++x) {
            std::vector<float> values;
            for (int l = 0; l < size[x]; ++l) values.push_back(stack.layers[l].depth.depth[x]);
            if (!out.valid[x] || out.depth[x] != oracle(values, k)) mrcm_ok = false;
            ++multisets;
        }
    }

    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        CameraIntrinsics K{rng.uniform(30, 600), rng.uniform(30, 600), rng.uniform(0, 64), rng.uniform(0, 48)};
        const DepthMap d = random_depth(48, 64, rng, 0.3, 20.0);
        const PointCloud pc = unproject(d, K);
        const auto proj = project(pc, K);
        std::size_t i = 0;
        for (int y = 0; y < d.height; ++y) {
            for (int x = 0; x < d.width; ++x, ++i) {
                const auto& p = proj[i];
                worst = std::max({worst, std::abs(p.x - x) / std::max(1.0, static_cast<double>(x)),
                                  std::abs(p.y - y) / std::max(1.0, static_cast<double>(y)),
                                  std::abs(p.depth - d.at(y, x)) / d.at(y, x)});
            }
        }
    }
    const bool roundtrip_ok = worst <= 1e-9;
    return {shuffle_ok && mrcm_ok && roundtrip_ok && multisets == 10000,
            std::string("shuffle ") + (shuffle_ok ? "exact" : "MISMATCH") + ", mrcm " + std::to_string(multisets) +
                " multisets " + (mrcm_ok ? "exact" : "MISMATCH") + ", roundtrip max rel " + fmt("%.2e", worst)};
}

// 2: central finite differences on every parameter through the full objective.
Outcome criterion_2() {
    RNetConfig rc;
    rc.levels = 2;
    rc.base_channels = 8;
    rc.depth_noise_sigma = 0.05;
    rc.residual_clamp = 2.0;
    Rng rng(202);
    const RNetWeights wf = random_weights(rc, rng, 1.0);
    const BasicRNetWeights<double> w = weights_cast<double>(wf);

    const int H = 8, W = 8;
    const ImageTensor rgb = random_image(3, H, W, rng);
    const DepthMap gt = random_depth(H, W, rng, 1.0, 3.0);
    DepthMap depth = gt;
    for (auto& v : depth.depth) v = static_cast<float>(v * std::exp(rng.normal(0.0, 0.15)));
    depth.valid[5] = 0;
    const MaskSet masks = block_masks(H, W);

    SamplerConfig sc;
    sc.s_pud = 2;
    sc.n_r = 3;
    sc.crop_scale_lo = 0.5;
    sc.crop_scale_hi = 0.75;
    sc.n_s = 2;
    LossWeights lw;
    lw.lambda = {0.5, 0.5, 0.85};
    lw.lambda_sample = {1.0, 0.7, 0.4};
    lw.w_sample = 0.8;
    lw.huber_delta = 0.05;  // both Huber branches are active

    ObjectiveInput in;
    in.rgb = &rgb;
    in.depth = &depth;
    in.gt = &gt;
    in.K = {6.4, 6.4, 3.5, 3.5};
    in.masks = &masks;

    auto loss_at = [&](const BasicRNetWeights<double>& ww) {
        Rng r(77);
        return evaluate_objective<double>(ww, in, sc, lw, r, nullptr).total;
    };
    BasicRNetWeights<double> grads = zero_weights<double>(rc);
    {
        Rng r(77);
        evaluate_objective<double>(w, in, sc, lw, r, &grads);
    }

    BasicRNetWeights<double> probe = w;
    const double h = 1e-6;
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
    for (std::size_t p = 0; p < probe.params.size(); ++p) {
        auto& values = probe.params[p].value;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double v0 = values[i];
            values[i] = v0 + h;
            const double up = loss_at(probe);
            values[i] = v0 - h;
            const double down = loss_at(probe);
            values[i] = v0;
            const double numeric = (up - down) / (2 * h);
            const double analytic = grads.params[p].value[i];
            const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            if (rel > worst) {
                worst = rel;
                worst_name = probe.params[p].name + "[" + std::to_string(i) + "]";
            }
            ++checked;
        }
    }
    return {worst <= 1e-4, std::to_string(checked) + " parameters, max rel error " + fmt("%.2e", worst) +
                               (worst_name.empty() ? "" : " at " + worst_name)};
}

// 3: loss identities.
Outcome criterion_3() {
    Rng rng(303);
    // lambda_mse with unit weights against a direct MSE of spherical coordinates.
    double worst_mse = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int H = 12, W = 16;
        const CameraIntrinsics K{rng.uniform(10, 40), rng.uniform(10, 40), rng.uniform(4, 12), rng.uniform(3, 9)};
        BasicDepthMap<double> pred(H, W, 0.0, true), gt(H, W, 0.0, true);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            pred.depth[i] = rng.uniform(0.5, 6.0);
            gt.depth[i] = rng.uniform(0.5, 6.0);
        }
        pred.valid[7] = 0;
        const double value = lambda_mse(pred, gt, K, {1.0, 1.0, 1.0});
        double direct = 0.0;
        std::size_t n = 0;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const std::size_t i = pred.index(y, x);
                if (!pred.valid[i]) continue;
                // Both maps share each pixel's ray: only the z residual is nonzero.
                const double z = std::log(pred.depth[i]) - std::log(gt.depth[i]);
                direct += z * z;
                ++n;
            }
        }
        direct /= static_cast<double>(n);
        worst_mse = std::max(worst_mse, std::abs(value - direct));
    }
    const bool mse_ok = worst_mse <= 1e-10;

    // Consistency terms under the identity refiner with no depth noise.
    RNetConfig rc;
    rc.levels = 3;
    rc.base_channels = 4;
    rc.depth_noise_sigma = 0.0;
    const RNetWeights zero = zero_weights<float>(rc);
    const Refiner identity = [&](const ImageTensor& im, const DepthMap& d) {
        Rng r(0);
        return refine(zero, im, d, 0.0, r);
    };
    bool zero_ok = true;
    for (int trial = 0; trial < 5; ++trial) {
        const int H = 24 + static_cast<int>(rng.uniform_int(9)), W = 24 + static_cast<int>(rng.uniform_int(9));
        const ImageTensor rgb = random_image(3, H, W, rng);
        DepthMap d = random_depth(H, W, rng);
        d.valid[3] = 0;
        const MaskSet masks = block_masks(H, W);
        SamplerConfig sc;
        Rng r(trial);
        const SampleBatch batch = build_sample_batch(rgb, d, masks, sc, r);
        std::vector<Sample> crops, segs;
        for (const auto& s : batch.samples) {
            if (s.kind == SampleKind::Crop) crops.push_back(s);
            if (s.kind == SampleKind::Seg) segs.push_back(s);
        }
        const DepthMap full = identity(rgb, d);
        for (int s : {2, 3})
            if (pud_consistency(identity, rgb, d, s, 0.1).value != 0.0) zero_ok = false;
        if (sub_consistency(identity, crops, full, 0.1).value != 0.0) zero_ok = false;
        if (seg_consistency(identity, segs, full, 0.1).value != 0.0) zero_ok = false;

        ObjectiveInput in{&rgb, &d, &d, CameraIntrinsics{20, 20, W / 2.0, H / 2.0}, &masks};
        Rng r2(trial);
        const LossBreakdown lb = evaluate_objective<float>(zero, in, sc, LossWeights{}, r2);
        if (lb.pud != 0.0 || lb.sub != 0.0 || lb.seg != 0.0) zero_ok = false;
    }

    // Huber: both branches meet at |r| = delta, with matching slopes.
    bool huber_ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const double delta = trial == 0 ? 1.0 : std::exp(rng.uniform(-8.0, 4.0));
        const double quad = 0.5 * delta * delta;
        const double lin = delta * (delta - 0.5 * delta);
        if (quad != lin) huber_ok = false;
        if (huber_value(delta, delta) != quad || huber_value(-delta, delta) != quad) huber_ok = false;
        const double above = std::nextafter(delta, 10 * delta);
        if (huber_value(above, delta) < quad) huber_ok = false;
    }
    return {mse_ok && zero_ok && huber_ok, "lambda_mse vs MSE " + fmt("%.1e", worst_mse) + ", consistency " +
                                               (zero_ok ? "exactly 0" : "NONZERO") + ", huber " +
                                               (huber_ok ? "continuous" : "DISCONTINUOUS")};
}

// 4: metric properties.
Outcome criterion_4() {
    Rng rng(404);
    bool mono_ok = true;
    bool scale_ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        const DepthMap gt = random_depth(16, 16, rng);
        DepthMap pred = gt;
        const double spread = rng.uniform(0.01, 0.6);
        for (auto& v : pred.depth) v = static_cast<float>(v * std::exp(rng.normal(0.0, spread)));
        double prev = -1.0;
        for (double t : {0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0}) {
            const double d = delta_threshold(pred, gt, t);
            if (d < prev || d < 0 || d > 1) mono_ok = false;
            prev = d;
        }
        const double base = si_log(pred, gt);
        for (int e : {-6, -3, -1, 1, 2, 5}) {
            DepthMap scaled = pred;
            for (auto& v : scaled.depth) v = std::ldexp(v, e);
            if (si_log(scaled, gt) != base) scale_ok = false;
        }
    }

    bool f_ok = true;
    for (int trial = 0; trial < 5; ++trial) {
        PointCloud a, b;
        for (int i = 0; i < 2000; ++i) {
            a.points.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1, 4)});
            b.points.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1, 4)});
        }
        for (double tau : {0.05, 0.1, 0.25}) {
            if (f_score(a, b, tau) != f_score_exact(a, b, tau)) f_ok = false;
            if (f_score(a, b, tau) != f_score(b, a, tau)) f_ok = false;
        }
    }

    // Ratios just inside and just outside 1.25^0.25.
    bool bound_ok = std::abs(std::pow(1.25, 0.25) - 1.0574) < 1e-4;
    for (double ratio : {1.0, 1.03, 1.057, 1.0573}) {
        for (bool invert : {false, true}) {
            const DepthMap gt = random_depth(8, 8, rng, 1.0, 4.0);
            DepthMap pred = gt;
            for (auto& v : pred.depth) v = static_cast<float>(invert ? v / ratio : v * ratio);
            if (delta_threshold(pred, gt, 0.25) != 1.0) bound_ok = false;
        }
    }
    for (double ratio : {1.0576, 1.06, 1.2}) {
        for (bool invert : {false, true}) {
            const DepthMap gt = random_depth(8, 8, rng, 1.0, 4.0);
            DepthMap pred = gt;
            for (auto& v : pred.depth) v = static_cast<float>(invert ? v / ratio : v * ratio);
            if (delta_threshold(pred, gt, 0.25) != 0.0) bound_ok = false;
        }
    }
    const bool ok = mono_ok && scale_ok && f_ok && bound_ok;
    return {ok, std::string("delta monotone ") + (mono_ok ? "yes" : "NO") + ", si_log scale-invariant " +
                    (scale_ok ? "exact" : "NO") + ", f_score grid == exact " + (f_ok ? "yes" : "NO") +
                    ", 5.7% bound " + (bound_ok ? "yes" : "NO")};
}

// 5: identity fixed point, deterministic files, zero iterations.
Outcome criterion_5() {
    Rng rng(505);
    const int H = 32, W = 40;
    const ImageTensor rgb = random_image(3, H, W, rng);
    DepthMap d = random_depth(H, W, rng);
    d.valid[11] = 0;
    d.depth[11] = 0.0f;
    const MaskSet masks = block_masks(H, W);

    RNetConfig rc;
    rc.levels = 3;
    rc.base_channels = 4;
    rc.depth_noise_sigma = 0.05;
    const RNetWeights zero = zero_weights<float>(rc);
    IterationSetup setup;
    setup.rgb = &rgb;
    setup.masks = &masks;
    setup.weights = &zero;
    setup.noise_sigma = rc.depth_noise_sigma;
    bool fixed_ok = true;
    for (int i = 0; i < 3; ++i) {
        Rng r(static_cast<std::uint64_t>(i));
        if (!(run_iteration(setup, d, r) == d)) fixed_ok = false;
    }

    const fs::path dir = scratch("c5");
    save_image_png(dir / "rgb.png", rgb);
    DepthMap d_mm = d;
    for (auto& v : d_mm.depth) v = static_cast<float>(std::round(v * 1000.0) / 1000.0);
    save_depth(dir / "depth.png", d_mm);
    save_depth(dir / "depth.pfm", d);
    save_intrinsics(dir / "K.json", {30.0, 30.0, W / 2.0, H / 2.0});
    save_masks(masks, dir / "masks");
    Rng wr(9);
    rc.base_channels = 8;
    save_weights(to_weights_file(random_weights(rc, wr, 0.5)), dir / "w.mdpt");

    PipelineConfig cfg = preset_config("desk");
    cfg.seed = 42;
    cfg.iterations = 3;
    std::ostringstream sink;
    auto run = [&](const std::string& prefix, const fs::path& depth, int iterations) {
        PipelineConfig c = cfg;
        c.iterations = iterations;
        RefineArgs a;
        a.image = dir / "rgb.png";
        a.depth = depth;
        a.intrinsics = dir / "K.json";
        a.masks = dir / "masks";
        a.weights = dir / "w.mdpt";
        a.out_prefix = dir / prefix;
        a.ply = true;
        a.dump_iters = true;
        cmd_refine(a, c, sink);
    };
    run("a", dir / "depth.png", 3);
    run("b", dir / "depth.png", 3);
    bool det_ok = true;
    for (const char* f : {".png", ".pfm", ".ply", "_iter01.pfm", "_iter02.png", "_iter03.pfm"}) {
        const auto x = file_bytes(dir / (std::string("a") + f));
        if (x.empty() || x != file_bytes(dir / (std::string("b") + f))) det_ok = false;
    }
    const bool changed = file_bytes(dir / "a.pfm") != file_bytes(dir / "depth.pfm");

    run("z", dir / "depth.png", 0);
    run("y", dir / "depth.pfm", 0);
    const bool zero_ok = file_bytes(dir / "z.png") == file_bytes(dir / "depth.png") &&
                         load_depth(dir / "y.pfm") == d && file_bytes(dir / "y.pfm") == file_bytes(dir / "depth.pfm");
    const bool ok = fixed_ok && det_ok && changed && zero_ok;
    return {ok, std::string("fixed point ") + (fixed_ok ? "exact" : "NO") + ", refine files " +
                    (det_ok ? "byte-identical" : "DIFFER") + (changed ? "" : " (refiner inactive)") +
                    ", iterations=0 " + (zero_ok ? "bit-exact" : "DIFFERS")};
}

// 6: an adversarial layer is rejected.
Outcome criterion_6() {
    Rng rng(606);
    const int H = 16, W = 16;
    bool exact_ok = true;
    bool bounded_ok = true;
    for (int honest = 3; honest <= 8; ++honest) {
        const DepthMap truth = random_depth(H, W, rng);
        Mask region(H, W);
        for (int y = 3; y < 12; ++y)
            for (int x = 2; x < 14; ++x) region.set(y, x, true);

        for (bool noisy : {false, true}) {
            PredictionStack stack;
            stack.height = H;
            stack.width = W;
            for (int l = 0; l < honest; ++l) {
                Layer layer;
                layer.kind = l == 0 ? SampleKind::Full : SampleKind::Pud;
                layer.depth = truth;
                if (noisy)
                    for (auto& v : layer.depth.depth) v = static_cast<float>(v * (1.0 + rng.uniform(-0.02, 0.02)));
                layer.coverage = Mask(H, W, true);
                stack.layers.push_back(std::move(layer));
            }
            MrcmConfig cfg;
            cfg.k = 3;
            const DepthMap clean = aggregate(stack, cfg);

            Layer bad;
            bad.kind = SampleKind::Seg;
            bad.depth = DepthMap(H, W);
            bad.coverage = region;
            for (std::size_t i = 0; i < bad.depth.size(); ++i) {
                if (!region.bits[i]) continue;
                bad.depth.depth[i] = truth.depth[i] + 10.0f;
                bad.depth.valid[i] = 1;
            }
            stack.layers.push_back(bad);
            const DepthMap attacked = aggregate(stack, cfg);
            for (std::size_t i = 0; i < truth.size(); ++i) {
                if (!region.bits[i]) continue;
                if (!noisy && attacked.depth[i] != clean.depth[i]) exact_ok = false;
                float lo = std::numeric_limits<float>::max(), hi = 0.0f;
                for (int l = 0; l < honest; ++l) {
                    lo = std::min(lo, stack.layers[l].depth.depth[i]);
                    hi = std::max(hi, stack.layers[l].depth.depth[i]);
                }
                if (attacked.depth[i] < lo || attacked.depth[i] > hi) bounded_ok = false;
            }
        }
    }
    return {exact_ok && bounded_ok, std::string("+10 m layer: agreeing layers ") +
                                        (exact_ok ? "unchanged" : "CHANGED") + ", noisy layers " +
                                        (bounded_ok ? "within honest range" : "OUTSIDE honest range")};
}

// 7: desk-scale training and held-out refinement.
Outcome criterion_7() {
    const PipelineConfig cfg = preset_config("desk");
    const fs::path dir = scratch("c7");
    SceneSpec test_spec = cfg.synth;
    test_spec.seed = cfg.synth.seed + 1000003;
    DegradeSpec test_degrade = cfg.degrade;
    test_degrade.seed = cfg.degrade.seed + 1000003;
    write_synth_dataset(cfg.synth, cfg.degrade, 32, dir / "train");
    write_synth_dataset(test_spec, test_degrade, 8, dir / "test");
    const auto train_set = load_dataset(dir / "train", cfg, true);
    const auto test_set = load_dataset(dir / "test", cfg, true);

    TrainOptions opt;
    opt.weights_out = dir / "weights.mdpt";
    opt.log_path = dir / "train.jsonl";
    const TrainResult result = train(train_set, cfg, opt);

    const int n = 5;
    std::vector<double> d25(n + 1, 0.0), si(n + 1, 0.0);
    const double m = static_cast<double>(test_set.size());
    for (const auto& ex : test_set) {
        const MetricsReport r0 = evaluate(ex.initial, ex.gt, ex.K, cfg.eval_tau);
        d25[0] += r0.delta_at(0.25) / m;
        si[0] += r0.si_log / m;
        refine_iterations(result.weights, ex.rgb, ex.initial, ex.masks, cfg, cfg.seed, n, 0,
                          [&](int it, const DepthMap& d) {
                              const MetricsReport r = evaluate(d, ex.gt, ex.K, cfg.eval_tau);
                              d25[it] += r.delta_at(0.25) / m;
                              si[it] += r.si_log / m;
                          });
    }
    const double gain = d25[n] / d25[0] - 1.0;
    const double cut = 1.0 - si[n] / si[0];
    bool monotone = true;
    for (int i = 2; i <= n; ++i)
        if (si[i] > si[i - 1]) monotone = false;
    std::ostringstream detail;
    detail << "d0.25 " << fmt("%.4f", d25[0]) << " -> " << fmt("%.4f", d25[n]) << " (" << fmt("%+.1f%%", 100 * gain)
           << ", need >= +20%), SI_log " << fmt("%.4f", si[0]) << " -> " << fmt("%.4f", si[n]) << " ("
           << fmt("%.1f%%", 100 * cut) << " lower, need >= 15%), SI_log per iteration";
    for (int i = 1; i <= n; ++i) detail << ' ' << fmt("%.4f", si[i]);
    detail << (monotone ? " non-increasing" : " NOT non-increasing");
    return {gain >= 0.20 && cut >= 0.15 && monotone, detail.str()};
}

// 8: consistency probe on a fixture with one perturbed Pud branch.
Outcome criterion_8() {
    const fs::path dir = scratch("c8");
    const int H = 32, W = 32, s = 2;
    const double offset = 0.2;
    const int perturbed = 2;
    Rng rng(808);
    const ImageTensor rgb = random_image(3, H, W, rng);
    DepthMap full(H, W, 0.0f, true);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) full.at(y, x) = static_cast<float>(2.0 + 0.01 * x + 0.005 * y);
    DepthMap step = full;  // a depth edge in the left third
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W / 3; ++x) step.at(y, x) += 1.0f;

    save_image_png(dir / "rgb.png", rgb);
    save_depth(dir / "full.pfm", step);
    AnalyzeArgs a;
    a.image = dir / "rgb.png";
    a.full = dir / "full.pfm";
    a.out = dir / "out";
    const auto subs = pixel_unshuffle_depth(step, s);
    for (int i = 0; i < s * s; ++i) {
        DepthMap sub = subs[i];
        if (i == perturbed)
            for (auto& v : sub.depth) v = static_cast<float>(v + offset);
        const fs::path p = dir / ("pud" + std::to_string(i) + ".pfm");
        save_depth(p, sub);
        a.pud.push_back(p);
    }
    PipelineConfig cfg = preset_config("desk");
    cfg.sampler.s_pud = s;
    std::ostringstream sink;
    cmd_analyze(a, cfg, sink);

    std::ifstream f(dir / "out" / "stats.json");
    const auto stats = nlohmann::json::parse(f);
    bool ok = stats["pud"].size() == static_cast<std::size_t>(s * s);
    std::ostringstream detail;
    detail << "off-edge mean per branch:";
    for (const auto& b : stats["pud"]) {
        const int i = b["branch"].get<int>();
        const double v = b["off_edge_mean"].get<double>();
        detail << ' ' << fmt("%.6f", v);
        if (i == perturbed) {
            if (!(std::abs(v - offset) <= 0.01 * offset) || b["off_edge"].get<std::size_t>() == 0) ok = false;
        } else if (v != 0.0) {
            ok = false;
        }
    }
    for (int i = 0; i < s * s; ++i)
        if (!fs::exists(dir / "out" / ("pud_" + std::to_string(i) + ".png"))) ok = false;
    detail << " (injected " << offset << " on branch " << perturbed << ")";
    return {ok, detail.str()};
}

} // namespace

int main(int argc, char** argv) {
    std::vector<int> selected;
    fs::path workdir;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            selected.push_back(std::atoi(argv[++i]));
        } else if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) {
            workdir = argv[++i];
        } else {
            std::fprintf(stderr, "usage: acceptance [--criterion N]... [--workdir DIR]\n");
            return 2;
        }
    }
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};
    g_workdir = workdir.empty() ? fs::temp_directory_path() / ("multidepth_acceptance_" + std::to_string(::getpid()))
                                : workdir;
    fs::create_directories(g_workdir);

    struct Criterion {
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::map<int, Criterion> criteria{
        {1, {"exactness", 1.0, criterion_1}},
        {2, {"gradients", 60.0, criterion_2}},
        {3, {"loss identities", 1.0, criterion_3}},
        {4, {"metrics", 1.0, criterion_4}},
        {5, {"fixed point / determinism", 10.0, criterion_5}},
        {6, {"outlier rejection", 1.0, criterion_6}},
        {7, {"desk-scale refinement", 45.0 * 60.0, criterion_7}},
        {8, {"consistency probe", 10.0, criterion_8}},
    };
    int failures = 0;
    for (int id : selected) {
        const auto it = criteria.find(id);
        if (it == criteria.end()) {
            std::fprintf(stderr, "unknown criterion %d\n", id);
            return 2;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = it->second.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > it->second.budget_s) {
            o.pass = false;
            o.detail += "; over the " + fmt("%.0f", it->second.budget_s) + " s budget";
        }
        std::printf("criterion %d [%s] %s (%.2f s): %s\n", id, it->second.name, o.pass ? "PASS" : "FAIL", secs,
                    o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    if (workdir.empty()) fs::remove_all(g_workdir);
    return failures == 0 ? 0 : 1;
}
