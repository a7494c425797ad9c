#include "multidepth/commands.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "multidepth/formats.hpp"
#include "multidepth/geometry.hpp"
#include "multidepth/metrics.hpp"
#include "multidepth/pipeline.hpp"
#include "multidepth/rng.hpp"
#include "multidepth/sampling.hpp"
#include "multidepth/synth.hpp"

namespace multidepth {

namespace {

using json = nlohmann::ordered_json;

RNetWeights weights_or_identity(const std::optional<fs::path>& path, const PipelineConfig& cfg) {
    if (path) return rnet_from_weights_file(load_weights(*path));
    return zero_weights<float>(cfg.rnet);
}

fs::path with_suffix(const fs::path& prefix, const std::string& suffix) {
    return prefix.parent_path() / (prefix.filename().string() + suffix);
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream f(path, std::ios::binary);
    if (!f) fail_io("cannot write " + path.string());
    f << text;
    if (!f) fail_io("write failed: " + path.string());
}

json report_json(const MetricsReport& r) {
    json j;
    j["delta_0.25"] = r.delta_at(0.25);
    j["delta_0.5"] = r.delta_at(0.5);
    j["delta_1"] = r.delta_at(1.0);
    j["delta_2"] = r.delta_at(2.0);
    j["delta_3"] = r.delta_at(3.0);
    j["f_score"] = r.f_score;
    j["si_log"] = r.si_log;
    j["abs_rel"] = r.abs_rel;
    j["rmse"] = r.rmse;
    j["valid_pixels"] = r.valid_pixel_count;
    return j;
}

std::string table_row(const std::string& name, const MetricsReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %7.4f %7.4f %7.4f %7.4f %7.4f %7.3f %7.4f", name.c_str(), r.delta_at(0.25),
                  r.delta_at(0.5), r.delta_at(1.0), r.f_score, r.si_log, r.abs_rel_percent(), r.rmse);
    return buf;
}

std::string table_header() {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %7s %7s %7s %7s %7s %7s %7s", "image", "d0.25", "d0.5", "d1", "F_A",
                  "SI_log", "Abs%", "RMS");
    return buf;
}

CropRect parse_rect(const std::string& text) {
    CropRect r;
    char tail = 0;
    if (std::sscanf(text.c_str(), "%d,%d,%d,%d%c", &r.x, &r.y, &r.w, &r.h, &tail) != 4)
        fail_input("crop rectangle must be x,y,w,h: " + text);
    return r;
}

// Piecewise-linear dark-to-bright ramp.
Color3 colormap(double t) {
    static constexpr std::array<std::array<double, 3>, 5> anchors{{
        {0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}}};
    t = std::clamp(t, 0.0, 1.0) * (anchors.size() - 1);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), anchors.size() - 2);
    const double f = t - static_cast<double>(i);
    Color3 c{};
    for (int k = 0; k < 3; ++k)
        c[k] = static_cast<std::uint8_t>(std::lround(anchors[i][k] + f * (anchors[i + 1][k] - anchors[i][k])));
    return c;
}

// Invalid pixels are drawn mid-gray.
void save_error_png(const fs::path& path, const ProbeMap& probe, double vmax) {
    PngImage img;
    img.width = probe.width;
    img.height = probe.height;
    img.channels = 3;
    img.bit_depth = 8;
    img.samples.resize(static_cast<std::size_t>(probe.width) * probe.height * 3);
    for (std::size_t p = 0; p < probe.error.size(); ++p) {
        const Color3 c = probe.valid[p] ? colormap(vmax > 0 ? probe.error[p] / vmax : 0.0) : Color3{128, 128, 128};
        for (int k = 0; k < 3; ++k) img.samples[3 * p + k] = c[k];
    }
    write_png(path, img);
}

double max_error(const ProbeMap& p) {
    double m = 0.0;
    for (std::size_t i = 0; i < p.error.size(); ++i)
        if (p.valid[i]) m = std::max(m, static_cast<double>(p.error[i]));
    return m;
}

json probe_json(const ProbeMap& p) {
    json j;
    j["mean"] = p.mean;
    j["off_edge_mean"] = p.off_edge_mean;
    j["valid"] = p.valid_count;
    j["off_edge"] = p.off_edge_count;
    return j;
}

DepthMap crop_depth(const DepthMap& d, const CropRect& r) {
    if (r.w <= 0 || r.h <= 0 || r.x < 0 || r.y < 0 || r.x + r.w > d.width || r.y + r.h > d.height)
        fail_input("crop rectangle lies outside the image");
    DepthMap out(r.h, r.w);
    for (int y = 0; y < r.h; ++y) {
        for (int x = 0; x < r.w; ++x) {
            out.at(y, x) = d.at(r.y + y, r.x + x);
            out.valid[out.index(y, x)] = d.valid[d.index(r.y + y, r.x + x)];
        }
    }
    return out;
}

} // namespace

PipelineConfig resolve_config(const GlobalOptions& o) {
    const std::string preset = o.preset.value_or("desk");
    PipelineConfig cfg = o.config ? load_config(*o.config, preset) : preset_config(preset);
    if (o.preset && o.config) cfg.preset = *o.preset;
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.synth.seed = *o.seed;
        cfg.degrade.seed = *o.seed;
    }
    if (o.deterministic) cfg.deterministic = true;
    if (o.iterations) cfg.iterations = *o.iterations;
    if (o.threads) cfg.threads = *o.threads;
    cfg.validate();
    return cfg;
}

void cmd_refine(const RefineArgs& a, const PipelineConfig& cfg, std::ostream& out) {
    ImageTensor rgb = load_image_png(a.image);
    DepthMap depth = load_depth(a.depth);
    CameraIntrinsics K = load_intrinsics(a.intrinsics);
    MaskSet masks;
    if (a.masks) masks = load_masks(*a.masks);
    if (rgb.height() != depth.height || rgb.width() != depth.width)
        fail_input("image and depth differ in size");
    if (!masks.empty() && (masks.height != depth.height || masks.width != depth.width))
        fail_input("masks differ in size from the image");
    DepthMap gt;
    if (a.gt) {
        gt = load_depth(*a.gt);
        if (gt.height != depth.height || gt.width != depth.width) fail_input("ground truth differs in size");
    }
    if (a.fit) {
        FittedInput f = fit_to_resolution(rgb, depth, masks, K, cfg.height, cfg.width, cfg.resize_policy);
        if (a.gt) gt = fit_to_resolution(rgb, gt, MaskSet{}, K, cfg.height, cfg.width, cfg.resize_policy).depth;
        rgb = std::move(f.rgb);
        depth = std::move(f.depth);
        masks = std::move(f.masks);
        K = f.K;
    }
    validate_depth(depth);
    if (depth.valid_count() == 0) fail_input("input depth has no valid pixels");

    const RNetWeights weights = weights_or_identity(a.weights, cfg);
    if (a.weights && weights.config.levels != cfg.rnet.levels)
        out << "note: network shape taken from the weights file\n";

    std::ostringstream metrics_lines;
    auto record = [&](int iteration, const DepthMap& d) {
        if (a.dump_iters) {
            char tag[32];
            std::snprintf(tag, sizeof tag, "_iter%02d", iteration);
            save_depth(with_suffix(a.out_prefix, std::string(tag) + ".png"), d, DepthUnit::MillimeterPng16);
            save_depth(with_suffix(a.out_prefix, std::string(tag) + ".pfm"), d, DepthUnit::PfmMeters);
        }
        if (a.gt) {
            json j;
            j["iteration"] = iteration;
            const json report = report_json(evaluate(d, gt, K, cfg.eval_tau));
            for (const auto& [k, v] : report.items()) j[k] = v;
            metrics_lines << j.dump() << '\n';
            out << j.dump() << '\n';
        }
    };

    ensure_parent(a.out_prefix);
    if (a.gt && a.start_iteration == 0) record(0, depth);
    const DepthMap result = refine_iterations(weights, rgb, depth, masks, cfg, cfg.seed, cfg.iterations,
                                              a.start_iteration, record);
    save_depth(with_suffix(a.out_prefix, ".png"), result, DepthUnit::MillimeterPng16);
    save_depth(with_suffix(a.out_prefix, ".pfm"), result, DepthUnit::PfmMeters);
    if (a.gt) write_text(with_suffix(a.out_prefix, "_metrics.jsonl"), metrics_lines.str());
    if (a.ply) save_ply(unproject(result, K, 1.0, &rgb), with_suffix(a.out_prefix, ".ply"), a.ply_binary);
    out << "refined " << result.width << "x" << result.height << " with " << cfg.iterations << " iteration(s) -> "
        << with_suffix(a.out_prefix, ".png").string() << '\n';
}

void cmd_train(const TrainArgs& a, const PipelineConfig& cfg, std::ostream& out) {
    const std::vector<Example> data = load_dataset(a.data, cfg, true);
    TrainOptions opt;
    opt.weights_out = a.out;
    if (a.log) opt.log_path = *a.log;
    if (a.checkpoint) opt.checkpoint_path = *a.checkpoint;
    opt.resume = a.resume;
    opt.stop_after_epochs = a.stop_after_epochs;
    const int total = cfg.schedule.total_epochs();
    opt.on_epoch = [&](const EpochLog& e) {
        out << "epoch " << e.epoch + 1 << "/" << total << " stage " << e.stage << " loss " << std::setprecision(6)
            << e.mean.total << '\n';
    };
    ensure_parent(a.out);
    const TrainResult r = train(data, cfg, opt);
    out << "trained on " << data.size() << " example(s); next epoch " << r.next_epoch << "; weights -> "
        << a.out.string() << '\n';
}

MetricsReport mean_report(const std::vector<EvalRow>& rows) {
    MetricsReport m;
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < m.delta.size(); ++i) m.delta[i] += r.report.delta[i];
        m.si_log += r.report.si_log;
        m.abs_rel += r.report.abs_rel;
        m.rmse += r.report.rmse;
        m.f_score += r.report.f_score;
        m.valid_pixel_count += r.report.valid_pixel_count;
    }
    const double n = static_cast<double>(rows.size());
    for (auto& d : m.delta) d /= n;
    m.si_log /= n;
    m.abs_rel /= n;
    m.rmse /= n;
    m.f_score /= n;
    return m;
}

std::vector<EvalRow> cmd_eval(const EvalArgs& a, const PipelineConfig& cfg, std::ostream& out) {
    if (!fs::is_directory(a.pred)) fail_input("not a directory: " + a.pred.string());
    if (!fs::is_directory(a.gt)) fail_input("not a directory: " + a.gt.string());
    std::vector<fs::path> preds;
    for (const auto& e : fs::directory_iterator(a.pred)) {
        const std::string ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".pfm")) preds.push_back(e.path());
    }
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) fail_input("no .png or .pfm predictions in " + a.pred.string());

    const double tau = a.tau.value_or(cfg.eval_tau);
    std::optional<CameraIntrinsics> shared_K;
    if (a.intrinsics) shared_K = load_intrinsics(*a.intrinsics);

    std::vector<std::string> unmatched;
    std::vector<EvalRow> rows;
    for (const auto& p : preds) {
        const std::string stem = p.stem().string();
        fs::path gt_path;
        for (const fs::path& c : {a.gt / (stem + ".png"), a.gt / (stem + ".pfm"), a.gt / stem / "depth.png",
                                  a.gt / stem / "depth.pfm"}) {
            if (fs::is_regular_file(c)) {
                gt_path = c;
                break;
            }
        }
        if (gt_path.empty()) {
            unmatched.push_back(p.filename().string());
            continue;
        }
        CameraIntrinsics K;
        if (shared_K) {
            K = *shared_K;
        } else if (fs::is_regular_file(a.gt / stem / "intrinsics.json")) {
            K = load_intrinsics(a.gt / stem / "intrinsics.json");
        } else if (fs::is_regular_file(a.gt / (stem + ".json"))) {
            K = load_intrinsics(a.gt / (stem + ".json"));
        } else {
            fail_input("no intrinsics for " + stem + " (pass --intrinsics)");
        }
        const DepthMap pred = load_depth(p);
        const DepthMap gt = load_depth(gt_path);
        if (pred.height != gt.height || pred.width != gt.width)
            fail_input(stem + ": prediction and ground truth differ in size");
        rows.push_back({stem, evaluate(pred, gt, K, tau)});
    }
    if (!unmatched.empty()) {
        std::string list;
        for (const auto& u : unmatched) list += "\n  " + u;
        fail_input("no ground truth for:" + list);
    }

    out << table_header() << '\n';
    for (const auto& r : rows) out << table_row(r.name, r.report) << '\n';
    const MetricsReport mean = mean_report(rows);
    out << table_row("mean", mean) << '\n';

    if (a.json) {
        json j;
        j["tau"] = tau;
        j["mean"] = report_json(mean);
        json per = json::array();
        for (const auto& r : rows) {
            json e = report_json(r.report);
            e["name"] = r.name;
            per.push_back(e);
        }
        j["images"] = per;
        write_text(*a.json, j.dump(2) + "\n");
    }
    return rows;
}

void cmd_synth(const SynthArgs& a, const PipelineConfig& cfg, std::ostream& out) {
    if (a.count < 0) fail_input("count must be non-negative");
    const auto names = write_synth_dataset(cfg.synth, cfg.degrade, a.count, a.out);
    out << "wrote " << names.size() << " scene(s) to " << a.out.string() << '\n';
}

void cmd_analyze(const AnalyzeArgs& a, const PipelineConfig& cfg, std::ostream& out) {
    const ImageTensor rgb = load_image_png(a.image);
    const int H = rgb.height();
    const int W = rgb.width();
    const int s = cfg.sampler.s_pud;
    if (a.edge_sigma < 0 || !std::isfinite(a.edge_threshold)) fail_input("invalid edge parameters");

    DepthMap full;
    std::vector<DepthMap> pud_preds;
    std::vector<std::pair<CropRect, DepthMap>> crop_preds;
    std::vector<Sample> puds;

    if (a.weights) {
        if (!a.depth) fail_input("--weights needs --depth");
        if (a.full || !a.pud.empty() || !a.crop_preds.empty())
            fail_input("--weights computes the predictions; do not pass them as well");
        const RNetWeights w = rnet_from_weights_file(load_weights(*a.weights));
        const DepthMap depth = load_depth(*a.depth);
        if (depth.height != H || depth.width != W) fail_input("image and depth differ in size");
        full = refine_view(w, rgb, depth, {});
        puds = pud_samples(rgb, depth, s);
        for (const auto& smp : puds) pud_preds.push_back(refine_view(w, smp.rgb, smp.depth, {}));
        if (a.crops > 0) {
            SamplerConfig sc = cfg.sampler;
            sc.n_r = a.crops;
            Rng rng(cfg.seed);
            for (const auto& smp : random_subsample(rgb, depth, sc, rng))
                crop_preds.emplace_back(smp.rect, refine_view(w, smp.rgb, smp.depth, {}));
        }
    } else {
        if (!a.full) fail_input("pass --full (and --pud / --crop-pred), or --weights with --depth");
        full = load_depth(*a.full);
        if (full.height != H || full.width != W) fail_input("image and full prediction differ in size");
        if (!a.pud.empty() && a.pud.size() != static_cast<std::size_t>(s * s))
            fail_input("expected " + std::to_string(s * s) + " --pud predictions");
        if (!a.pud.empty()) {
            puds = pud_samples(rgb, full, s);
            for (const auto& p : a.pud) pud_preds.push_back(load_depth(p));
        }
        if (a.crop_preds.size() != a.crop_rects.size())
            fail_input("every --crop-pred needs a matching --crop-rect");
        for (std::size_t j = 0; j < a.crop_preds.size(); ++j)
            crop_preds.emplace_back(parse_rect(a.crop_rects[j]), load_depth(a.crop_preds[j]));
    }

    const DepthMap reference = a.reference ? load_depth(*a.reference) : full;
    if (reference.height != H || reference.width != W) fail_input("reference differs in size from the image");
    fs::create_directories(a.out);

    struct Named {
        std::string name;
        ProbeMap probe;
    };
    std::vector<Named> maps;
    json stats;
    json pud_json = json::array();
    if (!pud_preds.empty()) {
        DepthMap assembled(H, W);
        for (std::size_t i = 0; i < pud_preds.size(); ++i) {
            const Sample& smp = puds[i];
            if (pud_preds[i].height != smp.depth.height || pud_preds[i].width != smp.depth.width)
                fail_input("Pud prediction " + std::to_string(i) + " has the wrong size");
            const Layer layer = align_to_full(smp, pud_preds[i], H, W);
            for (std::size_t p = 0; p < layer.depth.size(); ++p) {
                if (!layer.depth.valid[p]) continue;
                assembled.depth[p] = layer.depth.depth[p];
                assembled.valid[p] = 1;
            }
            ProbeMap probe = pud_probe(full, layer.depth, reference, static_cast<float>(a.edge_sigma), a.edge_threshold);
            json j = probe_json(probe);
            j["branch"] = i;
            pud_json.push_back(j);
            maps.push_back({"pud_" + std::to_string(i), std::move(probe)});
        }
        ProbeMap probe = pud_probe(full, assembled, reference, static_cast<float>(a.edge_sigma), a.edge_threshold);
        stats["pud_assembled"] = probe_json(probe);
        maps.push_back({"pud_assembled", std::move(probe)});
    }
    stats["pud"] = pud_json;

    json crop_json = json::array();
    for (std::size_t j = 0; j < crop_preds.size(); ++j) {
        const auto& [rect, pred] = crop_preds[j];
        if (pred.height != rect.h || pred.width != rect.w)
            fail_input("crop prediction " + std::to_string(j) + " does not match its rectangle");
        ProbeMap probe = subsample_probe(pred, crop_depth(full, rect));
        json e = probe_json(probe);
        e["rect"] = {rect.x, rect.y, rect.w, rect.h};
        crop_json.push_back(e);
        maps.push_back({"crop_" + std::to_string(j), std::move(probe)});
    }
    stats["crops"] = crop_json;

    double vmax = a.vmax.value_or(0.0);
    if (!a.vmax)
        for (const auto& m : maps) vmax = std::max(vmax, max_error(m.probe));
    stats["vmax"] = vmax;
    for (const auto& m : maps) save_error_png(a.out / (m.name + ".png"), m.probe, vmax);
    write_text(a.out / "stats.json", stats.dump(2) + "\n");

    for (const auto& m : maps)
        out << std::left << std::setw(16) << m.name << " mean " << std::setprecision(5) << m.probe.mean
            << "  off-edge " << m.probe.off_edge_mean << '\n';
}

void cmd_unproject(const UnprojectArgs& a, std::ostream& out) {
    const DepthMap depth = load_depth(a.depth);
    const CameraIntrinsics K = load_intrinsics(a.intrinsics);
    if (!(a.scale > 0) || !std::isfinite(a.scale)) fail_input("scale must be positive");
    std::optional<ImageTensor> rgb;
    if (a.rgb) {
        rgb = load_image_png(*a.rgb);
        if (rgb->height() != depth.height || rgb->width() != depth.width)
            fail_input("image and depth differ in size");
    }
    const PointCloud pc = unproject(depth, K, a.scale, rgb ? &*rgb : nullptr);
    ensure_parent(a.out);
    save_ply(pc, a.out, a.binary);
    out << "wrote " << pc.size() << " point(s) to " << a.out.string() << '\n';
}

int exit_code_for(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) return err->kind() == ErrorKind::Numeric ? 3 : 2;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 2;
    return 1;
}

} // namespace multidepth
