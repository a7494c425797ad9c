#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "multidepth/commands.hpp"

namespace md = multidepth;

namespace {

template <class T>
CLI::Option* optional_value(CLI::App* app, const std::string& name, std::optional<T>& target,
                            const std::string& help) {
    return app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-sample depth refinement"};
    app.require_subcommand(1);
    app.fallthrough();

    md::GlobalOptions global;
    std::optional<std::string> config;
    optional_value(&app, "--config", config, "TOML configuration file");
    optional_value(&app, "--preset", global.preset, "base preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    optional_value(&app, "--seed", global.seed, "master seed");
    app.add_flag("--deterministic", global.deterministic, "single-threaded, bit-reproducible execution");
    optional_value(&app, "--iterations", global.iterations, "refinement cycles (MultiDepth_n)");
    optional_value(&app, "--threads", global.threads, "worker threads when not deterministic");

    md::RefineArgs refine;
    std::optional<std::string> refine_masks, refine_weights, refine_gt;
    auto* r = app.add_subcommand("refine", "refine one RGB-D pair");
    r->add_option("--image", refine.image, "RGB PNG")->required();
    r->add_option("--depth", refine.depth, "initial depth (.png mm or .pfm m)")->required();
    r->add_option("--intrinsics", refine.intrinsics, "intrinsics JSON")->required();
    r->add_option("--out", refine.out_prefix, "output prefix")->required();
    optional_value(r, "--masks", refine_masks, "mask directory or label PNG");
    optional_value(r, "--weights", refine_weights, "trained weights (default: identity refiner)");
    optional_value(r, "--gt", refine_gt, "ground truth for per-iteration metrics");
    r->add_flag("--ply", refine.ply, "also write <out>.ply");
    r->add_flag("--ply-binary", refine.ply_binary, "binary PLY");
    r->add_flag("--dump-iters", refine.dump_iters, "write every intermediate result");
    r->add_option("--start-iteration", refine.start_iteration, "iterations already applied to --depth");
    r->add_flag("--fit", refine.fit, "resize to the configured resolution first");

    md::TrainArgs train;
    std::optional<std::string> train_log, train_ckpt, train_resume;
    auto* t = app.add_subcommand("train", "train the refinement network");
    t->add_option("--data", train.data, "dataset directory")->required();
    t->add_option("--out", train.out, "weights file")->required();
    optional_value(t, "--log", train_log, "JSON-lines training log");
    optional_value(t, "--checkpoint", train_ckpt, "checkpoint file");
    optional_value(t, "--resume", train_resume, "resume from a checkpoint");
    t->add_option("--epochs", train.stop_after_epochs, "stop after this many epochs in this run");

    md::EvalArgs eval;
    std::optional<std::string> eval_K, eval_json;
    auto* e = app.add_subcommand("eval", "score predictions against ground truth");
    e->add_option("--pred", eval.pred, "directory of predicted depth files")->required();
    e->add_option("--gt", eval.gt, "ground-truth directory")->required();
    optional_value(e, "--intrinsics", eval_K, "intrinsics shared by every image");
    optional_value(e, "--tau", eval.tau, "F-score distance threshold in meters");
    optional_value(e, "--json", eval_json, "write per-image and mean metrics");

    md::SynthArgs synth;
    std::optional<std::string> spec;
    auto* s = app.add_subcommand("synth", "render a synthetic dataset");
    s->add_option("--count", synth.count, "number of scenes")->required();
    s->add_option("--out", synth.out, "output directory")->required();
    optional_value(s, "--spec", spec, "scene spec (TOML, same format as --config)");

    md::AnalyzeArgs analyze;
    std::optional<std::string> an_full, an_ref, an_depth, an_weights;
    std::vector<std::string> an_pud, an_crop_preds;
    auto* a = app.add_subcommand("analyze", "consistency error maps");
    a->add_option("--image", analyze.image, "RGB PNG")->required();
    a->add_option("--out", analyze.out, "output directory")->required();
    optional_value(a, "--full", an_full, "prediction on the full image");
    a->add_option("--pud", an_pud, "predictions on the Pud sub-images, in branch order");
    a->add_option("--crop-pred", an_crop_preds, "prediction on a crop");
    a->add_option("--crop-rect", analyze.crop_rects, "x,y,w,h of the matching crop");
    optional_value(a, "--reference", an_ref, "edge reference depth (default: --full)");
    optional_value(a, "--depth", an_depth, "input depth (with --weights)");
    optional_value(a, "--weights", an_weights, "compute the predictions with these weights");
    a->add_option("--crops", analyze.crops, "random crops to analyze (with --weights)");
    a->add_option("--edge-sigma", analyze.edge_sigma, "blur applied before edge detection");
    a->add_option("--edge-threshold", analyze.edge_threshold, "gradient magnitude marking an edge");
    optional_value(a, "--vmax", analyze.vmax, "error mapped to the top of the color scale");

    md::UnprojectArgs unproject;
    std::optional<std::string> up_rgb;
    auto* u = app.add_subcommand("unproject", "depth map to PLY point cloud");
    u->add_option("--depth", unproject.depth, "depth file")->required();
    u->add_option("--intrinsics", unproject.intrinsics, "intrinsics JSON")->required();
    u->add_option("--out", unproject.out, "output .ply")->required();
    u->add_option("--scale", unproject.scale, "metric scale factor");
    optional_value(u, "--rgb", up_rgb, "colors");
    u->add_flag("--binary", unproject.binary, "binary PLY");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return 2;
    }

    auto path = [](const std::optional<std::string>& s) -> std::optional<md::fs::path> {
        if (!s) return std::nullopt;
        return md::fs::path(*s);
    };

    try {
        if (s->parsed() && spec) config = spec;
        global.config = path(config);
        const md::PipelineConfig cfg = md::resolve_config(global);

        if (r->parsed()) {
            refine.masks = path(refine_masks);
            refine.weights = path(refine_weights);
            refine.gt = path(refine_gt);
            md::cmd_refine(refine, cfg, std::cout);
        } else if (t->parsed()) {
            train.log = path(train_log);
            train.checkpoint = path(train_ckpt);
            train.resume = path(train_resume);
            md::cmd_train(train, cfg, std::cout);
        } else if (e->parsed()) {
            eval.intrinsics = path(eval_K);
            eval.json = path(eval_json);
            md::cmd_eval(eval, cfg, std::cout);
        } else if (s->parsed()) {
            md::cmd_synth(synth, cfg, std::cout);
        } else if (a->parsed()) {
            analyze.full = path(an_full);
            analyze.reference = path(an_ref);
            analyze.depth = path(an_depth);
            analyze.weights = path(an_weights);
            for (const auto& p : an_pud) analyze.pud.emplace_back(p);
            for (const auto& p : an_crop_preds) analyze.crop_preds.emplace_back(p);
            md::cmd_analyze(analyze, cfg, std::cout);
        } else if (u->parsed()) {
            unproject.rgb = path(up_rgb);
            md::cmd_unproject(unproject, std::cout);
        }
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return md::exit_code_for(err);
    }
    return 0;
}
