#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "multidepth/commands.hpp"
#include "multidepth/pipeline.hpp"

using namespace multidepth;
using testing::file_bytes;
using testing::temp_dir;

namespace {

PipelineConfig tiny_config() {
    PipelineConfig c = preset_config("desk");
    c.width = c.height = 16;
    c.synth.width = c.synth.height = 16;
    c.rnet.levels = 2;
    c.rnet.base_channels = 4;
    c.batch_size = 2;
    c.schedule.stage_iterations = {0, 1};
    c.schedule.stage_epochs = {2, 2};
    c.schedule.stage_lr = {1e-3, 5e-4};
    c.schedule.feedback_refresh = 1;
    c.checkpoint_every = 1;
    c.iterations = 2;
    return c;
}

} // namespace

TEST_CASE("stage_of_epoch walks the stage boundaries") {
    Schedule s;
    s.stage_iterations = {0, 2, 5};
    s.stage_epochs = {2, 3, 1};
    s.stage_lr = {1, 1, 1};
    const int expect[] = {0, 0, 1, 1, 1, 2, 2};
    for (int e = 0; e < 7; ++e) CHECK(stage_of_epoch(s, e) == expect[e]);
    s.cumulative = true;
    s.stage_epochs = {2, 5, 6};
    for (int e = 0; e < 7; ++e) CHECK(stage_of_epoch(s, e) == expect[e]);
}

TEST_CASE("n cycles then m more equals n + m cycles") {
    const PipelineConfig cfg = tiny_config();
    Rng rng(1);
    const ImageTensor rgb = testing::random_image(3, 16, 16, rng);
    const DepthMap d = testing::random_depth(16, 16, rng);
    const MaskSet masks = testing::block_masks(16, 16);
    RNetWeights w = init_weights(cfg.rnet, rng);
    for (auto& p : w.params)
        for (auto& v : p.value) v = static_cast<float>(rng.normal(0, 0.2));
    const DepthMap all = refine_iterations(w, rgb, d, masks, cfg, 99, 5);
    const DepthMap first = refine_iterations(w, rgb, d, masks, cfg, 99, 2);
    const DepthMap rest = refine_iterations(w, rgb, first, masks, cfg, 99, 3, 2);
    CHECK(rest == all);
    CHECK(all != d);

    std::vector<int> seen;
    refine_iterations(w, rgb, d, masks, cfg, 99, 3, 4, [&](int i, const DepthMap&) { seen.push_back(i); });
    CHECK(seen == std::vector<int>{5, 6, 7});
    CHECK(refine_iterations(w, rgb, d, masks, cfg, 99, 0) == d);
}

TEST_CASE("training resumes bit-exactly from a checkpoint") {
    const auto dir = temp_dir("pipe_train");
    PipelineConfig cfg = tiny_config();
    write_synth_dataset(cfg.synth, cfg.degrade, 3, dir / "data");
    const auto data = load_dataset(dir / "data", cfg, true);
    REQUIRE(data.size() == 3);

    TrainOptions straight;
    straight.weights_out = dir / "a.mdpt";
    const TrainResult a = train(data, cfg, straight);
    CHECK(a.next_epoch == 4);
    REQUIRE(a.log.size() == 4);
    CHECK(a.log[1].stage == 0);
    CHECK(a.log[2].stage == 1);
    CHECK(a.log[2].stage_iterations == 1);

    TrainOptions part;
    part.weights_out = dir / "b.mdpt";
    part.checkpoint_path = dir / "b.ckpt";
    part.stop_after_epochs = 3;
    const TrainResult b1 = train(data, cfg, part);
    CHECK(b1.next_epoch == 3);
    TrainOptions rest;
    rest.weights_out = dir / "b.mdpt";
    rest.resume = dir / "b.ckpt";
    const TrainResult b2 = train(data, cfg, rest);
    CHECK(b2.next_epoch == 4);
    CHECK(file_bytes(dir / "a.mdpt") == file_bytes(dir / "b.mdpt"));
}

TEST_CASE("synth datasets are reproducible") {
    const auto dir = temp_dir("pipe_synth");
    const PipelineConfig cfg = tiny_config();
    const auto n1 = write_synth_dataset(cfg.synth, cfg.degrade, 2, dir / "x");
    const auto n2 = write_synth_dataset(cfg.synth, cfg.degrade, 2, dir / "y");
    CHECK(n1 == n2);
    for (const auto& name : n1) {
        for (const char* f : {"rgb.png", "depth.png", "initial.png", "intrinsics.json"})
            CHECK(file_bytes(dir / "x" / name / f) == file_bytes(dir / "y" / name / f));
    }
    CHECK(list_scenes(dir / "x").size() == 2);
}

TEST_CASE("eval reports unmatched predictions as input errors") {
    const auto dir = temp_dir("pipe_eval");
    Rng rng(2);
    const DepthMap d = testing::random_depth(8, 8, rng, 1.0, 3.0);
    fs::create_directories(dir / "pred");
    fs::create_directories(dir / "gt");
    save_depth(dir / "pred" / "a.pfm", d);
    save_depth(dir / "gt" / "a.pfm", d);
    save_intrinsics(dir / "k.json", {8, 8, 3.5, 3.5});

    EvalArgs args;
    args.pred = dir / "pred";
    args.gt = dir / "gt";
    args.intrinsics = dir / "k.json";
    std::ostringstream out;
    const auto rows = cmd_eval(args, tiny_config(), out);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].report.abs_rel == 0.0);
    CHECK(rows[0].report.delta_at(0.25) == 1.0);

    save_depth(dir / "pred" / "b.pfm", d);
    try {
        cmd_eval(args, tiny_config(), out);
        FAIL("expected an input error");
    } catch (const Error& e) {
        CHECK(exit_code_for(e) == 2);
        CHECK(std::string(e.what()).find("b") != std::string::npos);
    }
}

TEST_CASE("exit codes map error kinds") {
    try {
        fail_numeric("nan");
    } catch (const std::exception& e) {
        CHECK(exit_code_for(e) == 3);
    }
    try {
        fail_input("bad");
    } catch (const std::exception& e) {
        CHECK(exit_code_for(e) == 2);
    }
}

TEST_CASE("global options override the config in order") {
    GlobalOptions o;
    o.preset = "desk";
    o.seed = 77;
    o.iterations = 9;
    const PipelineConfig c = resolve_config(o);
    CHECK(c.seed == 77);
    CHECK(c.synth.seed == 77);
    CHECK(c.iterations == 9);
}

TEST_CASE("unproject command writes one vertex per valid pixel") {
    const auto dir = temp_dir("pipe_unproject");
    DepthMap d(4, 5, 2.0f, true);
    d.valid[3] = 0;
    d.depth[3] = 0.0f;
    save_depth(dir / "d.pfm", d);
    save_intrinsics(dir / "k.json", {5, 5, 2, 1.5});
    UnprojectArgs a;
    a.depth = dir / "d.pfm";
    a.intrinsics = dir / "k.json";
    a.out = dir / "p.ply";
    std::ostringstream out;
    cmd_unproject(a, out);
    CHECK(load_ply(dir / "p.ply").size() == 19);
}
