#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "multidepth/config.hpp"
#include "multidepth/metrics.hpp"

namespace multidepth {

namespace fs = std::filesystem;

/// Options shared by every subcommand; unset fields keep the config value.
struct GlobalOptions {
    std::optional<fs::path> config;
    std::optional<std::string> preset;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::optional<int> iterations;
    std::optional<int> threads;
};

/// Preset, then config file, then command-line overrides.
PipelineConfig resolve_config(const GlobalOptions& options);

struct RefineArgs {
    fs::path image;
    fs::path depth;
    fs::path intrinsics;
    std::optional<fs::path> masks;
    std::optional<fs::path> weights;  // none: identity refiner
    std::optional<fs::path> gt;       // enables per-iteration metrics
    fs::path out_prefix;
    bool ply = false;
    bool ply_binary = false;
    bool dump_iters = false;
    int start_iteration = 0;
    bool fit = false;  // bring inputs to the configured resolution first
};

/// Writes <prefix>.png (mm PNG16) and <prefix>.pfm, optionally <prefix>.ply,
/// <prefix>_iterNN.{png,pfm} and <prefix>_metrics.jsonl.
void cmd_refine(const RefineArgs& args, const PipelineConfig& cfg, std::ostream& out);

struct TrainArgs {
    fs::path data;
    fs::path out;  // weights file
    std::optional<fs::path> log;
    std::optional<fs::path> checkpoint;
    std::optional<fs::path> resume;
    int stop_after_epochs = -1;
};

void cmd_train(const TrainArgs& args, const PipelineConfig& cfg, std::ostream& out);

struct EvalRow {
    std::string name;
    MetricsReport report;
};

struct EvalArgs {
    fs::path pred;
    fs::path gt;
    std::optional<fs::path> intrinsics;
    std::optional<double> tau;
    std::optional<fs::path> json;
};

/// Matches every depth file in `pred` with <gt>/<stem>.{png,pfm} or
/// <gt>/<stem>/depth.{png,pfm}. Intrinsics come from --intrinsics, or
/// <gt>/<stem>/intrinsics.json, or <gt>/<stem>.json.
std::vector<EvalRow> cmd_eval(const EvalArgs& args, const PipelineConfig& cfg, std::ostream& out);

/// Column-wise mean of per-image reports.
MetricsReport mean_report(const std::vector<EvalRow>& rows);

struct SynthArgs {
    int count = 0;
    fs::path out;
};

void cmd_synth(const SynthArgs& args, const PipelineConfig& cfg, std::ostream& out);

struct AnalyzeArgs {
    fs::path image;
    std::optional<fs::path> full;           // full-image prediction
    std::vector<fs::path> pud;              // s*s predictions on the Pud sub-images
    std::vector<fs::path> crop_preds;       // predictions on crops ...
    std::vector<std::string> crop_rects;    // ... at "x,y,w,h"
    std::optional<fs::path> reference;      // edge reference (defaults to the full prediction)
    std::optional<fs::path> depth;          // input depth, needed with --weights
    std::optional<fs::path> weights;        // compute the predictions instead of reading them
    int crops = 0;                          // random crops to draw with --weights
    double edge_sigma = 1.0;
    double edge_threshold = 0.05;
    std::optional<double> vmax;             // color scale; default = largest error
    fs::path out;                           // output directory
};

/// Writes pud_<i>.png, pud_assembled.png, crop_<j>.png color maps and
/// stats.json into `out`.
void cmd_analyze(const AnalyzeArgs& args, const PipelineConfig& cfg, std::ostream& out);

struct UnprojectArgs {
    fs::path depth;
    fs::path intrinsics;
    double scale = 1.0;
    std::optional<fs::path> rgb;
    fs::path out;
    bool binary = false;
};

void cmd_unproject(const UnprojectArgs& args, std::ostream& out);

/// Process exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

} // namespace multidepth
