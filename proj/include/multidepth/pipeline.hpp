#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "multidepth/config.hpp"
#include "multidepth/formats.hpp"
#include "multidepth/losses.hpp"
#include "multidepth/mrcm.hpp"
#include "multidepth/rnet.hpp"

namespace multidepth {

namespace fs = std::filesystem;

/// One RGB-D item at the working resolution.
struct Example {
    std::string name;
    ImageTensor rgb;
    DepthMap initial;
    DepthMap gt;  // empty when the directory has no ground truth
    CameraIntrinsics K;
    MaskSet masks;
};

/// Reads <dir>/{rgb.png, initial.png|initial.pfm, depth.png|depth.pfm,
/// intrinsics.json, masks/} and brings it to the configured resolution.
Example load_example(const fs::path& dir, const PipelineConfig& cfg, bool require_gt);

/// Scene directories listed by manifest.json, or every subdirectory holding
/// an rgb.png (sorted by name).
std::vector<fs::path> list_scenes(const fs::path& dataset_dir);
std::vector<Example> load_dataset(const fs::path& dataset_dir, const PipelineConfig& cfg, bool require_gt);

/// Called after each cycle with the 1-based absolute iteration number.
using IterationCallback = std::function<void(int iteration, const DepthMap& depth)>;

/// Runs `count` MRCM cycles starting at `current`. Cycle i (0-based, counted
/// from `start_iteration`) draws from Rng(seed).derive(i), so running n
/// cycles and then m more from the saved result equals n + m at once.
DepthMap refine_iterations(const RNetWeights& weights, const ImageTensor& rgb, const DepthMap& current,
                           const MaskSet& masks, const PipelineConfig& cfg, std::uint64_t seed, int count,
                           int start_iteration = 0, const IterationCallback& callback = {});

/// Training objective of one example:
///   lambda_mse(Phi(rgb, depth + noise), gt) + w_sample * lambda_sample . (L_PUD, L_sub, L_SAM)
/// The noise-free consistency terms come from one sample batch of `depth`.
/// Gradients are added into `grads` when given.
struct ObjectiveInput {
    const ImageTensor* rgb = nullptr;
    const DepthMap* depth = nullptr;
    const DepthMap* gt = nullptr;
    CameraIntrinsics K;
    const MaskSet* masks = nullptr;
};

template <class T>
LossBreakdown evaluate_objective(const BasicRNetWeights<T>& weights, const ObjectiveInput& input,
                                 const SamplerConfig& sampler, const LossWeights& losses, Rng& rng,
                                 BasicRNetWeights<T>* grads = nullptr);

struct EpochLog {
    int epoch = 0;  // 0-based
    int stage = 0;
    int stage_iterations = 0;
    double lr = 0.0;
    LossBreakdown mean;  // mean over the epoch's examples
    int steps = 0;
};

struct TrainOptions {
    fs::path weights_out;
    fs::path log_path;         // JSON lines; empty disables
    fs::path checkpoint_path;  // empty disables checkpoints
    std::optional<fs::path> resume;
    int stop_after_epochs = -1;  // run at most this many epochs in this call (-1 = to the end)
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    RNetWeights weights;
    OptimState state;
    int next_epoch = 0;
    std::vector<EpochLog> log;
};

TrainResult train(const std::vector<Example>& data, const PipelineConfig& cfg, const TrainOptions& options);

/// Stage index active at a 0-based epoch.
int stage_of_epoch(const Schedule& schedule, int epoch);

} // namespace multidepth
