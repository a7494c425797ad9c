#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multidepth/formats.hpp"
#include "multidepth/losses.hpp"
#include "multidepth/mrcm.hpp"
#include "multidepth/rnet.hpp"
#include "multidepth/sampling.hpp"
#include "multidepth/synth.hpp"

namespace multidepth {

/// Training stages. Stage i trains with MRCM feedback of up to
/// stage_iterations[i] cycles (0 = plain refinement of the initial depth).
/// With `cumulative`, stage_epochs holds running totals instead of lengths.
struct Schedule {
    std::vector<int> stage_iterations{0};
    std::vector<int> stage_epochs{1};
    std::vector<double> stage_lr{3.5e-4};
    bool cumulative = false;
    int feedback_refresh = 1;  // epochs between recomputing the fed-back inputs

    /// Epoch count of each stage, whichever interpretation is configured.
    std::vector<int> stage_lengths() const;
    int total_epochs() const;
    void validate() const;
    bool operator==(const Schedule&) const = default;
};

struct PipelineConfig {
    std::string preset = "desk";
    std::uint64_t seed = 0;
    bool deterministic = true;
    int iterations = 5;  // MultiDepth_n
    int threads = 1;     // ignored when deterministic

    SamplerConfig sampler;
    RNetConfig rnet;
    MrcmConfig mrcm;
    LossWeights losses;
    AdamWConfig optimizer;
    int batch_size = 4;
    Schedule schedule;
    int checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints

    int width = 64;  // working resolution
    int height = 64;
    ResizePolicy resize_policy = ResizePolicy::CenterCrop;
    double eval_tau = 0.25;

    SceneSpec synth;
    DegradeSpec degrade;

    void validate() const;
    int effective_threads() const { return deterministic ? 1 : threads; }
    bool operator==(const PipelineConfig&) const = default;
};

/// "desk" (CI-sized) or "paper" (published hyperparameters).
PipelineConfig preset_config(const std::string& name);

/// Starts from `base_preset` unless the document names its own preset, then
/// applies every key present. Unknown keys are errors.
PipelineConfig parse_config(const std::string& toml_text, const std::string& base_preset = "desk");
PipelineConfig load_config(const std::filesystem::path& path, const std::string& base_preset = "desk");

/// Full TOML document; parse_config(serialize_config(c)) == c.
std::string serialize_config(const PipelineConfig& config);

} // namespace multidepth
