#pragma once

#include <functional>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/rnet.hpp"
#include "multidepth/sampling.hpp"

namespace multidepth {

struct MrcmConfig {
    int k = 3;
    int min_support = 1;

    void validate() const;
    bool operator==(const MrcmConfig&) const = default;
};

/// One sample's refinement placed on the full-resolution grid.
template <class T>
struct BasicLayer {
    SampleKind kind = SampleKind::Full;
    BasicDepthMap<T> depth;  // valid only inside coverage
    Mask coverage;
};

template <class T>
struct BasicPredictionStack {
    int height = 0;
    int width = 0;
    std::vector<BasicLayer<T>> layers;

    void validate() const;
};

using Layer = BasicLayer<float>;
using PredictionStack = BasicPredictionStack<float>;

/// Places a refined sample back at full resolution via the sample's exact
/// index alignment (Pud: inverse unshuffle indexing, Crop: paste into the
/// rect, Seg: paste under the mask).
template <class T>
BasicLayer<T> align_to_full(const Sample& sample, const BasicDepthMap<T>& refined, int full_h, int full_w);

/// Scatters a gradient on an aligned layer back onto the sample grid.
template <class T>
BasicDepthMap<T> align_to_full_backward(const Sample& sample, const BasicDepthMap<T>& grad_layer);

/// Per pixel: sort the valid predictions S ascending; if |S| >= k return the
/// mean of the k values starting at floor((|S| - k) / 2), else mean(S).
/// The window sum is accumulated in double, in ascending order. Output
/// validity follows the Full layer (or |S| > 0 when the stack has none).
/// Pixels with |S| < min_support take the Full layer's value.
template <class T>
BasicDepthMap<T> aggregate(const BasicPredictionStack<T>& stack, const MrcmConfig& cfg);

/// d(loss)/d(layer) for every layer given d(loss)/d(aggregate).
template <class T>
std::vector<BasicDepthMap<T>> aggregate_backward(const BasicPredictionStack<T>& stack, const MrcmConfig& cfg,
                                                 const BasicDepthMap<T>& grad_out);

/// Mean-of-k-medians of one multiset (the per-pixel rule of aggregate).
double mean_of_k_medians(std::vector<double> values, int k);

/// Optional callback applied to each refined sample before alignment.
using LayerHook = std::function<void(const Sample&, DepthMap&)>;

struct IterationSetup {
    const ImageTensor* rgb = nullptr;
    const MaskSet* masks = nullptr;
    const RNetWeights* weights = nullptr;
    SamplerConfig sampler;
    MrcmConfig mrcm;
    double noise_sigma = 0.0;
    int threads = 1;  // sample refinement fan-out; results do not depend on it
    LayerHook hook;
};

/// One refinement cycle. Draws a full-resolution log-noise field, builds the
/// sample batch from `current`, refines every sample (each sees its own
/// view of the shared noise field), aligns and aggregates.
DepthMap run_iteration(const IterationSetup& setup, const DepthMap& current, Rng& rng);

} // namespace multidepth
