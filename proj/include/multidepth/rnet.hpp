#pragma once

#include <span>
#include <string>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/rng.hpp"

namespace multidepth {

/// Encoder-decoder refiner. Level l runs at 1/2^l resolution with
/// base_channels * 2^l channels:
///
///   enc0   conv3x3 (4 -> C0) + ReLU
///   enc_l  conv3x3 stride 2 (C_{l-1} -> C_l) + ReLU            l = 1..levels-1
///   dec_l  nearest-up x2 of the level below, concat with enc_l,
///          conv3x3 (C_{l+1} + C_l -> C_l) + ReLU                l = levels-2..0
///   head   conv3x3 (C0 -> 1), linear output = log-depth residual
struct RNetConfig {
    int levels = 3;
    int base_channels = 16;
    double depth_noise_sigma = 0.02;  // std-dev of the multiplicative log-normal input noise
    double residual_clamp = 2.0;      // max |log residual|

    void validate() const;
    int channels(int level) const { return base_channels << level; }
    /// Input height/width must be a multiple of this.
    int size_multiple() const { return 1 << (levels - 1); }
    bool operator==(const RNetConfig&) const = default;
};

inline constexpr int kRNetInputChannels = 4;

template <class T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
};

/// Named parameter table; the layout is derived from the config.
template <class T>
struct BasicRNetWeights {
    RNetConfig config;
    std::vector<Param<T>> params;

    Param<T>& find(const std::string& name);
    const Param<T>& find(const std::string& name) const;
    std::size_t parameter_count() const;
    void set_zero();
    void add(const BasicRNetWeights& other);
    void scale(T factor);
    bool all_finite() const;
    bool same_layout(const BasicRNetWeights& other) const;
};

using RNetWeights = BasicRNetWeights<float>;

/// Parameter table with every tensor zero, in canonical order.
template <class T>
BasicRNetWeights<T> zero_weights(const RNetConfig& cfg);

/// He-normal init scaled by fan-in; biases zero; the head is zero so the
/// untrained network leaves depth unchanged.
RNetWeights init_weights(const RNetConfig& cfg, Rng& rng);

template <class To, class From>
BasicRNetWeights<To> weights_cast(const BasicRNetWeights<From>& w) {
    BasicRNetWeights<To> out;
    out.config = w.config;
    for (const auto& p : w.params) {
        Param<To> q{p.name, p.shape, {}};
        q.value.assign(p.value.begin(), p.value.end());
        out.params.push_back(std::move(q));
    }
    return out;
}

/// C x H x W activation tensor.
template <class T>
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}
    T* plane(int ch) { return data.data() + static_cast<std::size_t>(ch) * h * w; }
    const T* plane(int ch) const { return data.data() + static_cast<std::size_t>(ch) * h * w; }
};

/// Everything backward needs from one forward pass.
template <class T>
struct ForwardCache {
    std::vector<Tensor<T>> layer_inputs;   // input of every conv layer, in parameter order
    std::vector<Tensor<T>> layer_outputs;  // post-activation output of every conv layer
};

/// Runs the network on a 4 x H x W input. Returns the 1 x H x W residual.
template <class T>
Tensor<T> forward(const BasicRNetWeights<T>& weights, const Tensor<T>& input, ForwardCache<T>* cache = nullptr);

/// Accumulates d(loss)/d(parameters) into `grads` given d(loss)/d(residual).
template <class T>
void backward(const BasicRNetWeights<T>& weights, const ForwardCache<T>& cache, const Tensor<T>& grad_residual,
              BasicRNetWeights<T>& grads);

/// State carried through one refine call for backpropagation.
template <class T>
struct RefineCache {
    ForwardCache<T> net;
    int height = 0;  // unpadded sample size
    int width = 0;
    int padded_h = 0;
    int padded_w = 0;
    std::vector<T> residual;           // unclamped, unpadded
    BasicDepthMap<T> refined;
};

/// Differentiable refinement of one view.
///
/// The depth channel is log(d_noisy / median(d_noisy)) with
/// d_noisy = d_in * exp(noise); invalid pixels feed 0. The view is padded
/// by reflection to the network's size multiple and cropped back. Output is
/// d_in * exp(clamp(r, +-residual_clamp)) on valid pixels. `log_noise` is
/// either empty (no noise) or one value per pixel.
template <class T>
BasicDepthMap<T> refine_view(const BasicRNetWeights<T>& weights, const ImageTensor& rgb, const DepthMap& depth_in,
                             std::span<const float> log_noise, RefineCache<T>* cache = nullptr);

/// Backpropagates d(loss)/d(refined depth) through refine_view.
template <class T>
void refine_view_backward(const BasicRNetWeights<T>& weights, const RefineCache<T>& cache,
                          const BasicDepthMap<T>& grad_refined, BasicRNetWeights<T>& grads);

/// Draws per-pixel log-noise N(0, sigma) in row-major order (nothing when sigma == 0).
std::vector<float> draw_log_noise(int height, int width, double sigma, Rng& rng);

/// Inference entry point: draws noise with the given sigma, then refines.
DepthMap refine(const RNetWeights& weights, const ImageTensor& rgb, const DepthMap& depth_in, double sigma,
                Rng& rng);

struct AdamWConfig {
    double lr = 3.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double epsilon = 1e-8;
    bool operator==(const AdamWConfig&) const = default;
};

struct OptimState {
    AdamWConfig config;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::uint64_t step = 0;

    static OptimState for_weights(const RNetWeights& w, const AdamWConfig& cfg);
};

/// One AdamW update. Weight decay is decoupled and applied first
/// (w -= lr * wd * w), then the bias-corrected Adam step. Rejects non-finite
/// gradients without touching the weights or state.
void adamw_step(RNetWeights& weights, const RNetWeights& grads, OptimState& state);

} // namespace multidepth
