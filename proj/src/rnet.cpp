#include "multidepth/rnet.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace multidepth {

void RNetConfig::validate() const {
    if (levels < 1 || levels > 8) fail_input("rnet levels must be in [1, 8]");
    if (base_channels < 1) fail_input("rnet base_channels must be >= 1");
    if (!(depth_noise_sigma >= 0.0)) fail_input("depth noise sigma must be non-negative");
    if (!(residual_clamp > 0.0)) fail_input("residual clamp must be positive");
}

namespace {

struct LayerSpec {
    std::string name;
    int cin;
    int cout;
    int stride;
};

std::vector<LayerSpec> layer_specs(const RNetConfig& cfg) {
    std::vector<LayerSpec> specs;
    specs.push_back({"enc0", kRNetInputChannels, cfg.channels(0), 1});
    for (int l = 1; l < cfg.levels; ++l) specs.push_back({"enc" + std::to_string(l), cfg.channels(l - 1), cfg.channels(l), 2});
    for (int l = cfg.levels - 2; l >= 0; --l)
        specs.push_back({"dec" + std::to_string(l), cfg.channels(l + 1) + cfg.channels(l), cfg.channels(l), 1});
    specs.push_back({"head", cfg.channels(0), 1, 1});
    return specs;
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Row (ci, ky, kx), column (y, x) holds in(ci, stride*y + ky - 1, stride*x + kx - 1), zero outside.
template <class T>
RowMatrix<T> im2col(const Tensor<T>& in, int stride, int oh, int ow) {
    RowMatrix<T> cols = RowMatrix<T>::Zero(static_cast<Eigen::Index>(in.c) * 9, static_cast<Eigen::Index>(oh) * ow);
    for (int ci = 0; ci < in.c; ++ci) {
        const T* src = in.plane(ci);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = cols.row(static_cast<Eigen::Index>(ci) * 9 + ky * 3 + kx).data();
                for (int y = 0; y < oh; ++y) {
                    const int sy = stride * y + ky - 1;
                    if (sy < 0 || sy >= in.h) continue;
                    const T* srow = src + static_cast<std::size_t>(sy) * in.w;
                    T* drow = row + static_cast<std::size_t>(y) * ow;
                    for (int x = 0; x < ow; ++x) {
                        const int sx = stride * x + kx - 1;
                        if (sx >= 0 && sx < in.w) drow[x] = srow[sx];
                    }
                }
            }
        }
    }
    return cols;
}

template <class T>
void col2im_add(const RowMatrix<T>& cols, int stride, int oh, int ow, Tensor<T>& out) {
    for (int ci = 0; ci < out.c; ++ci) {
        T* dst = out.plane(ci);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = cols.row(static_cast<Eigen::Index>(ci) * 9 + ky * 3 + kx).data();
                for (int y = 0; y < oh; ++y) {
                    const int sy = stride * y + ky - 1;
                    if (sy < 0 || sy >= out.h) continue;
                    T* drow = dst + static_cast<std::size_t>(sy) * out.w;
                    const T* srow = row + static_cast<std::size_t>(y) * ow;
                    for (int x = 0; x < ow; ++x) {
                        const int sx = stride * x + kx - 1;
                        if (sx >= 0 && sx < out.w) drow[sx] += srow[x];
                    }
                }
            }
        }
    }
}

// 3x3 convolution, zero padding 1, stride 1 or 2.
template <class T>
Tensor<T> conv_forward(const Tensor<T>& in, const std::vector<T>& weight, const std::vector<T>& bias, int cout,
                       int stride) {
    const int oh = (in.h - 1) / stride + 1;
    const int ow = (in.w - 1) / stride + 1;
    const RowMatrix<T> cols = im2col(in, stride, oh, ow);
    Tensor<T> out(cout, oh, ow);
    MatrixMap<T> o(out.data.data(), cout, static_cast<Eigen::Index>(oh) * ow);
    ConstMatrixMap<T> w(weight.data(), cout, static_cast<Eigen::Index>(in.c) * 9);
    o.noalias() = w * cols;
    for (int co = 0; co < cout; ++co) o.row(co).array() += bias[co];
    return out;
}

template <class T>
void conv_backward(const Tensor<T>& in, const std::vector<T>& weight, const Tensor<T>& grad_out, int stride,
                   std::vector<T>& grad_weight, std::vector<T>& grad_bias, Tensor<T>* grad_in) {
    const int oh = grad_out.h;
    const int ow = grad_out.w;
    const Eigen::Index k = static_cast<Eigen::Index>(in.c) * 9;
    const RowMatrix<T> cols = im2col(in, stride, oh, ow);
    ConstMatrixMap<T> g(grad_out.data.data(), grad_out.c, static_cast<Eigen::Index>(oh) * ow);
    MatrixMap<T> gw(grad_weight.data(), grad_out.c, k);
    gw.noalias() += g * cols.transpose();
    for (int co = 0; co < grad_out.c; ++co) grad_bias[co] += g.row(co).sum();
    if (grad_in) {
        ConstMatrixMap<T> w(weight.data(), grad_out.c, k);
        const RowMatrix<T> gcols = w.transpose() * g;
        col2im_add(gcols, stride, oh, ow, *grad_in);
    }
}

template <class T>
void relu_inplace(Tensor<T>& t) {
    for (auto& v : t.data) v = v > T(0) ? v : T(0);
}

template <class T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& activated) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (!(activated.data[i] > T(0))) grad.data[i] = T(0);
}

template <class T>
Tensor<T> upsample_concat(const Tensor<T>& low, const Tensor<T>& skip) {
    Tensor<T> out(low.c + skip.c, skip.h, skip.w);
    for (int c = 0; c < low.c; ++c) {
        const T* src = low.plane(c);
        T* dst = out.plane(c);
        for (int y = 0; y < skip.h; ++y)
            for (int x = 0; x < skip.w; ++x)
                dst[static_cast<std::size_t>(y) * skip.w + x] = src[static_cast<std::size_t>(y / 2) * low.w + x / 2];
    }
    std::copy(skip.data.begin(), skip.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(low.c) * skip.h * skip.w);
    return out;
}

// Splits the gradient of a concat(upsample(low), skip) tensor.
template <class T>
void split_upsample_concat_grad(const Tensor<T>& grad_cat, int low_c, int low_h, int low_w, Tensor<T>& grad_low,
                                Tensor<T>& grad_skip) {
    grad_low = Tensor<T>(low_c, low_h, low_w);
    for (int c = 0; c < low_c; ++c) {
        const T* src = grad_cat.plane(c);
        T* dst = grad_low.plane(c);
        for (int y = 0; y < grad_cat.h; ++y)
            for (int x = 0; x < grad_cat.w; ++x)
                dst[static_cast<std::size_t>(y / 2) * low_w + x / 2] += src[static_cast<std::size_t>(y) * grad_cat.w + x];
    }
    for (int c = 0; c < grad_skip.c; ++c) {
        const T* src = grad_cat.plane(low_c + c);
        T* dst = grad_skip.plane(c);
        for (std::size_t i = 0; i < static_cast<std::size_t>(grad_cat.h) * grad_cat.w; ++i) dst[i] += src[i];
    }
}

} // namespace

template <class T>
Param<T>& BasicRNetWeights<T>::find(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p;
    fail_input("no parameter named '" + name + "'");
}

template <class T>
const Param<T>& BasicRNetWeights<T>::find(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    fail_input("no parameter named '" + name + "'");
}

template <class T>
std::size_t BasicRNetWeights<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

template <class T>
void BasicRNetWeights<T>::set_zero() {
    for (auto& p : params) std::fill(p.value.begin(), p.value.end(), T(0));
}

template <class T>
void BasicRNetWeights<T>::add(const BasicRNetWeights& other) {
    if (!same_layout(other)) fail_input("parameter tables differ in layout");
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].value.size(); ++j) params[i].value[j] += other.params[i].value[j];
}

template <class T>
void BasicRNetWeights<T>::scale(T factor) {
    for (auto& p : params)
        for (auto& v : p.value) v *= factor;
}

template <class T>
bool BasicRNetWeights<T>::all_finite() const {
    for (const auto& p : params)
        for (T v : p.value)
            if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <class T>
bool BasicRNetWeights<T>::same_layout(const BasicRNetWeights& other) const {
    if (params.size() != other.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].name != other.params[i].name || params[i].shape != other.params[i].shape) return false;
    return true;
}

template struct BasicRNetWeights<float>;
template struct BasicRNetWeights<double>;

template <class T>
BasicRNetWeights<T> zero_weights(const RNetConfig& cfg) {
    cfg.validate();
    BasicRNetWeights<T> w;
    w.config = cfg;
    for (const auto& spec : layer_specs(cfg)) {
        Param<T> kernel{spec.name + ".weight", {spec.cout, spec.cin, 3, 3}, {}};
        kernel.value.assign(static_cast<std::size_t>(spec.cout) * spec.cin * 9, T(0));
        Param<T> bias{spec.name + ".bias", {spec.cout}, {}};
        bias.value.assign(static_cast<std::size_t>(spec.cout), T(0));
        w.params.push_back(std::move(kernel));
        w.params.push_back(std::move(bias));
    }
    return w;
}

template BasicRNetWeights<float> zero_weights(const RNetConfig&);
template BasicRNetWeights<double> zero_weights(const RNetConfig&);

RNetWeights init_weights(const RNetConfig& cfg, Rng& rng) {
    auto w = zero_weights<float>(cfg);
    const auto specs = layer_specs(cfg);
    for (std::size_t i = 0; i + 1 < specs.size(); ++i) {
        const double stddev = std::sqrt(2.0 / (specs[i].cin * 9.0));
        for (auto& v : w.params[2 * i].value) v = static_cast<float>(rng.normal() * stddev);
    }
    return w;
}

template <class T>
Tensor<T> forward(const BasicRNetWeights<T>& weights, const Tensor<T>& input, ForwardCache<T>* cache) {
    const RNetConfig& cfg = weights.config;
    const auto specs = layer_specs(cfg);
    if (weights.params.size() != 2 * specs.size()) fail_input("weights do not match the network layout");
    if (input.c != kRNetInputChannels) fail_input("network input must have 4 channels");
    if (input.h % cfg.size_multiple() != 0 || input.w % cfg.size_multiple() != 0)
        fail_input("network input dims must be multiples of " + std::to_string(cfg.size_multiple()));

    auto run = [&](std::size_t layer, const Tensor<T>& in, bool activate) {
        const auto& spec = specs[layer];
        if (in.c != spec.cin) fail_input("channel mismatch at layer " + spec.name);
        Tensor<T> out = conv_forward(in, weights.params[2 * layer].value, weights.params[2 * layer + 1].value,
                                     spec.cout, spec.stride);
        if (activate) relu_inplace(out);
        if (cache) {
            cache->layer_inputs.push_back(in);
            cache->layer_outputs.push_back(out);
        }
        return out;
    };

    if (cache) {
        cache->layer_inputs.clear();
        cache->layer_outputs.clear();
    }
    std::vector<Tensor<T>> enc;
    enc.push_back(run(0, input, true));
    for (int l = 1; l < cfg.levels; ++l) enc.push_back(run(static_cast<std::size_t>(l), enc.back(), true));

    Tensor<T> cur = enc.back();
    std::size_t layer = static_cast<std::size_t>(cfg.levels);
    for (int l = cfg.levels - 2; l >= 0; --l, ++layer) cur = run(layer, upsample_concat(cur, enc[l]), true);
    return run(layer, cur, false);
}

template <class T>
void backward(const BasicRNetWeights<T>& weights, const ForwardCache<T>& cache, const Tensor<T>& grad_residual,
              BasicRNetWeights<T>& grads) {
    const RNetConfig& cfg = weights.config;
    const auto specs = layer_specs(cfg);
    if (cache.layer_inputs.size() != specs.size() || !grads.same_layout(weights))
        fail_input("backward cache or gradient table does not match the weights");

    const std::size_t L = static_cast<std::size_t>(cfg.levels);
    auto conv_bw = [&](std::size_t layer, const Tensor<T>& grad_out, bool need_input_grad) {
        const Tensor<T>& in = cache.layer_inputs[layer];
        Tensor<T> grad_in;
        if (need_input_grad) grad_in = Tensor<T>(in.c, in.h, in.w);
        conv_backward(in, weights.params[2 * layer].value, grad_out, specs[layer].stride,
                      grads.params[2 * layer].value, grads.params[2 * layer + 1].value,
                      need_input_grad ? &grad_in : nullptr);
        return grad_in;
    };

    std::vector<Tensor<T>> grad_enc(L);
    for (std::size_t l = 0; l < L; ++l) {
        const auto& e = cache.layer_outputs[l];
        grad_enc[l] = Tensor<T>(e.c, e.h, e.w);
    }

    const std::size_t head = specs.size() - 1;
    Tensor<T> g = conv_bw(head, grad_residual, true);  // gradient w.r.t. the level-0 decoder (or enc0) output

    // Decoder layers sit at indices L .. head-1 and were built for levels L-2 down to 0.
    for (int l = 0; l + 1 < cfg.levels; ++l) {
        const std::size_t layer = head - 1 - static_cast<std::size_t>(l);
        relu_backward_inplace(g, cache.layer_outputs[layer]);
        Tensor<T> g_cat = conv_bw(layer, g, true);
        const int low_c = cfg.channels(l + 1);
        const int low_h = cache.layer_outputs[l + 1].h;
        const int low_w = cache.layer_outputs[l + 1].w;
        Tensor<T> g_low;
        split_upsample_concat_grad(g_cat, low_c, low_h, low_w, g_low, grad_enc[static_cast<std::size_t>(l)]);
        g = std::move(g_low);
    }
    // g now holds the gradient w.r.t. the deepest encoder output.
    for (std::size_t i = 0; i < g.data.size(); ++i) grad_enc[L - 1].data[i] += g.data[i];

    for (std::size_t l = L; l-- > 0;) {
        relu_backward_inplace(grad_enc[l], cache.layer_outputs[l]);
        Tensor<T> g_in = conv_bw(l, grad_enc[l], l > 0);
        if (l > 0)
            for (std::size_t i = 0; i < g_in.data.size(); ++i) grad_enc[l - 1].data[i] += g_in.data[i];
    }
}

template Tensor<float> forward(const BasicRNetWeights<float>&, const Tensor<float>&, ForwardCache<float>*);
template Tensor<double> forward(const BasicRNetWeights<double>&, const Tensor<double>&, ForwardCache<double>*);
template void backward(const BasicRNetWeights<float>&, const ForwardCache<float>&, const Tensor<float>&,
                       BasicRNetWeights<float>&);
template void backward(const BasicRNetWeights<double>&, const ForwardCache<double>&, const Tensor<double>&,
                       BasicRNetWeights<double>&);

namespace {

double lower_median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

} // namespace

template <class T>
BasicDepthMap<T> refine_view(const BasicRNetWeights<T>& weights, const ImageTensor& rgb, const DepthMap& depth_in,
                             std::span<const float> log_noise, RefineCache<T>* cache) {
    const int H = depth_in.height;
    const int W = depth_in.width;
    if (rgb.height() != H || rgb.width() != W) fail_input("rgb and depth dimensions differ");
    if (rgb.channels() != 1 && rgb.channels() != 3) fail_input("refine expects a gray or RGB image");
    if (!log_noise.empty() && log_noise.size() != depth_in.size()) fail_input("noise field size mismatch");

    std::vector<double> noisy_log(depth_in.size(), 0.0);
    std::vector<double> noisy;
    noisy.reserve(depth_in.size());
    for (std::size_t i = 0; i < depth_in.size(); ++i) {
        if (!depth_in.valid[i]) continue;
        const double d = static_cast<double>(depth_in.depth[i]) * (log_noise.empty() ? 1.0 : std::exp(log_noise[i]));
        noisy_log[i] = std::log(d);
        noisy.push_back(d);
    }
    if (noisy.empty()) fail_input("refine needs at least one valid depth pixel");
    const double log_median = std::log(lower_median(std::move(noisy)));

    const int m = weights.config.size_multiple();
    const int ph = (H + m - 1) / m * m;
    const int pw = (W + m - 1) / m * m;
    Tensor<T> input(kRNetInputChannels, ph, pw);
    for (int y = 0; y < ph; ++y) {
        const int sy = reflect_index(y, H);
        for (int x = 0; x < pw; ++x) {
            const int sx = reflect_index(x, W);
            const std::size_t o = static_cast<std::size_t>(y) * pw + x;
            for (int c = 0; c < 3; ++c)
                input.plane(c)[o] = static_cast<T>(rgb.at(rgb.channels() == 1 ? 0 : c, sy, sx));
            const std::size_t si = depth_in.index(sy, sx);
            input.plane(3)[o] = depth_in.valid[si] ? static_cast<T>(noisy_log[si] - log_median) : T(0);
        }
    }

    ForwardCache<T> local;
    Tensor<T> r = forward(weights, input, cache ? &cache->net : &local);

    const T clamp = static_cast<T>(weights.config.residual_clamp);
    BasicDepthMap<T> out(H, W);
    std::vector<T> residual(depth_in.size(), T(0));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = depth_in.index(y, x);
            residual[i] = r.data[static_cast<std::size_t>(y) * pw + x];
            if (!depth_in.valid[i]) continue;
            const T rc = std::clamp(residual[i], -clamp, clamp);
            out.depth[i] = static_cast<T>(depth_in.depth[i]) * std::exp(rc);
            out.valid[i] = 1;
        }
    }
    if (cache) {
        cache->height = H;
        cache->width = W;
        cache->padded_h = ph;
        cache->padded_w = pw;
        cache->residual = std::move(residual);
        cache->refined = out;
    }
    return out;
}

template <class T>
void refine_view_backward(const BasicRNetWeights<T>& weights, const RefineCache<T>& cache,
                          const BasicDepthMap<T>& grad_refined, BasicRNetWeights<T>& grads) {
    if (grad_refined.height != cache.height || grad_refined.width != cache.width)
        fail_input("refine gradient dims do not match the cached view");
    const T clamp = static_cast<T>(weights.config.residual_clamp);
    Tensor<T> grad_r(1, cache.padded_h, cache.padded_w);
    bool any = false;
    for (int y = 0; y < cache.height; ++y) {
        for (int x = 0; x < cache.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * cache.width + x;
            if (!cache.refined.valid[i]) continue;
            const T r = cache.residual[i];
            if (r <= -clamp || r >= clamp) continue;
            const T g = grad_refined.depth[i] * cache.refined.depth[i];
            grad_r.data[static_cast<std::size_t>(y) * cache.padded_w + x] = g;
            any = any || g != T(0);
        }
    }
    if (!any) return;
    backward(weights, cache.net, grad_r, grads);
}

template BasicDepthMap<float> refine_view(const BasicRNetWeights<float>&, const ImageTensor&, const DepthMap&,
                                          std::span<const float>, RefineCache<float>*);
template BasicDepthMap<double> refine_view(const BasicRNetWeights<double>&, const ImageTensor&, const DepthMap&,
                                           std::span<const float>, RefineCache<double>*);
template void refine_view_backward(const BasicRNetWeights<float>&, const RefineCache<float>&,
                                   const BasicDepthMap<float>&, BasicRNetWeights<float>&);
template void refine_view_backward(const BasicRNetWeights<double>&, const RefineCache<double>&,
                                   const BasicDepthMap<double>&, BasicRNetWeights<double>&);

std::vector<float> draw_log_noise(int height, int width, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) fail_input("noise sigma must be non-negative");
    if (sigma == 0.0) return {};
    std::vector<float> noise(static_cast<std::size_t>(height) * width);
    for (auto& v : noise) v = static_cast<float>(rng.normal() * sigma);
    return noise;
}

DepthMap refine(const RNetWeights& weights, const ImageTensor& rgb, const DepthMap& depth_in, double sigma, Rng& rng) {
    const auto noise = draw_log_noise(depth_in.height, depth_in.width, sigma, rng);
    return refine_view(weights, rgb, depth_in, noise);
}

OptimState OptimState::for_weights(const RNetWeights& w, const AdamWConfig& cfg) {
    OptimState s;
    s.config = cfg;
    for (const auto& p : w.params) {
        s.m.emplace_back(p.value.size(), 0.0f);
        s.v.emplace_back(p.value.size(), 0.0f);
    }
    return s;
}

void adamw_step(RNetWeights& weights, const RNetWeights& grads, OptimState& state) {
    if (!weights.same_layout(grads)) fail_input("gradient table does not match the weights");
    if (state.m.size() != weights.params.size() || state.v.size() != weights.params.size())
        fail_input("optimizer state does not match the weights");
    for (std::size_t i = 0; i < weights.params.size(); ++i)
        if (state.m[i].size() != weights.params[i].value.size() || state.v[i].size() != weights.params[i].value.size())
            fail_input("optimizer moment shape mismatch for " + weights.params[i].name);
    if (!grads.all_finite()) fail_numeric("non-finite gradient; optimizer step rejected");

    const AdamWConfig& c = state.config;
    const std::uint64_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < weights.params.size(); ++i) {
        auto& w = weights.params[i].value;
        const auto& g = grads.params[i].value;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            double wj = w[j];
            wj -= c.lr * c.weight_decay * wj;
            const double gj = g[j];
            const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            wj -= c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.epsilon);
            w[j] = static_cast<float>(wj);
        }
    }
    state.step = t;
}

} // namespace multidepth
