#include "multidepth/mrcm.hpp"

#include <algorithm>
#include <thread>
#include <utility>

namespace multidepth {

void MrcmConfig::validate() const {
    if (k < 1) fail_input("mrcm k must be >= 1");
    if (min_support < 1) fail_input("mrcm min_support must be >= 1");
}

template <class T>
void BasicPredictionStack<T>::validate() const {
    for (const auto& l : layers) {
        if (l.depth.height != height || l.depth.width != width || l.coverage.height != height ||
            l.coverage.width != width)
            fail_input("prediction layer dimensions differ from the stack");
        for (std::size_t i = 0; i < l.depth.size(); ++i)
            if (l.depth.valid[i] && !l.coverage.bits[i]) fail_input("prediction layer is valid outside its coverage");
    }
}

template struct BasicPredictionStack<float>;
template struct BasicPredictionStack<double>;

template <class T>
BasicLayer<T> align_to_full(const Sample& sample, const BasicDepthMap<T>& refined, int full_h, int full_w) {
    if (refined.height != sample.depth.height || refined.width != sample.depth.width)
        fail_input("refined depth does not match its sample dimensions");
    if (sample.coverage.height != full_h || sample.coverage.width != full_w)
        fail_input("sample coverage does not match the full resolution");

    BasicLayer<T> layer;
    layer.kind = sample.kind;
    layer.coverage = sample.coverage;
    layer.depth = BasicDepthMap<T>(full_h, full_w);
    const Alignment& a = sample.alignment;
    for (int y = 0; y < refined.height; ++y) {
        for (int x = 0; x < refined.width; ++x) {
            const int fy = a.full_y(y);
            const int fx = a.full_x(x);
            if (fy < 0 || fy >= full_h || fx < 0 || fx >= full_w) fail_input("sample alignment leaves the image");
            if (!sample.coverage(fy, fx)) continue;
            const std::size_t si = refined.index(y, x);
            const std::size_t fi = layer.depth.index(fy, fx);
            layer.depth.depth[fi] = refined.depth[si];
            layer.depth.valid[fi] = refined.valid[si];
        }
    }
    return layer;
}

template <class T>
BasicDepthMap<T> align_to_full_backward(const Sample& sample, const BasicDepthMap<T>& grad_layer) {
    BasicDepthMap<T> g(sample.depth.height, sample.depth.width);
    const Alignment& a = sample.alignment;
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            const int fy = a.full_y(y);
            const int fx = a.full_x(x);
            if (!sample.coverage(fy, fx)) continue;
            g.depth[g.index(y, x)] = grad_layer.depth[grad_layer.index(fy, fx)];
            g.valid[g.index(y, x)] = 1;
        }
    }
    return g;
}

template BasicLayer<float> align_to_full(const Sample&, const BasicDepthMap<float>&, int, int);
template BasicLayer<double> align_to_full(const Sample&, const BasicDepthMap<double>&, int, int);
template BasicDepthMap<float> align_to_full_backward(const Sample&, const BasicDepthMap<float>&);
template BasicDepthMap<double> align_to_full_backward(const Sample&, const BasicDepthMap<double>&);

namespace {

struct Entry {
    double value;
    std::size_t layer;
};

// Sorted predictions at one pixel and the [begin, end) window to average.
struct Selection {
    std::vector<Entry> entries;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool valid = false;
};

template <class T>
void select_pixel(const BasicPredictionStack<T>& stack, const MrcmConfig& cfg, std::size_t i, long full_layer,
                  Selection& sel) {
    sel.entries.clear();
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const auto& d = stack.layers[l].depth;
        if (d.valid[i]) sel.entries.push_back({static_cast<double>(d.depth[i]), l});
    }
    const bool full_valid = full_layer >= 0 && stack.layers[static_cast<std::size_t>(full_layer)].depth.valid[i];
    sel.valid = full_layer >= 0 ? full_valid : !sel.entries.empty();
    if (!sel.valid) return;

    if (sel.entries.size() < static_cast<std::size_t>(cfg.min_support) && full_valid) {
        const auto& fd = stack.layers[static_cast<std::size_t>(full_layer)].depth;
        sel.entries.assign(1, {static_cast<double>(fd.depth[i]), static_cast<std::size_t>(full_layer)});
        sel.begin = 0;
        sel.end = 1;
        return;
    }
    // Insertion sort on (value, layer): the sets are small.
    for (std::size_t a = 1; a < sel.entries.size(); ++a) {
        Entry e = sel.entries[a];
        std::size_t b = a;
        while (b > 0 && (sel.entries[b - 1].value > e.value ||
                         (sel.entries[b - 1].value == e.value && sel.entries[b - 1].layer > e.layer))) {
            sel.entries[b] = sel.entries[b - 1];
            --b;
        }
        sel.entries[b] = e;
    }
    const std::size_t m = sel.entries.size();
    const std::size_t k = static_cast<std::size_t>(cfg.k);
    if (m >= k) {
        sel.begin = (m - k) / 2;
        sel.end = sel.begin + k;
    } else {
        sel.begin = 0;
        sel.end = m;
    }
}

template <class T>
long find_full_layer(const BasicPredictionStack<T>& stack) {
    for (std::size_t l = 0; l < stack.layers.size(); ++l)
        if (stack.layers[l].kind == SampleKind::Full) return static_cast<long>(l);
    return -1;
}

} // namespace

double mean_of_k_medians(std::vector<double> values, int k) {
    if (values.empty()) fail_input("mean_of_k_medians of an empty set");
    if (k < 1) fail_input("k must be >= 1");
    std::sort(values.begin(), values.end());
    const std::size_t m = values.size();
    const std::size_t kk = static_cast<std::size_t>(k);
    const std::size_t begin = m >= kk ? (m - kk) / 2 : 0;
    const std::size_t end = m >= kk ? begin + kk : m;
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += values[i];
    return sum / static_cast<double>(end - begin);
}

template <class T>
BasicDepthMap<T> aggregate(const BasicPredictionStack<T>& stack, const MrcmConfig& cfg) {
    cfg.validate();
    stack.validate();
    const long full = find_full_layer(stack);
    BasicDepthMap<T> out(stack.height, stack.width);
    Selection sel;
    for (std::size_t i = 0; i < out.size(); ++i) {
        select_pixel(stack, cfg, i, full, sel);
        if (!sel.valid) continue;
        double sum = 0.0;
        for (std::size_t j = sel.begin; j < sel.end; ++j) sum += sel.entries[j].value;
        out.depth[i] = static_cast<T>(sum / static_cast<double>(sel.end - sel.begin));
        out.valid[i] = 1;
    }
    return out;
}

template <class T>
std::vector<BasicDepthMap<T>> aggregate_backward(const BasicPredictionStack<T>& stack, const MrcmConfig& cfg,
                                                 const BasicDepthMap<T>& grad_out) {
    const long full = find_full_layer(stack);
    std::vector<BasicDepthMap<T>> grads;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) grads.emplace_back(stack.height, stack.width);
    Selection sel;
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        if (grad_out.depth[i] == T(0)) continue;
        select_pixel(stack, cfg, i, full, sel);
        if (!sel.valid) continue;
        const T g = grad_out.depth[i] / static_cast<T>(sel.end - sel.begin);
        for (std::size_t j = sel.begin; j < sel.end; ++j) grads[sel.entries[j].layer].depth[i] += g;
    }
    return grads;
}

template BasicDepthMap<float> aggregate(const BasicPredictionStack<float>&, const MrcmConfig&);
template BasicDepthMap<double> aggregate(const BasicPredictionStack<double>&, const MrcmConfig&);
template std::vector<BasicDepthMap<float>> aggregate_backward(const BasicPredictionStack<float>&, const MrcmConfig&,
                                                              const BasicDepthMap<float>&);
template std::vector<BasicDepthMap<double>> aggregate_backward(const BasicPredictionStack<double>&,
                                                               const MrcmConfig&, const BasicDepthMap<double>&);

DepthMap run_iteration(const IterationSetup& setup, const DepthMap& current, Rng& rng) {
    if (!setup.rgb || !setup.weights) fail_input("iteration setup needs an image and weights");
    if (current.valid_count() == 0) fail_input("current depth has no valid pixel");
    const MaskSet empty_masks;
    const MaskSet& masks = setup.masks ? *setup.masks : empty_masks;

    // All random draws happen here, sequentially, before any fan-out.
    DepthMap noise(current.height, current.width, 0.0f, true);
    if (setup.noise_sigma > 0.0) {
        const auto field = draw_log_noise(current.height, current.width, setup.noise_sigma, rng);
        std::copy(field.begin(), field.end(), noise.depth.begin());
    }
    const SampleBatch batch = build_sample_batch(*setup.rgb, current, masks, setup.sampler, rng);

    std::vector<DepthMap> refined(batch.samples.size());
    auto work = [&](std::size_t i) {
        const Sample& s = batch.samples[i];
        std::vector<float> view_noise;
        if (setup.noise_sigma > 0.0) view_noise = sample_view(s, noise).depth;
        refined[i] = refine_view(*setup.weights, s.rgb, s.depth, view_noise);
        if (setup.hook) setup.hook(s, refined[i]);
    };
    const std::size_t n = batch.samples.size();
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(setup.threads, 1)), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < n; i += threads) work(i);
            });
        for (auto& th : pool) th.join();
    }

    PredictionStack stack;
    stack.height = current.height;
    stack.width = current.width;
    for (std::size_t i = 0; i < n; ++i)
        stack.layers.push_back(align_to_full(batch.samples[i], refined[i], current.height, current.width));
    return aggregate(stack, setup.mrcm);
}

} // namespace multidepth
