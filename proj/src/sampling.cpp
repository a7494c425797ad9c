#include "multidepth/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace multidepth {

void SamplerConfig::validate() const {
    if (s_pud < 1) fail_input("s_pud must be >= 1");
    if (n_r < 0 || n_s < 0) fail_input("sample counts must be non-negative");
    if (!(crop_scale_lo > 0.0) || !(crop_scale_hi <= 1.0) || crop_scale_lo > crop_scale_hi)
        fail_input("crop scale range must satisfy 0 < lo <= hi <= 1");
    if (!(jitter_brightness >= 0.0) || !(jitter_contrast >= 0.0) || jitter_contrast >= 1.0)
        fail_input("jitter bounds must be non-negative (contrast below 1)");
}

void MaskSet::add(std::string id, Mask mask) {
    if (masks.empty() && ids.empty() && height == 0 && width == 0) {
        height = mask.height;
        width = mask.width;
    }
    if (mask.height != height || mask.width != width) fail_input("mask '" + id + "' dimensions differ from the set");
    ids.push_back(std::move(id));
    masks.push_back(std::move(mask));
}

void MaskSet::validate() const {
    if (ids.size() != masks.size()) fail_input("mask ids and masks differ in count");
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].height != height || masks[i].width != width)
            fail_input("mask '" + ids[i] + "' dimensions differ from the set");
        if (masks[i].count() == 0) fail_input("mask '" + ids[i] + "' is empty");
    }
}

const char* to_string(SampleKind kind) {
    switch (kind) {
    case SampleKind::Full: return "full";
    case SampleKind::Pud: return "pud";
    case SampleKind::Crop: return "crop";
    case SampleKind::Seg: return "seg";
    }
    return "?";
}

template <class T>
std::vector<BasicImage<T>> pixel_unshuffle(const BasicImage<T>& img, int s) {
    if (s <= 0) fail_input("pixel_unshuffle scale must be positive");
    const int sh = img.height() / s;
    const int sw = img.width() / s;
    if (sh == 0 || sw == 0) fail_input("image smaller than the unshuffle scale");
    const int oy = pud_crop_offset(img.height(), s);
    const int ox = pud_crop_offset(img.width(), s);

    std::vector<BasicImage<T>> subs;
    subs.reserve(static_cast<std::size_t>(s) * s);
    for (int i = 0; i < s * s; ++i) {
        const int dx = i % s;
        const int dy = i / s;
        BasicImage<T> sub(img.channels(), sh, sw);
        for (int c = 0; c < img.channels(); ++c)
            for (int y = 0; y < sh; ++y)
                for (int x = 0; x < sw; ++x) sub.at(c, y, x) = img.at(c, oy + s * y + dy, ox + s * x + dx);
        subs.push_back(std::move(sub));
    }
    return subs;
}

template <class T>
BasicImage<T> pixel_shuffle(const std::vector<BasicImage<T>>& subs, int s) {
    if (s <= 0) fail_input("pixel_shuffle scale must be positive");
    if (subs.size() != static_cast<std::size_t>(s) * s) fail_input("pixel_shuffle needs exactly s*s sub-images");
    const int c = subs[0].channels();
    const int sh = subs[0].height();
    const int sw = subs[0].width();
    for (const auto& sub : subs)
        if (sub.channels() != c || sub.height() != sh || sub.width() != sw)
            fail_input("pixel_shuffle sub-image dimensions differ");

    BasicImage<T> out(c, sh * s, sw * s);
    for (int i = 0; i < s * s; ++i) {
        const int dx = i % s;
        const int dy = i / s;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < sh; ++y)
                for (int x = 0; x < sw; ++x) out.at(ch, s * y + dy, s * x + dx) = subs[i].at(ch, y, x);
    }
    return out;
}

template <class T>
std::vector<BasicDepthMap<T>> pixel_unshuffle_depth(const BasicDepthMap<T>& d, int s) {
    if (s <= 0) fail_input("pixel_unshuffle scale must be positive");
    const int sh = d.height / s;
    const int sw = d.width / s;
    if (sh == 0 || sw == 0) fail_input("depth map smaller than the unshuffle scale");
    const int oy = pud_crop_offset(d.height, s);
    const int ox = pud_crop_offset(d.width, s);

    std::vector<BasicDepthMap<T>> subs;
    for (int i = 0; i < s * s; ++i) {
        BasicDepthMap<T> sub(sh, sw);
        for (int y = 0; y < sh; ++y) {
            for (int x = 0; x < sw; ++x) {
                const std::size_t src = d.index(oy + s * y + i / s, ox + s * x + i % s);
                sub.depth[sub.index(y, x)] = d.depth[src];
                sub.valid[sub.index(y, x)] = d.valid[src];
            }
        }
        subs.push_back(std::move(sub));
    }
    return subs;
}

template <class T>
BasicDepthMap<T> pixel_shuffle_depth(const std::vector<BasicDepthMap<T>>& subs, int s) {
    if (s <= 0) fail_input("pixel_shuffle scale must be positive");
    if (subs.size() != static_cast<std::size_t>(s) * s) fail_input("pixel_shuffle needs exactly s*s sub-maps");
    const int sh = subs[0].height;
    const int sw = subs[0].width;
    for (const auto& sub : subs)
        if (sub.height != sh || sub.width != sw) fail_input("pixel_shuffle sub-map dimensions differ");

    BasicDepthMap<T> out(sh * s, sw * s);
    for (int i = 0; i < s * s; ++i) {
        for (int y = 0; y < sh; ++y) {
            for (int x = 0; x < sw; ++x) {
                const std::size_t dst = out.index(s * y + i / s, s * x + i % s);
                out.depth[dst] = subs[i].depth[subs[i].index(y, x)];
                out.valid[dst] = subs[i].valid[subs[i].index(y, x)];
            }
        }
    }
    return out;
}

template std::vector<BasicImage<float>> pixel_unshuffle(const BasicImage<float>&, int);
template std::vector<BasicImage<double>> pixel_unshuffle(const BasicImage<double>&, int);
template BasicImage<float> pixel_shuffle(const std::vector<BasicImage<float>>&, int);
template BasicImage<double> pixel_shuffle(const std::vector<BasicImage<double>>&, int);
template std::vector<BasicDepthMap<float>> pixel_unshuffle_depth(const BasicDepthMap<float>&, int);
template std::vector<BasicDepthMap<double>> pixel_unshuffle_depth(const BasicDepthMap<double>&, int);
template BasicDepthMap<float> pixel_shuffle_depth(const std::vector<BasicDepthMap<float>>&, int);
template BasicDepthMap<double> pixel_shuffle_depth(const std::vector<BasicDepthMap<double>>&, int);

namespace {

void check_inputs(const ImageTensor& rgb, const DepthMap& depth) {
    if (rgb.height() != depth.height || rgb.width() != depth.width)
        fail_input("rgb and depth dimensions differ");
    if (rgb.height() < 1 || rgb.width() < 1) fail_input("empty input image");
}

Mask coverage_of(const Alignment& a, int sample_h, int sample_w, int full_h, int full_w) {
    Mask m(full_h, full_w);
    for (int y = 0; y < sample_h; ++y)
        for (int x = 0; x < sample_w; ++x) m.set(a.full_y(y), a.full_x(x), true);
    return m;
}

} // namespace

Sample full_sample(const ImageTensor& rgb, const DepthMap& depth) {
    check_inputs(rgb, depth);
    Sample s;
    s.kind = SampleKind::Full;
    s.rgb = rgb;
    s.depth = depth;
    s.coverage = Mask(depth.height, depth.width, true);
    return s;
}

std::vector<Sample> pud_samples(const ImageTensor& rgb, const DepthMap& depth, int s) {
    check_inputs(rgb, depth);
    auto rgb_subs = pixel_unshuffle(rgb, s);
    auto depth_subs = pixel_unshuffle_depth(depth, s);
    const int oy = pud_crop_offset(depth.height, s);
    const int ox = pud_crop_offset(depth.width, s);

    std::vector<Sample> out;
    for (int i = 0; i < s * s; ++i) {
        Sample smp;
        smp.kind = SampleKind::Pud;
        smp.index = i;
        smp.alignment = {ox, oy, s, i % s, i / s};
        smp.rgb = std::move(rgb_subs[i]);
        smp.depth = std::move(depth_subs[i]);
        smp.coverage = coverage_of(smp.alignment, smp.depth.height, smp.depth.width, depth.height, depth.width);
        out.push_back(std::move(smp));
    }
    return out;
}

std::vector<Sample> random_subsample(const ImageTensor& rgb, const DepthMap& depth, const SamplerConfig& cfg,
                                     Rng& rng) {
    cfg.validate();
    check_inputs(rgb, depth);
    const int H = depth.height;
    const int W = depth.width;

    std::vector<Sample> out;
    for (int j = 0; j < cfg.n_r; ++j) {
        // Draw order per crop: scale, x, y, brightness, contrast.
        const double scale = cfg.crop_scale_lo == cfg.crop_scale_hi ? cfg.crop_scale_lo
                                                                     : rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi);
        const int w = std::clamp(static_cast<int>(std::lround(scale * W)), 1, W);
        const int h = std::clamp(static_cast<int>(std::lround(scale * H)), 1, H);
        const int x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(W - w + 1)));
        const int y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(H - h + 1)));
        const double b = rng.uniform(-cfg.jitter_brightness, cfg.jitter_brightness);
        const double c = rng.uniform(1.0 - cfg.jitter_contrast, 1.0 + cfg.jitter_contrast);

        Sample smp;
        smp.kind = SampleKind::Crop;
        smp.index = j;
        smp.rect = {x, y, w, h};
        smp.alignment = {x, y, 1, 0, 0};
        smp.brightness = static_cast<float>(b);
        smp.contrast = static_cast<float>(c);
        smp.rgb = ImageTensor(rgb.channels(), h, w);
        for (int ch = 0; ch < rgb.channels(); ++ch) {
            for (int yy = 0; yy < h; ++yy) {
                for (int xx = 0; xx < w; ++xx) {
                    const double v = rgb.at(ch, y + yy, x + xx);
                    smp.rgb.at(ch, yy, xx) = static_cast<float>(std::clamp(c * (v - 0.5) + 0.5 + b, 0.0, 1.0));
                }
            }
        }
        smp.depth = DepthMap(h, w);
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                smp.depth.at(yy, xx) = depth.at(y + yy, x + xx);
                smp.depth.valid[smp.depth.index(yy, xx)] = depth.valid[depth.index(y + yy, x + xx)];
            }
        }
        smp.coverage = coverage_of(smp.alignment, h, w, H, W);
        out.push_back(std::move(smp));
    }
    return out;
}

SampleBatch select_masks(const MaskSet& masks, const ImageTensor& rgb, const DepthMap& depth, int n_s, Rng& rng) {
    check_inputs(rgb, depth);
    if (n_s < 0) fail_input("n_s must be non-negative");
    SampleBatch batch;
    if (masks.empty()) {
        batch.masks_missing = n_s > 0;
        return batch;
    }
    if (masks.height != depth.height || masks.width != depth.width)
        fail_input("mask set dimensions differ from the image");

    // Partial Fisher-Yates: the first `take` entries are a uniform draw
    // without replacement.
    std::vector<std::size_t> order(masks.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n_s), masks.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.uniform_int(order.size() - i);
        std::swap(order[i], order[j]);
    }

    for (std::size_t t = 0; t < take; ++t) {
        const std::size_t m = order[t];
        const Mask& mask = masks.masks[m];
        Sample smp;
        smp.kind = SampleKind::Seg;
        smp.index = static_cast<int>(m);
        smp.mask_id = masks.ids[m];
        smp.rgb = rgb;
        smp.depth = depth;
        for (int y = 0; y < depth.height; ++y) {
            for (int x = 0; x < depth.width; ++x) {
                if (mask(y, x)) continue;
                for (int c = 0; c < rgb.channels(); ++c) smp.rgb.at(c, y, x) = 0.0f;
                smp.depth.at(y, x) = 0.0f;
                smp.depth.valid[smp.depth.index(y, x)] = 0;
            }
        }
        smp.coverage = mask;
        batch.samples.push_back(std::move(smp));
    }
    return batch;
}

SampleBatch build_sample_batch(const ImageTensor& rgb, const DepthMap& depth, const MaskSet& masks,
                               const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    SampleBatch batch;
    batch.samples.push_back(full_sample(rgb, depth));
    if (cfg.s_pud > 1) {
        for (auto& s : pud_samples(rgb, depth, cfg.s_pud)) batch.samples.push_back(std::move(s));
    }
    for (auto& s : random_subsample(rgb, depth, cfg, rng)) batch.samples.push_back(std::move(s));
    auto seg = select_masks(masks, rgb, depth, cfg.n_s, rng);
    batch.masks_missing = seg.masks_missing;
    for (auto& s : seg.samples) batch.samples.push_back(std::move(s));
    return batch;
}

template <class T>
BasicDepthMap<T> sample_view(const Sample& sample, const BasicDepthMap<T>& full) {
    const int h = sample.depth.height;
    const int w = sample.depth.width;
    BasicDepthMap<T> out(h, w);
    const Alignment& a = sample.alignment;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int fy = a.full_y(y);
            const int fx = a.full_x(x);
            if (sample.kind == SampleKind::Seg && !sample.coverage(fy, fx)) continue;
            out.depth[out.index(y, x)] = full.depth[full.index(fy, fx)];
            out.valid[out.index(y, x)] = full.valid[full.index(fy, fx)];
        }
    }
    return out;
}

template BasicDepthMap<float> sample_view(const Sample&, const BasicDepthMap<float>&);
template BasicDepthMap<double> sample_view(const Sample&, const BasicDepthMap<double>&);

} // namespace multidepth
