#include "multidepth/core.hpp"

#include <algorithm>
#include <cmath>

namespace multidepth {

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

template <class T>
std::size_t BasicDepthMap<T>::valid_count() const {
    return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t b) { return b != 0; }));
}

template struct BasicDepthMap<float>;
template struct BasicDepthMap<double>;

void validate_image(const ImageTensor& img) {
    for (float v : img.data()) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) fail_input("image value outside [0, 1]");
    }
}

void validate_depth(const DepthMap& d) {
    if (d.depth.size() != static_cast<std::size_t>(d.height) * d.width || d.valid.size() != d.depth.size())
        fail_input("depth map buffers do not match its dimensions");
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.valid[i] && !(std::isfinite(d.depth[i]) && d.depth[i] > 0.0f))
            fail_input("valid depth pixel is not finite and positive");
    }
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) fail_input("focal lengths must be positive");
    if (!std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) || !std::isfinite(cy))
        fail_input("intrinsics must be finite");
}

std::vector<std::vector<ResampleTap>> resample_taps(int in, int out) {
    if (in < 1 || out < 1) fail_input("resample needs non-empty source and target");
    std::vector<std::vector<ResampleTap>> taps(static_cast<std::size_t>(out));
    if (in == out) {
        for (int i = 0; i < out; ++i) taps[i].push_back({i, 1.0});
        return taps;
    }
    const double ratio = static_cast<double>(in) / out;
    if (out > in) {
        for (int i = 0; i < out; ++i) {
            double src = (i + 0.5) * ratio - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const int lo = static_cast<int>(std::floor(src));
            const int hi = std::min(lo + 1, in - 1);
            const double frac = src - lo;
            if (hi == lo || frac == 0.0) {
                taps[i].push_back({lo, 1.0});
            } else {
                taps[i].push_back({lo, 1.0 - frac});
                taps[i].push_back({hi, frac});
            }
        }
        return taps;
    }
    // Area averaging: output cell i covers [i*ratio, (i+1)*ratio) in source units.
    for (int i = 0; i < out; ++i) {
        const double a = i * ratio;
        const double b = (i + 1) * ratio;
        const int first = static_cast<int>(std::floor(a));
        const int last = std::min(static_cast<int>(std::ceil(b)) - 1, in - 1);
        for (int s = first; s <= last; ++s) {
            const double overlap = std::min(b, s + 1.0) - std::max(a, static_cast<double>(s));
            if (overlap > 0.0) taps[i].push_back({s, overlap / ratio});
        }
    }
    return taps;
}

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
    if (img.empty() || img.height() < 1 || img.width() < 1) fail_input("resize of an empty image");
    if (out_h < 1 || out_w < 1) fail_input("resize target must be at least 1x1");
    if (out_h == img.height() && out_w == img.width()) return img;

    const auto ty = resample_taps(img.height(), out_h);
    const auto tx = resample_taps(img.width(), out_w);
    ImageTensor out(img.channels(), out_h, out_w);
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (const auto& wy : ty[y])
                    for (const auto& wx : tx[x]) acc += wy.weight * wx.weight * img.at(c, wy.src, wx.src);
                out.at(c, y, x) = std::clamp(static_cast<float>(acc), 0.0f, 1.0f);
            }
        }
    }
    return out;
}

DepthMap resize_depth(const DepthMap& d, int out_h, int out_w) {
    if (d.height < 1 || d.width < 1) fail_input("resize of an empty depth map");
    if (out_h < 1 || out_w < 1) fail_input("resize target must be at least 1x1");
    if (out_h == d.height && out_w == d.width) return d;

    const auto ty = resample_taps(d.height, out_h);
    const auto tx = resample_taps(d.width, out_w);
    DepthMap out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            double wsum = 0.0;
            for (const auto& wy : ty[y]) {
                for (const auto& wx : tx[x]) {
                    if (!d.is_valid(wy.src, wx.src)) continue;
                    const double w = wy.weight * wx.weight;
                    acc += w * d.at(wy.src, wx.src);
                    wsum += w;
                }
            }
            if (wsum > 0.0) {
                out.at(y, x) = static_cast<float>(acc / wsum);
                out.valid[out.index(y, x)] = 1;
            }
        }
    }
    return out;
}

std::vector<double> gaussian_kernel(float sigma) {
    if (!(sigma >= 0.0f)) fail_input("gaussian sigma must be non-negative");
    if (sigma == 0.0f) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (static_cast<double>(sigma) * sigma));
        k[i + radius] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

namespace {

// One separable pass along x (horizontal=true) or y, with optional validity.
void blur_pass(std::span<const float> src, std::span<const std::uint8_t> valid, std::span<float> dst,
               std::span<std::uint8_t> dst_valid, int h, int w, const std::vector<double>& k, bool horizontal) {
    const int radius = static_cast<int>(k.size() / 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            double wsum = 0.0;
            for (int o = -radius; o <= radius; ++o) {
                const int sy = horizontal ? y : reflect_index(y + o, h);
                const int sx = horizontal ? reflect_index(x + o, w) : x;
                const std::size_t si = static_cast<std::size_t>(sy) * w + sx;
                if (!valid.empty() && !valid[si]) continue;
                acc += k[o + radius] * src[si];
                wsum += k[o + radius];
            }
            const std::size_t di = static_cast<std::size_t>(y) * w + x;
            if (valid.empty()) {
                dst[di] = static_cast<float>(acc);
            } else if (wsum > 0.0) {
                dst[di] = static_cast<float>(acc / wsum);
                dst_valid[di] = 1;
            } else {
                dst[di] = 0.0f;
                dst_valid[di] = 0;
            }
        }
    }
}

} // namespace

ImageTensor gaussian_blur(const ImageTensor& img, float sigma) {
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1) return img;
    ImageTensor tmp(img.channels(), img.height(), img.width());
    ImageTensor out(img.channels(), img.height(), img.width());
    for (int c = 0; c < img.channels(); ++c) {
        blur_pass(img.plane(c), {}, tmp.plane(c), {}, img.height(), img.width(), k, true);
        blur_pass(tmp.plane(c), {}, out.plane(c), {}, img.height(), img.width(), k, false);
    }
    return out;
}

DepthMap gaussian_blur_depth(const DepthMap& d, float sigma) {
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1) return d;
    DepthMap tmp(d.height, d.width);
    DepthMap out(d.height, d.width);
    blur_pass(d.depth, d.valid, tmp.depth, tmp.valid, d.height, d.width, k, true);
    blur_pass(tmp.depth, tmp.valid, out.depth, out.valid, d.height, d.width, k, false);
    // Pixels that were invalid in the source stay invalid.
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!d.valid[i]) {
            out.valid[i] = 0;
            out.depth[i] = 0.0f;
        }
    }
    return out;
}

} // namespace multidepth
