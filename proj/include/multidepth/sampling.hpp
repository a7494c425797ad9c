#pragma once

#include <string>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/rng.hpp"

namespace multidepth {

struct SamplerConfig {
    int s_pud = 2;
    int n_r = 3;
    double crop_scale_lo = 0.2;
    double crop_scale_hi = 0.7;
    double jitter_brightness = 0.1;  // max |b|
    double jitter_contrast = 0.1;    // c in [1 - jc, 1 + jc]
    int n_s = 4;

    void validate() const;
    bool operator==(const SamplerConfig&) const = default;
};

/// Instance masks sharing the image dimensions.
struct MaskSet {
    int height = 0;
    int width = 0;
    std::vector<std::string> ids;
    std::vector<Mask> masks;

    std::size_t size() const noexcept { return masks.size(); }
    bool empty() const noexcept { return masks.empty(); }
    void add(std::string id, Mask mask);
    void validate() const;
};

enum class SampleKind { Full, Pud, Crop, Seg };

const char* to_string(SampleKind kind);

struct CropRect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    bool operator==(const CropRect&) const = default;
};

/// Sample pixel (x, y) covers full-resolution pixel
/// (offset_x + stride * x + phase_x, offset_y + stride * y + phase_y).
/// Seg samples additionally restrict coverage to their mask.
struct Alignment {
    int offset_x = 0;
    int offset_y = 0;
    int stride = 1;
    int phase_x = 0;
    int phase_y = 0;

    int full_x(int x) const { return offset_x + stride * x + phase_x; }
    int full_y(int y) const { return offset_y + stride * y + phase_y; }
    bool operator==(const Alignment&) const = default;
};

struct Sample {
    SampleKind kind = SampleKind::Full;
    int index = 0;            // Pud sub-grid index, crop index, or position in the mask set
    CropRect rect;            // Crop only
    std::string mask_id;      // Seg only
    ImageTensor rgb;
    DepthMap depth;
    Mask coverage;            // full-resolution
    Alignment alignment;
    float brightness = 0.0f;  // jitter applied to rgb (Crop only)
    float contrast = 1.0f;
};

struct SampleBatch {
    std::vector<Sample> samples;
    bool masks_missing = false;  // segmentation was requested but no masks were available
};

/// Splits an image into s*s sub-images. Sub-image i holds the source pixels
/// at (s x + i % s, s y + i / s). Dimensions not divisible by s are first
/// center-cropped to the largest divisible size.
template <class T>
std::vector<BasicImage<T>> pixel_unshuffle(const BasicImage<T>& img, int s);

/// Inverse of pixel_unshuffle.
template <class T>
BasicImage<T> pixel_shuffle(const std::vector<BasicImage<T>>& subs, int s);

template <class T>
std::vector<BasicDepthMap<T>> pixel_unshuffle_depth(const BasicDepthMap<T>& d, int s);

template <class T>
BasicDepthMap<T> pixel_shuffle_depth(const std::vector<BasicDepthMap<T>>& subs, int s);

/// Offset of the center crop applied before unshuffling (full, s) -> offset.
inline int pud_crop_offset(int full, int s) { return (full - (full / s) * s) / 2; }

/// The Full sample: the unmodified input with identity coverage.
Sample full_sample(const ImageTensor& rgb, const DepthMap& depth);

/// All s*s pixel-unshuffle samples, in index order.
std::vector<Sample> pud_samples(const ImageTensor& rgb, const DepthMap& depth, int s);

/// n_r aspect-preserving random crops with brightness/contrast jitter on rgb.
std::vector<Sample> random_subsample(const ImageTensor& rgb, const DepthMap& depth, const SamplerConfig& cfg,
                                     Rng& rng);

/// Draws min(n_s, |masks|) masks without replacement. Out-of-mask rgb is
/// zeroed and out-of-mask depth invalidated.
SampleBatch select_masks(const MaskSet& masks, const ImageTensor& rgb, const DepthMap& depth, int n_s, Rng& rng);

/// [Full] + s^2 Pud + n_r Crop + <= n_s Seg samples, in that order.
SampleBatch build_sample_batch(const ImageTensor& rgb, const DepthMap& depth, const MaskSet& masks,
                               const SamplerConfig& cfg, Rng& rng);

/// Cuts a sample's view out of any full-resolution depth-like grid using its
/// alignment (and mask, for Seg samples).
template <class T>
BasicDepthMap<T> sample_view(const Sample& sample, const BasicDepthMap<T>& full);

} // namespace multidepth
