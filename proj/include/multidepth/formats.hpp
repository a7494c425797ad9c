#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/geometry.hpp"
#include "multidepth/rnet.hpp"
#include "multidepth/sampling.hpp"

namespace multidepth {

namespace fs = std::filesystem;

/// Raw decoded PNG samples (palette indices when the file is indexed).
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;   // 1 or 3 (alpha is dropped)
    int bit_depth = 8;  // 8 or 16
    bool indexed = false;
    std::vector<std::uint16_t> samples;  // interleaved, row-major
};

PngImage read_png(const fs::path& path);
void write_png(const fs::path& path, const PngImage& img);

/// 8/16-bit gray or RGB PNG, intensities divided by the bit-depth maximum.
ImageTensor load_image_png(const fs::path& path);
void save_image_png(const fs::path& path, const ImageTensor& img, int bit_depth = 8);

enum class DepthUnit { MillimeterPng16, PfmMeters };

/// .pfm -> PfmMeters, anything else -> MillimeterPng16.
DepthUnit depth_unit_for(const fs::path& path);

/// PNG16: value / 1000 m, 0 = invalid. PFM: header scale sign selects the
/// byte order; non-finite or non-positive values become invalid, and the
/// number of negative values is written to `negative_count` when given.
DepthMap load_depth(const fs::path& path, DepthUnit unit, std::size_t* negative_count = nullptr);
DepthMap load_depth(const fs::path& path);

/// PNG16 stores round(1000 d) clamped to [1, 65535] on valid pixels, 0 on
/// invalid ones. PFM is written little-endian ("Pf", scale -1), invalid as 0.
void save_depth(const fs::path& path, const DepthMap& depth, DepthUnit unit);
void save_depth(const fs::path& path, const DepthMap& depth);

/// JSON object {"fx", "fy", "cx", "cy"}; unknown fields are ignored.
CameraIntrinsics load_intrinsics(const fs::path& path);
CameraIntrinsics parse_intrinsics(const std::string& json_text);
void save_intrinsics(const fs::path& path, const CameraIntrinsics& K);

/// PLY 1.0 with float x/y/z and uchar red/green/blue. Clouds without colors
/// are written white.
void save_ply(const PointCloud& pc, const fs::path& path, bool binary);
PointCloud load_ply(const fs::path& path);

/// Binary tensor table:
///   "MDPT" | u32 version | u32 count | count x (u32 name_len, name bytes,
///   u32 rank, rank x u32 dim, prod(dims) x f32), all little-endian.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
    bool operator==(const NamedTensor&) const = default;
};

struct WeightsFile {
    static constexpr std::uint32_t kVersion = 1;
    std::vector<NamedTensor> entries;

    const NamedTensor* find(const std::string& name) const;
    bool operator==(const WeightsFile&) const = default;
};

std::vector<std::uint8_t> encode_weights(const WeightsFile& file);
WeightsFile decode_weights(const std::vector<std::uint8_t>& bytes);
void save_weights(const WeightsFile& file, const fs::path& path);
WeightsFile load_weights(const fs::path& path);

/// Network parameters plus a "meta.rnet" entry holding
/// (levels, base_channels, depth_noise_sigma, residual_clamp).
WeightsFile to_weights_file(const RNetWeights& weights);
RNetWeights rnet_from_weights_file(const WeightsFile& file);

/// Training checkpoint: weights, AdamW moments ("optim.m.*", "optim.v.*"),
/// step counter and epoch. Hyperparameters are not stored.
WeightsFile to_checkpoint(const RNetWeights& weights, const OptimState& state, std::uint64_t epoch);
void from_checkpoint(const WeightsFile& file, RNetWeights& weights, OptimState& state, std::uint64_t& epoch);

/// Directory of binary PNGs (nonzero = inside, id = file stem, sorted by
/// name), or one indexed/gray PNG8 where every nonzero label is a mask
/// (id = label). All-zero masks are skipped.
MaskSet load_masks(const fs::path& path_or_dir);
void save_masks(const MaskSet& masks, const fs::path& dir);

enum class ResizePolicy { CenterCrop, Letterbox };

/// Brings an RGB-D pair (and masks) to a target resolution. CenterCrop
/// crops to the target aspect ratio then resizes; Letterbox resizes to fit
/// and pads (padding depth invalid, rgb 0, masks false).
struct FittedInput {
    ImageTensor rgb;
    DepthMap depth;
    MaskSet masks;
    CameraIntrinsics K;
};

FittedInput fit_to_resolution(const ImageTensor& rgb, const DepthMap& depth, const MaskSet& masks,
                              const CameraIntrinsics& K, int out_h, int out_w, ResizePolicy policy);

} // namespace multidepth
