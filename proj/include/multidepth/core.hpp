#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace multidepth {

enum class ErrorKind { InvalidInput, Numeric, Io };

/// Library-wide exception. The kind maps onto CLI exit codes
/// (InvalidInput/Io -> 2, Numeric -> 3).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_input(const std::string& what) { throw Error(ErrorKind::InvalidInput, what); }
[[noreturn]] inline void fail_numeric(const std::string& what) { throw Error(ErrorKind::Numeric, what); }
[[noreturn]] inline void fail_io(const std::string& what) { throw Error(ErrorKind::Io, what); }

/// C x H x W grid, row-major per channel.
template <class T>
class BasicImage {
public:
    BasicImage() = default;
    BasicImage(int channels, int height, int width, T fill = T(0))
        : channels_(channels), height_(height), width_(width),
          data_(static_cast<std::size_t>(checked_size(channels, height, width)), fill) {}
    BasicImage(int channels, int height, int width, std::vector<T> data)
        : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
        if (data_.size() != static_cast<std::size_t>(checked_size(channels, height, width)))
            fail_input("image data length does not match channels*height*width");
    }

    int channels() const noexcept { return channels_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const noexcept { return data_.empty(); }

    T& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
    const T& at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }

    std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
    std::span<const T> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool operator==(const BasicImage&) const = default;

private:
    static long long checked_size(int c, int h, int w) {
        if (c < 0 || h < 0 || w < 0) fail_input("negative image dimension");
        return static_cast<long long>(c) * h * w;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Unit-interval intensity image (RGB or gray).
using ImageTensor = BasicImage<float>;

/// Throws unless every value is finite and inside [0, 1].
void validate_image(const ImageTensor& img);

/// Boolean H x W grid.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int h, int w, bool fill = false)
        : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

    bool operator()(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

/// Metric depth in meters plus a validity mask. Invalid pixels carry no
/// information and are skipped by every loss and metric.
template <class T>
struct BasicDepthMap {
    int height = 0;
    int width = 0;
    std::vector<T> depth;
    std::vector<std::uint8_t> valid;

    BasicDepthMap() = default;
    BasicDepthMap(int h, int w, T fill = T(0), bool is_valid = false)
        : height(h), width(w), depth(static_cast<std::size_t>(h) * w, fill),
          valid(static_cast<std::size_t>(h) * w, is_valid ? 1 : 0) {}

    std::size_t size() const noexcept { return depth.size(); }
    std::size_t index(int y, int x) const noexcept { return static_cast<std::size_t>(y) * width + x; }
    T& at(int y, int x) { return depth[index(y, x)]; }
    const T& at(int y, int x) const { return depth[index(y, x)]; }
    bool is_valid(int y, int x) const { return valid[index(y, x)] != 0; }
    std::size_t valid_count() const;

    bool operator==(const BasicDepthMap&) const = default;
};

using DepthMap = BasicDepthMap<float>;

/// Throws if a valid pixel holds a non-finite or non-positive depth.
void validate_depth(const DepthMap& d);

template <class To, class From>
BasicDepthMap<To> depth_cast(const BasicDepthMap<From>& d) {
    BasicDepthMap<To> out(d.height, d.width);
    for (std::size_t i = 0; i < d.size(); ++i) out.depth[i] = static_cast<To>(d.depth[i]);
    out.valid = d.valid;
    return out;
}

/// Pinhole intrinsics in pixels; pixel centers sit at integer coordinates.
struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    void validate() const;
    bool operator==(const CameraIntrinsics&) const = default;
};

/// Bilinear upscaling with half-pixel centers; axes that shrink use area
/// averaging instead. Output is clamped to [0, 1].
ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);

/// Same kernels as resize_bilinear, but only valid pixels contribute and the
/// weights are renormalized over them. An output pixel with no valid
/// contributor is invalid.
DepthMap resize_depth(const DepthMap& d, int out_h, int out_w);

/// Separable Gaussian, kernel truncated at +-ceil(3 sigma) and renormalized,
/// symmetric ("d c b a | a b c d") border reflection. sigma == 0 is identity.
ImageTensor gaussian_blur(const ImageTensor& img, float sigma);

/// Validity-aware Gaussian blur of a depth map (weights renormalized over
/// valid pixels; invalid pixels stay invalid).
DepthMap gaussian_blur_depth(const DepthMap& d, float sigma);

/// Normalized 1D Gaussian taps for offsets -radius..radius.
std::vector<double> gaussian_kernel(float sigma);

/// Maps any integer index onto [0, n) by symmetric reflection.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

/// One output sample of a separable resampling kernel.
struct ResampleTap {
    int src;
    double weight;
};

/// Per output index, the source taps for resizing one axis from `in` to `out`.
std::vector<std::vector<ResampleTap>> resample_taps(int in, int out);

} // namespace multidepth
