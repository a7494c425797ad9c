#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "multidepth/core.hpp"

namespace multidepth {

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    bool operator==(const Point3&) const = default;
};

using Color3 = std::array<std::uint8_t, 3>;

struct PointCloud {
    std::vector<Point3> points;
    std::vector<Color3> colors;  // empty, or one per point

    std::size_t size() const noexcept { return points.size(); }
    void validate() const;
};

/// Back-projects every valid pixel: (s d (x - cx) / fx, s d (y - cy) / fy, s d).
/// Colors are copied from `rgb` (gray is replicated) when given.
PointCloud unproject(const DepthMap& depth, const CameraIntrinsics& K, double scale = 1.0,
                     const ImageTensor* rgb = nullptr);

struct Projection {
    double x = 0.0;
    double y = 0.0;
    double depth = 0.0;
    bool ok = false;  // false for points with z <= 0
};

std::vector<Projection> project(const PointCloud& pc, const CameraIntrinsics& K);

/// How the third spherical coordinate encodes depth.
enum class ZMode { Log, Linear };

/// Per-pixel ray angles and depth coordinate. theta = atan2(r_x, r_z) and
/// phi = asin(r_y) for the normalized ray r = K^-1 (x, y, 1); they depend on
/// the pixel and K only.
template <class T>
struct BasicSphericalMap {
    int height = 0;
    int width = 0;
    std::vector<T> theta;
    std::vector<T> phi;
    std::vector<T> z;
    std::vector<std::uint8_t> valid;
};

using SphericalMap = BasicSphericalMap<double>;

template <class T>
BasicSphericalMap<T> to_spherical(const BasicDepthMap<T>& depth, const CameraIntrinsics& K,
                                  ZMode mode = ZMode::Log);

/// Ray angles of a single pixel.
std::array<double, 2> pixel_angles(double x, double y, const CameraIntrinsics& K);

} // namespace multidepth
