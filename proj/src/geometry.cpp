#include "multidepth/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace multidepth {

void PointCloud::validate() const {
    if (!colors.empty() && colors.size() != points.size())
        fail_input("point cloud color count does not match point count");
    for (const auto& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            fail_input("point cloud holds a non-finite coordinate");
    }
}

PointCloud unproject(const DepthMap& depth, const CameraIntrinsics& K, double scale, const ImageTensor* rgb) {
    K.validate();
    if (!(scale > 0.0)) fail_input("unproject scale must be positive");
    if (rgb && (rgb->height() != depth.height || rgb->width() != depth.width))
        fail_input("color image and depth map dimensions differ");

    PointCloud pc;
    pc.points.reserve(depth.valid_count());
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            if (!depth.is_valid(y, x)) continue;
            const double z = scale * static_cast<double>(depth.at(y, x));
            pc.points.push_back({z * (x - K.cx) / K.fx, z * (y - K.cy) / K.fy, z});
            if (rgb) {
                Color3 c{};
                for (int ch = 0; ch < 3; ++ch) {
                    const float v = rgb->at(rgb->channels() == 1 ? 0 : ch, y, x);
                    c[ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
                }
                pc.colors.push_back(c);
            }
        }
    }
    return pc;
}

std::vector<Projection> project(const PointCloud& pc, const CameraIntrinsics& K) {
    K.validate();
    std::vector<Projection> out;
    out.reserve(pc.size());
    for (const auto& p : pc.points) {
        if (!(p.z > 0.0)) {
            out.push_back({});
            continue;
        }
        out.push_back({K.fx * p.x / p.z + K.cx, K.fy * p.y / p.z + K.cy, p.z, true});
    }
    return out;
}

std::array<double, 2> pixel_angles(double x, double y, const CameraIntrinsics& K) {
    const double rx = (x - K.cx) / K.fx;
    const double ry = (y - K.cy) / K.fy;
    const double norm = std::sqrt(rx * rx + ry * ry + 1.0);
    return {std::atan2(rx / norm, 1.0 / norm), std::asin(ry / norm)};
}

template <class T>
BasicSphericalMap<T> to_spherical(const BasicDepthMap<T>& depth, const CameraIntrinsics& K, ZMode mode) {
    K.validate();
    BasicSphericalMap<T> out;
    out.height = depth.height;
    out.width = depth.width;
    out.theta.assign(depth.size(), T(0));
    out.phi.assign(depth.size(), T(0));
    out.z.assign(depth.size(), T(0));
    out.valid = depth.valid;
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const std::size_t i = depth.index(y, x);
            if (!depth.valid[i]) continue;
            const T d = depth.depth[i];
            if (!(d > T(0)) || !std::isfinite(static_cast<double>(d)))
                fail_input("spherical projection of a non-positive depth at pixel (" + std::to_string(x) + ", " +
                           std::to_string(y) + ")");
            const auto angles = pixel_angles(x, y, K);
            out.theta[i] = static_cast<T>(angles[0]);
            out.phi[i] = static_cast<T>(angles[1]);
            out.z[i] = mode == ZMode::Log ? std::log(d) : d;
        }
    }
    return out;
}

template BasicSphericalMap<float> to_spherical(const BasicDepthMap<float>&, const CameraIntrinsics&, ZMode);
template BasicSphericalMap<double> to_spherical(const BasicDepthMap<double>&, const CameraIntrinsics&, ZMode);

} // namespace multidepth
