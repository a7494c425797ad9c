#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/geometry.hpp"
#include "multidepth/rng.hpp"
#include "multidepth/sampling.hpp"

namespace multidepth {

/// Axis-aligned box [lo, hi].
struct Box {
    Point3 lo;
    Point3 hi;
};

/// World frame: x right, y down, z forward. The room spans [0, room_width] x
/// [0, room_height] x [0, room_depth] with the floor at y = room_height.
struct SceneSpec {
    int width = 64;
    int height = 64;
    double room_width = 4.0;
    double room_height = 2.6;
    double room_depth = 4.0;
    int box_min = 2;
    int box_max = 5;
    double box_size_lo = 0.3;
    double box_size_hi = 0.9;
    double box_near = 1.0;  // minimum z distance between a box and the camera
    Point3 camera{2.0, 1.2, 0.3};
    double yaw = 0.0;    // radians, positive turns toward +x
    double pitch = 0.0;  // radians, positive looks down
    double camera_jitter = 0.2;  // uniform +- meters on x and z
    double yaw_jitter = 0.25;    // uniform +- radians
    double pitch_jitter = 0.1;
    double focal = 0.8;  // fx = fy = focal * width; principal point at the image center
    Point3 light{-0.4, 0.8, 0.45};  // direction the light travels
    double ambient = 0.35;
    std::uint64_t seed = 0;  // dataset seed; scene i uses derive(i)

    void validate() const;
    bool operator==(const SceneSpec&) const = default;
};

struct DegradeSpec {
    double noise_sigma = 0.0;     // meters
    double blur_sigma = 0.0;      // pixels
    double bias_amplitude = 0.0;  // meters
    double bias_period = 0.5;     // fraction of the image width per cycle
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const DegradeSpec&) const = default;
};

/// Everything needed to ray-cast the scene again.
struct SceneGeometry {
    Box room;
    std::vector<Box> boxes;
    Point3 camera;
    std::array<double, 9> rotation{};  // camera-to-world, row-major
    CameraIntrinsics K;
    int width = 0;
    int height = 0;

    /// World direction of the pixel ray whose camera-space z component is 1.
    Point3 ray(double x, double y) const;
};

struct Hit {
    double t = 0.0;     // along the ray returned by SceneGeometry::ray, so t is the z-depth
    int instance = -1;  // 0..5 room faces (x-, x+, y-, y+, z-, z+), then 6 + box index
    Point3 normal;
};

/// Nearest intersection with the room interior or any box.
Hit cast_ray(const SceneGeometry& geometry, const Point3& origin, const Point3& dir);

struct Scene {
    ImageTensor rgb;
    DepthMap depth;
    CameraIntrinsics K;
    MaskSet masks;
    SceneGeometry geometry;
};

Scene generate_scene(const SceneSpec& spec, Rng& rng);

/// Blur, then a smooth additive bias field, then white noise; finally
/// clamped to at least 1 mm.
DepthMap degrade(const DepthMap& gt, const DegradeSpec& spec, Rng& rng);

/// Writes `count` scenes as <dir>/scene_NNNN/{rgb.png, depth.png,
/// initial.png, intrinsics.json, masks/} plus <dir>/manifest.json. Scene i
/// uses Rng(spec.seed).derive(i) for geometry and Rng(degrade.seed).derive(i)
/// for degradation.
std::vector<std::string> write_synth_dataset(const SceneSpec& spec, const DegradeSpec& degrade_spec, int count,
                                             const std::filesystem::path& dir);

} // namespace multidepth
