#include "multidepth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "multidepth/formats.hpp"

namespace multidepth {

void SceneSpec::validate() const {
    if (width < 1 || height < 1) fail_input("scene resolution must be positive");
    if (!(room_width > 0 && room_height > 0 && room_depth > 0)) fail_input("room dimensions must be positive");
    if (box_min < 0 || box_max < box_min) fail_input("box count range must satisfy 0 <= min <= max");
    if (!(box_size_lo > 0 && box_size_hi >= box_size_lo)) fail_input("box size range must satisfy 0 < lo <= hi");
    if (!(focal > 0)) fail_input("focal must be positive");
    if (!(ambient >= 0 && ambient <= 1)) fail_input("ambient must be in [0, 1]");
    if (camera_jitter < 0 || yaw_jitter < 0 || pitch_jitter < 0) fail_input("jitter ranges must be non-negative");
    const double margin = camera_jitter + 0.05;
    if (camera.x - margin <= 0 || camera.x + margin >= room_width || camera.y <= 0.05 ||
        camera.y >= room_height - 0.05 || camera.z - margin <= 0 || camera.z + margin >= room_depth)
        fail_input("camera must lie inside the room");
    if (std::abs(pitch) + pitch_jitter >= std::numbers::pi / 2) fail_input("pitch must stay below 90 degrees");
    if (box_max > 0 && (camera.z + camera_jitter + box_near + box_size_lo > room_depth ||
                        box_size_lo > room_width || box_size_lo > room_height))
        fail_input("boxes do not fit inside the room");
    if (std::hypot(light.x, light.y, light.z) == 0.0) fail_input("light direction must be nonzero");
}

void DegradeSpec::validate() const {
    if (!(noise_sigma >= 0 && blur_sigma >= 0 && bias_amplitude >= 0)) fail_input("degrade parameters must be >= 0");
    if (!(bias_period > 0)) fail_input("bias period must be positive");
}

Point3 SceneGeometry::ray(double x, double y) const {
    const double u = (x - K.cx) / K.fx;
    const double v = (y - K.cy) / K.fy;
    const auto& R = rotation;
    return {R[0] * u + R[1] * v + R[2], R[3] * u + R[4] * v + R[5], R[6] * u + R[7] * v + R[8]};
}

namespace {

double component(const Point3& p, int axis) { return axis == 0 ? p.x : axis == 1 ? p.y : p.z; }

Point3 axis_normal(int axis, double sign) {
    Point3 n;
    if (axis == 0) n.x = sign;
    else if (axis == 1) n.y = sign;
    else n.z = sign;
    return n;
}

// Exit point of a ray starting inside the room.
Hit room_hit(const Box& room, const Point3& o, const Point3& d) {
    Hit h;
    h.t = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double da = component(d, a);
        if (da == 0.0) continue;
        const bool positive = da > 0;
        const double bound = positive ? component(room.hi, a) : component(room.lo, a);
        const double t = (bound - component(o, a)) / da;
        if (t < h.t) {
            h.t = t;
            h.instance = 2 * a + (positive ? 1 : 0);
            h.normal = axis_normal(a, positive ? -1.0 : 1.0);
        }
    }
    return h;
}

// Entry point of a ray into a box seen from outside; t < 0 or no hit -> instance -1.
Hit box_hit(const Box& box, const Point3& o, const Point3& d) {
    double tnear = -std::numeric_limits<double>::infinity();
    double tfar = std::numeric_limits<double>::infinity();
    int near_axis = -1;
    double near_sign = 0.0;
    for (int a = 0; a < 3; ++a) {
        const double oa = component(o, a);
        const double da = component(d, a);
        const double lo = component(box.lo, a);
        const double hi = component(box.hi, a);
        if (da == 0.0) {
            if (oa < lo || oa > hi) return {};
            continue;
        }
        double t0 = (lo - oa) / da;
        double t1 = (hi - oa) / da;
        double sign = -1.0;  // entering through the low face: outward normal points to -axis
        if (t0 > t1) {
            std::swap(t0, t1);
            sign = 1.0;
        }
        if (t0 > tnear) {
            tnear = t0;
            near_axis = a;
            near_sign = sign;
        }
        tfar = std::min(tfar, t1);
    }
    if (near_axis < 0 || tnear > tfar || tnear <= 0.0) return {};
    Hit h;
    h.t = tnear;
    h.instance = 0;
    h.normal = axis_normal(near_axis, near_sign);
    return h;
}

const char* const kRoomFaceNames[6] = {"wall_left", "wall_right", "ceiling", "floor", "wall_behind", "wall_ahead"};

} // namespace

Hit cast_ray(const SceneGeometry& g, const Point3& origin, const Point3& dir) {
    Hit best = room_hit(g.room, origin, dir);
    for (std::size_t b = 0; b < g.boxes.size(); ++b) {
        Hit h = box_hit(g.boxes[b], origin, dir);
        if (h.instance < 0 || !(h.t < best.t)) continue;
        h.instance = 6 + static_cast<int>(b);
        best = h;
    }
    return best;
}

Scene generate_scene(const SceneSpec& spec, Rng& rng) {
    spec.validate();
    SceneGeometry g;
    g.width = spec.width;
    g.height = spec.height;
    g.room = {{0, 0, 0}, {spec.room_width, spec.room_height, spec.room_depth}};
    g.K = {spec.focal * spec.width, spec.focal * spec.width, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0};

    // Draw order: camera (x, z, yaw, pitch), box count, per box (size xyz, x, z), albedos.
    g.camera = spec.camera;
    double yaw = spec.yaw;
    double pitch = spec.pitch;
    const double jx = rng.uniform(-1.0, 1.0);
    const double jz = rng.uniform(-1.0, 1.0);
    const double jyaw = rng.uniform(-1.0, 1.0);
    const double jpitch = rng.uniform(-1.0, 1.0);
    g.camera.x += spec.camera_jitter * jx;
    g.camera.z += spec.camera_jitter * jz;
    yaw += spec.yaw_jitter * jyaw;
    pitch += spec.pitch_jitter * jpitch;

    const double cy = std::cos(yaw), sy = std::sin(yaw), cp = std::cos(pitch), sp = std::sin(pitch);
    const Point3 right{cy, 0.0, -sy};
    const Point3 forward{sy * cp, sp, cy * cp};
    const Point3 down{forward.y * right.z - forward.z * right.y, forward.z * right.x - forward.x * right.z,
                      forward.x * right.y - forward.y * right.x};
    g.rotation = {right.x, down.x, forward.x, right.y, down.y, forward.y, right.z, down.z, forward.z};

    const int nbox = spec.box_min + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.box_max - spec.box_min + 1)));
    for (int b = 0; b < nbox; ++b) {
        const double sx = std::min(rng.uniform(spec.box_size_lo, spec.box_size_hi), spec.room_width);
        const double syz = std::min(rng.uniform(spec.box_size_lo, spec.box_size_hi), spec.room_height);
        const double sz = rng.uniform(spec.box_size_lo, spec.box_size_hi);
        const double z_lo = g.camera.z + spec.box_near;
        const double z_hi = std::max(z_lo, spec.room_depth - sz);
        const double x0 = rng.uniform(0.0, spec.room_width - sx);
        const double z0 = rng.uniform(z_lo, z_hi);
        Box box{{x0, spec.room_height - syz, z0}, {x0 + sx, spec.room_height, std::min(z0 + sz, spec.room_depth)}};
        g.boxes.push_back(box);
    }
    const int ninst = 6 + nbox;
    std::vector<std::array<double, 3>> albedo(static_cast<std::size_t>(ninst));
    for (auto& a : albedo)
        for (auto& c : a) c = rng.uniform(0.25, 0.9);

    const double ln = std::hypot(spec.light.x, spec.light.y, spec.light.z);
    const Point3 to_light{-spec.light.x / ln, -spec.light.y / ln, -spec.light.z / ln};

    Scene s;
    s.K = g.K;
    s.rgb = ImageTensor(3, spec.height, spec.width);
    s.depth = DepthMap(spec.height, spec.width);
    std::vector<Mask> inst(static_cast<std::size_t>(ninst), Mask(spec.height, spec.width));
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const Point3 d = g.ray(x, y);
            const Hit h = cast_ray(g, g.camera, d);
            if (h.instance < 0 || !std::isfinite(h.t) || h.t <= 0) fail_input("degenerate scene: ray escaped the room");
            s.depth.at(y, x) = static_cast<float>(h.t);
            s.depth.valid[s.depth.index(y, x)] = 1;
            inst[static_cast<std::size_t>(h.instance)].set(y, x, true);
            const double lambert = std::max(0.0, h.normal.x * to_light.x + h.normal.y * to_light.y + h.normal.z * to_light.z);
            const double shade = spec.ambient + (1.0 - spec.ambient) * lambert;
            for (int c = 0; c < 3; ++c)
                s.rgb.at(c, y, x) = static_cast<float>(std::clamp(albedo[static_cast<std::size_t>(h.instance)][c] * shade, 0.0, 1.0));
        }
    }
    const auto [dmin, dmax] = std::minmax_element(s.depth.depth.begin(), s.depth.depth.end());
    if (*dmin < 0.5f || *dmax > 10.0f) fail_input("degenerate scene: depth leaves the [0.5, 10] m range");

    s.masks.height = spec.height;
    s.masks.width = spec.width;
    for (int i = 0; i < ninst; ++i) {
        if (inst[static_cast<std::size_t>(i)].count() == 0) continue;
        char id[32];
        if (i < 6) std::snprintf(id, sizeof(id), "%02d_%s", i, kRoomFaceNames[i]);
        else std::snprintf(id, sizeof(id), "%02d_box%02d", i, i - 6);
        s.masks.add(id, std::move(inst[static_cast<std::size_t>(i)]));
    }
    s.geometry = std::move(g);
    return s;
}

DepthMap degrade(const DepthMap& gt, const DegradeSpec& spec, Rng& rng) {
    spec.validate();
    DepthMap out = spec.blur_sigma > 0 ? gaussian_blur_depth(gt, static_cast<float>(spec.blur_sigma)) : gt;
    const double two_pi = 2.0 * std::numbers::pi;
    const double phase_x = rng.uniform(0.0, two_pi);
    const double phase_y = rng.uniform(0.0, two_pi);
    const double period = spec.bias_period * std::max(gt.width, gt.height);
    if (spec.bias_amplitude > 0) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                if (!out.is_valid(y, x)) continue;
                const double b = 0.5 * spec.bias_amplitude *
                                 (std::sin(two_pi * x / period + phase_x) + std::sin(two_pi * y / period + phase_y));
                out.at(y, x) = static_cast<float>(out.at(y, x) + b);
            }
        }
    }
    if (spec.noise_sigma > 0) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double n = rng.normal(0.0, spec.noise_sigma);
            if (out.valid[i]) out.depth[i] = static_cast<float>(out.depth[i] + n);
        }
    }
    if (spec.blur_sigma > 0 || spec.bias_amplitude > 0 || spec.noise_sigma > 0) {
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out.valid[i]) out.depth[i] = std::max(out.depth[i], 1e-3f);
    }
    return out;
}

std::vector<std::string> write_synth_dataset(const SceneSpec& spec, const DegradeSpec& degrade_spec, int count,
                                             const std::filesystem::path& dir) {
    if (count < 0) fail_input("scene count must be non-negative");
    spec.validate();
    degrade_spec.validate();
    std::filesystem::create_directories(dir);
    const Rng scene_root(spec.seed);
    const Rng degrade_root(degrade_spec.seed);
    std::vector<std::string> names;
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        const auto sdir = dir / name;
        std::filesystem::create_directories(sdir);
        Rng rng = scene_root.derive(static_cast<std::uint64_t>(i));
        const Scene scene = generate_scene(spec, rng);
        Rng drng = degrade_root.derive(static_cast<std::uint64_t>(i));
        const DepthMap initial = degrade(scene.depth, degrade_spec, drng);
        save_image_png(sdir / "rgb.png", scene.rgb);
        save_depth(sdir / "depth.png", scene.depth, DepthUnit::MillimeterPng16);
        save_depth(sdir / "initial.png", initial, DepthUnit::MillimeterPng16);
        save_intrinsics(sdir / "intrinsics.json", scene.K);
        save_masks(scene.masks, sdir / "masks");
        names.emplace_back(name);
    }
    nlohmann::ordered_json m;
    m["count"] = count;
    m["scenes"] = names;
    m["width"] = spec.width;
    m["height"] = spec.height;
    m["seed"] = spec.seed;
    m["degrade"] = {{"noise_sigma", degrade_spec.noise_sigma},
                    {"blur_sigma", degrade_spec.blur_sigma},
                    {"bias_amplitude", degrade_spec.bias_amplitude},
                    {"bias_period", degrade_spec.bias_period},
                    {"seed", degrade_spec.seed}};
    std::FILE* f = std::fopen((dir / "manifest.json").string().c_str(), "wb");
    if (!f) fail_io("cannot write " + (dir / "manifest.json").string());
    const std::string text = m.dump(2) + "\n";
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    return names;
}

} // namespace multidepth
