#include "multidepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace multidepth {

namespace {

std::vector<std::size_t> joint_valid(const DepthMap& pred, const DepthMap& gt, const char* what) {
    if (pred.height != gt.height || pred.width != gt.width) fail_input(std::string(what) + ": dimension mismatch");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred.valid[i] && gt.valid[i]) idx.push_back(i);
    if (idx.empty()) fail_input(std::string(what) + ": no jointly valid pixels");
    return idx;
}

} // namespace

double MetricsReport::delta_at(double t) const {
    for (std::size_t i = 0; i < kDeltaExponents.size(); ++i)
        if (kDeltaExponents[i] == t) return delta[i];
    fail_input("no delta threshold recorded for that exponent");
}

double delta_threshold(const DepthMap& pred, const DepthMap& gt, double t) {
    const auto idx = joint_valid(pred, gt, "delta_threshold");
    const double bound = std::pow(1.25, t);
    std::size_t hit = 0;
    for (std::size_t i : idx) {
        const double p = pred.depth[i];
        const double g = gt.depth[i];
        if (std::max(p / g, g / p) < bound) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
}

double si_log(const DepthMap& pred, const DepthMap& gt) {
    const auto idx = joint_valid(pred, gt, "si_log");
    if (idx.size() < 2) fail_input("si_log needs at least 2 jointly valid pixels");
    // Residuals use pred / max(pred): scaling pred by a power of two then
    // leaves every term bitwise unchanged.
    double ref = 0.0;
    for (std::size_t i : idx) ref = std::max(ref, static_cast<double>(pred.depth[i]));
    const double n = static_cast<double>(idx.size());
    std::vector<double> r(idx.size());
    double mean = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const std::size_t i = idx[j];
        r[j] = std::log(static_cast<double>(pred.depth[i]) / ref) - std::log(static_cast<double>(gt.depth[i]));
        mean += r[j];
    }
    mean /= n;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    return std::sqrt(var / n);
}

double abs_rel(const DepthMap& pred, const DepthMap& gt) {
    const auto idx = joint_valid(pred, gt, "abs_rel");
    double s = 0.0;
    for (std::size_t i : idx)
        s += std::abs(static_cast<double>(pred.depth[i]) - gt.depth[i]) / static_cast<double>(gt.depth[i]);
    return s / static_cast<double>(idx.size());
}

double rmse(const DepthMap& pred, const DepthMap& gt) {
    const auto idx = joint_valid(pred, gt, "rmse");
    double s = 0.0;
    for (std::size_t i : idx) {
        const double d = static_cast<double>(pred.depth[i]) - gt.depth[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(idx.size()));
}

namespace {

double sq_dist(const Point3& a, const Point3& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

struct CellKey {
    long long x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const noexcept {
        std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B185EBCA87ULL;
        h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
        h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

CellKey cell_of(const Point3& p, double tau) {
    return {static_cast<long long>(std::floor(p.x / tau)), static_cast<long long>(std::floor(p.y / tau)),
            static_cast<long long>(std::floor(p.z / tau))};
}

double f1(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

void check_clouds(const PointCloud& pred, const PointCloud& gt, double tau) {
    if (pred.size() == 0 || gt.size() == 0) fail_input("f_score needs two non-empty clouds");
    if (!(tau > 0.0)) fail_input("f_score threshold must be positive");
}

} // namespace

double fraction_within(const PointCloud& query, const PointCloud& reference, double tau) {
    std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
    for (std::size_t i = 0; i < reference.size(); ++i) grid[cell_of(reference.points[i], tau)].push_back(i);
    const double tau2 = tau * tau;
    std::size_t hit = 0;
    for (const auto& q : query.points) {
        const CellKey c = cell_of(q, tau);
        bool found = false;
        for (long long dz = -1; dz <= 1 && !found; ++dz)
            for (long long dy = -1; dy <= 1 && !found; ++dy)
                for (long long dx = -1; dx <= 1 && !found; ++dx) {
                    const auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == grid.end()) continue;
                    for (std::size_t j : it->second)
                        if (sq_dist(q, reference.points[j]) <= tau2) {
                            found = true;
                            break;
                        }
                }
        if (found) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(query.size());
}

double f_score(const PointCloud& pred, const PointCloud& gt, double tau) {
    check_clouds(pred, gt, tau);
    return f1(fraction_within(pred, gt, tau), fraction_within(gt, pred, tau));
}

double f_score_exact(const PointCloud& pred, const PointCloud& gt, double tau) {
    check_clouds(pred, gt, tau);
    const double tau2 = tau * tau;
    auto frac = [tau2](const PointCloud& q, const PointCloud& r) {
        std::size_t hit = 0;
        for (const auto& p : q.points) {
            for (const auto& o : r.points) {
                if (sq_dist(p, o) <= tau2) {
                    ++hit;
                    break;
                }
            }
        }
        return static_cast<double>(hit) / static_cast<double>(q.size());
    };
    return f1(frac(pred, gt), frac(gt, pred));
}

MetricsReport evaluate(const DepthMap& pred, const DepthMap& gt, const CameraIntrinsics& K, double tau) {
    MetricsReport r;
    for (std::size_t i = 0; i < kDeltaExponents.size(); ++i) r.delta[i] = delta_threshold(pred, gt, kDeltaExponents[i]);
    r.si_log = si_log(pred, gt);
    r.abs_rel = abs_rel(pred, gt);
    r.rmse = rmse(pred, gt);

    // Both clouds are taken over the jointly valid pixels.
    DepthMap p = pred;
    DepthMap g = gt;
    for (std::size_t i = 0; i < p.size(); ++i) p.valid[i] = g.valid[i] = (pred.valid[i] && gt.valid[i]) ? 1 : 0;
    r.valid_pixel_count = p.valid_count();
    r.f_score = f_score(unproject(p, K), unproject(g, K), tau);
    return r;
}

std::vector<std::uint8_t> edge_weights(const DepthMap& reference, float edge_sigma, double edge_threshold) {
    const DepthMap blurred = gaussian_blur_depth(reference, edge_sigma);
    const int H = blurred.height;
    const int W = blurred.width;
    std::vector<std::uint8_t> w(blurred.size(), 1);
    if (std::isinf(edge_threshold) && edge_threshold > 0) return w;
    auto value = [&](int y, int x, int cy, int cx) {
        y = std::clamp(y, 0, H - 1);
        x = std::clamp(x, 0, W - 1);
        // Invalid neighbors fall back to the center value.
        return blurred.is_valid(y, x) ? static_cast<double>(blurred.at(y, x)) : static_cast<double>(blurred.at(cy, cx));
    };
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!blurred.is_valid(y, x)) continue;
            const double gx = 0.5 * (value(y, x + 1, y, x) - value(y, x - 1, y, x));
            const double gy = 0.5 * (value(y + 1, x, y, x) - value(y - 1, x, y, x));
            if (std::sqrt(gx * gx + gy * gy) > edge_threshold) w[blurred.index(y, x)] = 0;
        }
    }
    return w;
}

namespace {

ProbeMap abs_error_map(const DepthMap& a, const DepthMap& b, std::vector<std::uint8_t> weight) {
    if (a.height != b.height || a.width != b.width) fail_input("probe inputs differ in dimensions");
    ProbeMap m;
    m.height = a.height;
    m.width = a.width;
    m.error.assign(a.size(), 0.0f);
    m.valid.assign(a.size(), 0);
    m.weight = std::move(weight);
    double sum = 0.0;
    double off_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a.valid[i] || !b.valid[i]) continue;
        const double e = std::abs(static_cast<double>(a.depth[i]) - b.depth[i]);
        m.valid[i] = 1;
        m.error[i] = static_cast<float>(m.weight[i] * e);
        sum += m.weight[i] * e;
        ++m.valid_count;
        if (m.weight[i]) {
            off_sum += e;
            ++m.off_edge_count;
        }
    }
    if (m.valid_count == 0) fail_input("probe has no jointly valid pixels");
    m.mean = sum / static_cast<double>(m.valid_count);
    m.off_edge_mean = m.off_edge_count ? off_sum / static_cast<double>(m.off_edge_count) : 0.0;
    return m;
}

} // namespace

ProbeMap pud_probe(const DepthMap& full_pred, const DepthMap& pud_pred, const DepthMap& reference, float edge_sigma,
                   double edge_threshold) {
    if (reference.height != full_pred.height || reference.width != full_pred.width)
        fail_input("probe reference differs in dimensions");
    return abs_error_map(full_pred, pud_pred, edge_weights(reference, edge_sigma, edge_threshold));
}

ProbeMap subsample_probe(const DepthMap& pred_on_crop, const DepthMap& crop_of_full_pred) {
    if (pred_on_crop.size() == 0) fail_input("subsample probe of an empty crop");
    return abs_error_map(pred_on_crop, crop_of_full_pred, std::vector<std::uint8_t>(pred_on_crop.size(), 1));
}

} // namespace multidepth
