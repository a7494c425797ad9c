#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "multidepth/geometry.hpp"
#include "multidepth/metrics.hpp"

using namespace multidepth;
using testing::random_depth;

TEST_CASE("unproject follows the pinhole model and skips invalid pixels") {
    DepthMap d(2, 3, 2.0f, true);
    d.valid[4] = 0;
    const CameraIntrinsics K{4.0, 5.0, 1.0, 0.5};
    const PointCloud pc = unproject(d, K, 1.5);
    REQUIRE(pc.size() == 5);
    CHECK(pc.points[0].x == doctest::Approx(1.5 * 2.0 * (0 - 1.0) / 4.0));
    CHECK(pc.points[0].y == doctest::Approx(1.5 * 2.0 * (0 - 0.5) / 5.0));
    CHECK(pc.points[0].z == doctest::Approx(3.0));
    CHECK(pc.points[3].x == doctest::Approx(1.5 * 2.0 * (0 - 1.0) / 4.0));  // (x=0, y=1)
    CHECK(pc.points[4].x == doctest::Approx(1.5 * 2.0 * (2 - 1.0) / 4.0));  // (x=2, y=1)
}

TEST_CASE("unproject point count equals the valid-pixel count; colors follow") {
    Rng rng(1);
    DepthMap d = random_depth(9, 11, rng);
    for (int i = 0; i < 20; ++i) d.valid[rng.uniform_int(d.size())] = 0;
    ImageTensor gray(1, 9, 11, 0.5f);
    const PointCloud pc = unproject(d, {10, 10, 5, 4}, 1.0, &gray);
    CHECK(pc.size() == d.valid_count());
    REQUIRE(pc.colors.size() == pc.size());
    CHECK(pc.colors[0] == Color3{128, 128, 128});
}

TEST_CASE("project inverts unproject") {
    Rng rng(2);
    const CameraIntrinsics K{321.0, 287.5, 31.2, 22.9};
    const DepthMap d = random_depth(24, 32, rng, 0.2, 30.0);
    const auto proj = project(unproject(d, K), K);
    std::size_t i = 0;
    for (int y = 0; y < 24; ++y) {
        for (int x = 0; x < 32; ++x, ++i) {
            CHECK(proj[i].ok);
            CHECK(std::abs(proj[i].x - x) <= 1e-9 * std::max(1, x));
            CHECK(std::abs(proj[i].y - y) <= 1e-9 * std::max(1, y));
            CHECK(std::abs(proj[i].depth - d.at(y, x)) <= 1e-9 * d.at(y, x));
        }
    }
    PointCloud behind;
    behind.points = {{0, 0, -1}};
    CHECK_FALSE(project(behind, K)[0].ok);
}

TEST_CASE("spherical coordinates: equal maps give zero residual, scaling shifts only z") {
    Rng rng(3);
    const CameraIntrinsics K{20, 22, 7.5, 6.5};
    BasicDepthMap<double> d(14, 16, 0.0, true);
    for (auto& v : d.depth) v = rng.uniform(0.5, 5.0);
    BasicDepthMap<double> scaled = d;
    const double c = 1.7;
    for (auto& v : scaled.depth) v *= c;
    const auto a = to_spherical(d, K);
    const auto b = to_spherical(scaled, K);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(a.theta[i] == b.theta[i]);
        CHECK(a.phi[i] == b.phi[i]);
        CHECK(b.z[i] - a.z[i] == doctest::Approx(std::log(c)).epsilon(1e-12));
    }
    const auto lin = to_spherical(d, K, ZMode::Linear);
    CHECK(lin.z[5] == d.depth[5]);
    // Angles of the principal point are zero.
    const auto ang = pixel_angles(7.5, 6.5, K);
    CHECK(ang[0] == 0.0);
    CHECK(ang[1] == 0.0);
    // theta = atan2(rx, rz), phi = asin(ry) of the normalized ray.
    const auto ang2 = pixel_angles(12.0, 1.0, K);
    const double rx = 4.5 / 20, ry = -5.5 / 22, n = std::sqrt(rx * rx + ry * ry + 1);
    CHECK(ang2[0] == doctest::Approx(std::atan2(rx / n, 1 / n)));
    CHECK(ang2[1] == doctest::Approx(std::asin(ry / n)));
}

TEST_CASE("delta threshold counts ratios below 1.25^t") {
    DepthMap gt(1, 4, 1.0f, true);
    DepthMap pred(1, 4, 1.0f, true);
    pred.depth = {1.0f, 1.2f, 1.0f / 1.3f, 2.0f};
    CHECK(delta_threshold(pred, gt, 1.0) == doctest::Approx(0.5));
    CHECK(delta_threshold(pred, gt, 2.0) == doctest::Approx(0.75));
    CHECK(delta_threshold(pred, gt, 4.0) == doctest::Approx(1.0));
    pred.valid[3] = 0;
    CHECK(delta_threshold(pred, gt, 2.0) == doctest::Approx(1.0));
}

TEST_CASE("metric values against hand-computed references") {
    DepthMap gt(1, 4, 0.0f, true), pred(1, 4, 0.0f, true);
    gt.depth = {1, 2, 4, 8};
    pred.depth = {1.1f, 1.8f, 4.4f, 8.0f};
    double abs = 0, sq = 0, m = 0, m2 = 0;
    for (int i = 0; i < 4; ++i) {
        const double p = pred.depth[i], g = gt.depth[i];
        abs += std::abs(p - g) / g;
        sq += (p - g) * (p - g);
        const double e = std::log(p) - std::log(g);
        m += e;
        m2 += e * e;
    }
    CHECK(abs_rel(pred, gt) == doctest::Approx(abs / 4).epsilon(1e-12));
    CHECK(rmse(pred, gt) == doctest::Approx(std::sqrt(sq / 4)).epsilon(1e-12));
    CHECK(si_log(pred, gt) == doctest::Approx(std::sqrt(m2 / 4 - (m / 4) * (m / 4))).epsilon(1e-6));
    CHECK(si_log(gt, gt) == 0.0);
}

TEST_CASE("metric invariants on random pairs") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const DepthMap gt = random_depth(10, 10, rng);
        DepthMap pred = gt;
        for (auto& v : pred.depth) v = static_cast<float>(v * std::exp(rng.normal(0, 0.3)));
        double prev = 0;
        for (double e : kDeltaExponents) {
            const double d = delta_threshold(pred, gt, e);
            CHECK(d >= prev);
            CHECK(d <= 1.0);
            prev = d;
        }
        CHECK(si_log(pred, gt) >= 0);
        CHECK(abs_rel(pred, gt) >= 0);
        CHECK(rmse(pred, gt) >= 0);

        // Power-of-two scales are exactly representable, so si_log is unchanged bitwise.
        DepthMap scaled = pred;
        for (auto& v : scaled.depth) v *= 4.0f;
        CHECK(si_log(scaled, gt) == si_log(pred, gt));
        // Other scales only perturb by float rounding of the scaled map.
        for (auto& v : scaled.depth) v = static_cast<float>(v / 4.0f * 1.37);
        CHECK(si_log(scaled, gt) == doctest::Approx(si_log(pred, gt)).epsilon(1e-5));

        // Permutation invariance of the pixel reductions.
        std::vector<std::size_t> perm(gt.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
        DepthMap pp = pred, gp = gt;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            pp.depth[i] = pred.depth[perm[i]];
            gp.depth[i] = gt.depth[perm[i]];
        }
        CHECK(delta_threshold(pp, gp, 0.25) == delta_threshold(pred, gt, 0.25));
        CHECK(si_log(pp, gp) == doctest::Approx(si_log(pred, gt)).epsilon(1e-12));
        CHECK(abs_rel(pp, gp) == doctest::Approx(abs_rel(pred, gt)).epsilon(1e-12));
        CHECK(rmse(pp, gp) == doctest::Approx(rmse(pred, gt)).epsilon(1e-12));
    }
}

TEST_CASE("f_score: grid hash equals the exhaustive oracle, symmetric, permutation-invariant") {
    Rng rng(5);
    for (int t = 0; t < 4; ++t) {
        PointCloud a, b;
        const int n = 300 + static_cast<int>(rng.uniform_int(1700));
        for (int i = 0; i < n; ++i) a.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3)});
        for (int i = 0; i < n / 2; ++i) b.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3)});
        for (double tau : {0.02, 0.1, 0.3}) {
            const double f = f_score(a, b, tau);
            CHECK(f == f_score_exact(a, b, tau));
            CHECK(f == f_score(b, a, tau));
            CHECK(f >= 0.0);
            CHECK(f <= 1.0);
        }
        PointCloud shuffled = a;
        std::reverse(shuffled.points.begin(), shuffled.points.end());
        CHECK(f_score(shuffled, b, 0.1) == f_score(a, b, 0.1));
    }
    // Inclusive threshold: a point exactly tau away counts.
    PointCloud p, q;
    p.points = {{0, 0, 1}};
    q.points = {{0.25, 0, 1}};
    CHECK(f_score(p, q, 0.25) == 1.0);
    CHECK(f_score(p, q, 0.2499) == 0.0);
    CHECK(fraction_within(p, q, 0.3) == 1.0);
}

TEST_CASE("evaluate fills every field consistently") {
    Rng rng(6);
    const DepthMap gt = random_depth(12, 12, rng, 1, 3);
    DepthMap pred = gt;
    for (auto& v : pred.depth) v = static_cast<float>(v * 1.03);
    const CameraIntrinsics K{10, 10, 5.5, 5.5};
    const MetricsReport r = evaluate(pred, gt, K, 0.25);
    CHECK(r.delta_at(0.25) == 1.0);
    CHECK(r.abs_rel == doctest::Approx(0.03).epsilon(1e-5));
    CHECK(r.si_log == doctest::Approx(0.0).scale(1).epsilon(1e-6));
    CHECK(r.valid_pixel_count == 144);
    CHECK(r.f_score == 1.0);
    CHECK(r.abs_rel_percent() == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("probes: pud_probe forgives edges, subsample_probe is plain L1") {
    DepthMap ref(8, 8, 1.0f, true);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) ref.at(y, x) = 3.0f;
    const auto w = edge_weights(ref, 0.0f, 0.1);
    CHECK(w[ref.index(2, 1)] == 1);
    CHECK(w[ref.index(2, 3)] == 0);
    CHECK(w[ref.index(2, 4)] == 0);

    DepthMap other = ref;
    for (auto& v : other.depth) v += 0.5f;
    const ProbeMap p = pud_probe(ref, other, ref, 0.0f, 0.1);
    CHECK(p.off_edge_mean == doctest::Approx(0.5));
    CHECK(p.valid_count == 64);
    CHECK(p.off_edge_count == 64 - 16);
    CHECK(p.error[ref.index(2, 3)] == 0.0f);

    const ProbeMap s = subsample_probe(other, ref);
    CHECK(s.mean == doctest::Approx(0.5));
}
