#pragma once

#include <array>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/geometry.hpp"

namespace multidepth {

inline constexpr std::array<double, 5> kDeltaExponents{0.25, 0.5, 1.0, 2.0, 3.0};

struct MetricsReport {
    std::array<double, 5> delta{};  // indexed like kDeltaExponents
    double si_log = 0.0;
    double abs_rel = 0.0;           // raw ratio; the table prints abs_rel * 100
    double rmse = 0.0;
    double f_score = 0.0;
    std::size_t valid_pixel_count = 0;

    double delta_at(double t) const;
    double abs_rel_percent() const { return abs_rel * 100.0; }
};

/// Fraction of jointly valid pixels with max(p/g, g/p) < 1.25^t.
double delta_threshold(const DepthMap& pred, const DepthMap& gt, double t);

/// sqrt(mean(g^2) - mean(g)^2) with g = ln(pred) - ln(gt). Unscaled.
double si_log(const DepthMap& pred, const DepthMap& gt);

double abs_rel(const DepthMap& pred, const DepthMap& gt);
double rmse(const DepthMap& pred, const DepthMap& gt);

/// Point-cloud F1 at distance tau: a point counts when some point of the
/// other cloud lies within tau (inclusive). Neighbors are found through a
/// uniform hash grid with cell size tau.
double f_score(const PointCloud& pred, const PointCloud& gt, double tau);

/// O(n m) exact variant of f_score.
double f_score_exact(const PointCloud& pred, const PointCloud& gt, double tau);

/// Fraction of `query` points with a `reference` point within tau.
double fraction_within(const PointCloud& query, const PointCloud& reference, double tau);

/// Every metric at once. `K` is needed for the point-cloud F-score.
MetricsReport evaluate(const DepthMap& pred, const DepthMap& gt, const CameraIntrinsics& K, double tau = 0.25);

/// Weighted absolute-error map plus its summaries.
struct ProbeMap {
    int height = 0;
    int width = 0;
    std::vector<float> error;        // w * |a - b|, 0 where not jointly valid
    std::vector<std::uint8_t> weight;  // edge forgiveness weight (0 on edges)
    std::vector<std::uint8_t> valid;
    double mean = 0.0;          // mean of error over jointly valid pixels
    double off_edge_mean = 0.0; // mean of |a - b| over valid pixels with weight 1
    std::size_t valid_count = 0;
    std::size_t off_edge_count = 0;
};

/// Edge weights: 0 where the central-difference gradient magnitude of the
/// Gaussian-blurred reference exceeds `edge_threshold`, else 1.
std::vector<std::uint8_t> edge_weights(const DepthMap& reference, float edge_sigma, double edge_threshold);

/// Compares a full-resolution prediction with the one reassembled from
/// pixel-unshuffled predictions, forgiving reference edges.
ProbeMap pud_probe(const DepthMap& full_pred, const DepthMap& pud_pred, const DepthMap& reference, float edge_sigma,
                   double edge_threshold);

/// Unweighted absolute-error map between a crop prediction and the same crop
/// cut from the full prediction.
ProbeMap subsample_probe(const DepthMap& pred_on_crop, const DepthMap& crop_of_full_pred);

} // namespace multidepth
