#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/geometry.hpp"
#include "multidepth/sampling.hpp"

namespace multidepth {

struct LossWeights {
    std::array<double, 3> lambda{1.0, 1.0, 1.0};         // (theta, phi, z)
    std::array<double, 3> lambda_sample{1.0, 1.0, 1.0};  // (pud, sub, seg)
    double w_sample = 1.0;
    double huber_delta = 1.0;
    ZMode z_mode = ZMode::Log;

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

/// ||Var[e]||_1 + lambda . (E[e] * E[e]) over jointly valid pixels, where e
/// is the per-pixel difference of spherical coordinates (theta, phi, z).
/// Moments are population moments (1/N). Needs >= 2 jointly valid pixels.
/// When `grad_pred` is given, d(loss)/d(pred depth) is added into it.
template <class T>
T lambda_mse(const BasicDepthMap<T>& pred, const BasicDepthMap<T>& gt, const CameraIntrinsics& K,
             const std::array<double, 3>& lambda, ZMode mode = ZMode::Log, BasicDepthMap<T>* grad_pred = nullptr);

/// Pointwise Huber value of a residual.
template <class T>
T huber_value(T r, T delta) {
    const T a = r < T(0) ? -r : r;
    return a <= delta ? T(0.5) * r * r : delta * (a - T(0.5) * delta);
}

/// Mean Huber distance over jointly valid pixels; throws when there are none.
template <class T>
T huber(const BasicDepthMap<T>& a, const BasicDepthMap<T>& b, double delta);

/// Sum and count of per-pixel Huber terms between a refined sample view and
/// the full-resolution prediction at the pixels the sample maps onto.
/// Gradients of `scale * sum / count`-style reductions are left to callers:
/// this only adds `grad_scale * psi(r)` into the given buffers.
template <class T>
struct HuberTally {
    T sum = T(0);
    std::size_t count = 0;
};

template <class T>
HuberTally<T> aligned_huber(const BasicDepthMap<T>& refined_sample, const Sample& sample,
                            const BasicDepthMap<T>& full_pred, double delta);

template <class T>
void aligned_huber_backward(const BasicDepthMap<T>& refined_sample, const Sample& sample,
                            const BasicDepthMap<T>& full_pred, double delta, T grad_scale,
                            BasicDepthMap<T>* grad_sample, BasicDepthMap<T>* grad_full);

/// A refined view paired with the sample that produced it.
template <class T>
struct RefinedView {
    const Sample* sample;
    const BasicDepthMap<T>* refined;
};

struct ConsistencyValue {
    double value = 0.0;
    bool empty = false;  // no sample contributed
};

/// Huber between the pixel-shuffled Pud refinements and the (center-cropped)
/// full-image refinement.
template <class T>
ConsistencyValue pud_consistency_from(const std::vector<RefinedView<T>>& puds, const BasicDepthMap<T>& full_pred,
                                      double delta);

/// Mean over views of the per-view Huber against the same region of the
/// full-image refinement. Views whose region holds no valid pixel are skipped.
template <class T>
ConsistencyValue view_consistency_from(const std::vector<RefinedView<T>>& views, const BasicDepthMap<T>& full_pred,
                                       double delta);

/// Backward of pud_consistency_from / view_consistency_from with upstream
/// weight `scale`. `grad_views` is parallel to `views`.
template <class T>
void pud_consistency_backward(const std::vector<RefinedView<T>>& puds, const BasicDepthMap<T>& full_pred,
                              double delta, T scale, std::vector<BasicDepthMap<T>*>& grad_views,
                              BasicDepthMap<T>& grad_full);
template <class T>
void view_consistency_backward(const std::vector<RefinedView<T>>& views, const BasicDepthMap<T>& full_pred,
                               double delta, T scale, std::vector<BasicDepthMap<T>*>& grad_views,
                               BasicDepthMap<T>& grad_full);

/// Any depth refiner Phi(rgb, depth).
using Refiner = std::function<DepthMap(const ImageTensor&, const DepthMap&)>;

/// L_PUD: refines the full image and each of its s*s Pud sub-images.
ConsistencyValue pud_consistency(const Refiner& refiner, const ImageTensor& rgb, const DepthMap& depth, int s,
                                 double delta);
/// L_sub over Crop samples, against a given full-image refinement.
ConsistencyValue sub_consistency(const Refiner& refiner, const std::vector<Sample>& crops, const DepthMap& full_pred,
                                 double delta);
/// L_SAM over Seg samples (compared under each mask only).
ConsistencyValue seg_consistency(const Refiner& refiner, const std::vector<Sample>& segs, const DepthMap& full_pred,
                                 double delta);

struct LossBreakdown {
    double lambda_mse = 0.0;
    double pud = 0.0;
    double sub = 0.0;
    double seg = 0.0;
    double sample = 0.0;  // lambda_sample . (pud, sub, seg)
    double total = 0.0;   // lambda_mse + w_sample * sample
};

/// Combines the terms; throws on any non-finite component.
LossBreakdown total_loss(double lambda_mse_value, double pud, double sub, double seg, const LossWeights& w);

} // namespace multidepth
