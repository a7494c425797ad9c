#include "multidepth/losses.hpp"

#include <algorithm>
#include <cmath>

namespace multidepth {

void LossWeights::validate() const {
    for (double v : lambda)
        if (!(v >= 0.0)) fail_input("lambda weights must be non-negative");
    for (double v : lambda_sample)
        if (!(v >= 0.0)) fail_input("lambda_sample weights must be non-negative");
    if (!(w_sample >= 0.0)) fail_input("w_sample must be non-negative");
    if (!(huber_delta > 0.0)) fail_input("huber_delta must be positive");
}

template <class T>
T lambda_mse(const BasicDepthMap<T>& pred, const BasicDepthMap<T>& gt, const CameraIntrinsics& K,
             const std::array<double, 3>& lambda, ZMode mode, BasicDepthMap<T>* grad_pred) {
    if (pred.height != gt.height || pred.width != gt.width) fail_input("lambda_mse dimension mismatch");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred.valid[i] && gt.valid[i]) idx.push_back(i);
    if (idx.size() < 2) fail_input("lambda_mse needs at least 2 jointly valid pixels");

    BasicDepthMap<T> p = pred;
    BasicDepthMap<T> g = gt;
    for (std::size_t i = 0; i < p.size(); ++i) p.valid[i] = g.valid[i] = (pred.valid[i] && gt.valid[i]) ? 1 : 0;
    const auto sp = to_spherical(p, K, mode);
    const auto sg = to_spherical(g, K, mode);

    const double n = static_cast<double>(idx.size());
    const std::array<const std::vector<T>*, 3> pc{&sp.theta, &sp.phi, &sp.z};
    const std::array<const std::vector<T>*, 3> gc{&sg.theta, &sg.phi, &sg.z};
    std::array<double, 3> mean{};
    std::array<double, 3> var{};
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t i : idx) s += static_cast<double>((*pc[c])[i]) - static_cast<double>((*gc[c])[i]);
        mean[c] = s / n;
        double v = 0.0;
        for (std::size_t i : idx) {
            const double e = static_cast<double>((*pc[c])[i]) - static_cast<double>((*gc[c])[i]) - mean[c];
            v += e * e;
        }
        var[c] = v / n;
    }
    double loss = 0.0;
    for (int c = 0; c < 3; ++c) loss += var[c] + lambda[c] * mean[c] * mean[c];

    if (grad_pred) {
        if (grad_pred->height != pred.height || grad_pred->width != pred.width)
            fail_input("lambda_mse gradient buffer dimension mismatch");
        // Only the z coordinate depends on the predicted depth.
        for (std::size_t i : idx) {
            const double e = static_cast<double>(sp.z[i]) - static_cast<double>(sg.z[i]);
            const double de = 2.0 / n * (e - mean[2]) + 2.0 * lambda[2] * mean[2] / n;
            const double dz = mode == ZMode::Log ? 1.0 / static_cast<double>(pred.depth[i]) : 1.0;
            grad_pred->depth[i] += static_cast<T>(de * dz);
        }
    }
    return static_cast<T>(loss);
}

template float lambda_mse(const BasicDepthMap<float>&, const BasicDepthMap<float>&, const CameraIntrinsics&,
                          const std::array<double, 3>&, ZMode, BasicDepthMap<float>*);
template double lambda_mse(const BasicDepthMap<double>&, const BasicDepthMap<double>&, const CameraIntrinsics&,
                           const std::array<double, 3>&, ZMode, BasicDepthMap<double>*);

template <class T>
T huber(const BasicDepthMap<T>& a, const BasicDepthMap<T>& b, double delta) {
    if (a.height != b.height || a.width != b.width) fail_input("huber dimension mismatch");
    if (!(delta > 0.0)) fail_input("huber delta must be positive");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a.valid[i] || !b.valid[i]) continue;
        sum += static_cast<double>(huber_value<T>(a.depth[i] - b.depth[i], static_cast<T>(delta)));
        ++n;
    }
    if (n == 0) fail_input("huber has no jointly valid pixels");
    return static_cast<T>(sum / static_cast<double>(n));
}

template float huber(const BasicDepthMap<float>&, const BasicDepthMap<float>&, double);
template double huber(const BasicDepthMap<double>&, const BasicDepthMap<double>&, double);

template <class T>
HuberTally<T> aligned_huber(const BasicDepthMap<T>& refined_sample, const Sample& sample,
                            const BasicDepthMap<T>& full_pred, double delta) {
    if (refined_sample.height != sample.depth.height || refined_sample.width != sample.depth.width)
        fail_input("refined view does not match its sample");
    const auto view = sample_view(sample, full_pred);
    HuberTally<T> tally;
    double sum = 0.0;
    for (std::size_t i = 0; i < view.size(); ++i) {
        if (!view.valid[i] || !refined_sample.valid[i]) continue;
        sum += static_cast<double>(huber_value<T>(refined_sample.depth[i] - view.depth[i], static_cast<T>(delta)));
        ++tally.count;
    }
    tally.sum = static_cast<T>(sum);
    return tally;
}

template <class T>
void aligned_huber_backward(const BasicDepthMap<T>& refined_sample, const Sample& sample,
                            const BasicDepthMap<T>& full_pred, double delta, T grad_scale,
                            BasicDepthMap<T>* grad_sample, BasicDepthMap<T>* grad_full) {
    const Alignment& al = sample.alignment;
    const T d = static_cast<T>(delta);
    for (int y = 0; y < refined_sample.height; ++y) {
        for (int x = 0; x < refined_sample.width; ++x) {
            const int fy = al.full_y(y);
            const int fx = al.full_x(x);
            if (sample.kind == SampleKind::Seg && !sample.coverage(fy, fx)) continue;
            const std::size_t si = refined_sample.index(y, x);
            const std::size_t fi = full_pred.index(fy, fx);
            if (!refined_sample.valid[si] || !full_pred.valid[fi]) continue;
            const T psi = std::clamp(refined_sample.depth[si] - full_pred.depth[fi], -d, d) * grad_scale;
            if (grad_sample) grad_sample->depth[si] += psi;
            if (grad_full) grad_full->depth[fi] -= psi;
        }
    }
}

template HuberTally<float> aligned_huber(const BasicDepthMap<float>&, const Sample&, const BasicDepthMap<float>&,
                                         double);
template HuberTally<double> aligned_huber(const BasicDepthMap<double>&, const Sample&, const BasicDepthMap<double>&,
                                          double);
template void aligned_huber_backward(const BasicDepthMap<float>&, const Sample&, const BasicDepthMap<float>&, double,
                                     float, BasicDepthMap<float>*, BasicDepthMap<float>*);
template void aligned_huber_backward(const BasicDepthMap<double>&, const Sample&, const BasicDepthMap<double>&,
                                     double, double, BasicDepthMap<double>*, BasicDepthMap<double>*);

template <class T>
ConsistencyValue pud_consistency_from(const std::vector<RefinedView<T>>& puds, const BasicDepthMap<T>& full_pred,
                                      double delta) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& v : puds) {
        const auto t = aligned_huber(*v.refined, *v.sample, full_pred, delta);
        sum += static_cast<double>(t.sum);
        count += t.count;
    }
    if (count == 0) return {0.0, true};
    return {sum / static_cast<double>(count), false};
}

template <class T>
void pud_consistency_backward(const std::vector<RefinedView<T>>& puds, const BasicDepthMap<T>& full_pred,
                              double delta, T scale, std::vector<BasicDepthMap<T>*>& grad_views,
                              BasicDepthMap<T>& grad_full) {
    std::size_t count = 0;
    for (const auto& v : puds) count += aligned_huber(*v.refined, *v.sample, full_pred, delta).count;
    if (count == 0) return;
    const T g = scale / static_cast<T>(count);
    for (std::size_t i = 0; i < puds.size(); ++i)
        aligned_huber_backward(*puds[i].refined, *puds[i].sample, full_pred, delta, g, grad_views[i], &grad_full);
}

template <class T>
ConsistencyValue view_consistency_from(const std::vector<RefinedView<T>>& views, const BasicDepthMap<T>& full_pred,
                                       double delta) {
    double sum = 0.0;
    int used = 0;
    for (const auto& v : views) {
        const auto t = aligned_huber(*v.refined, *v.sample, full_pred, delta);
        if (t.count == 0) continue;
        sum += static_cast<double>(t.sum) / static_cast<double>(t.count);
        ++used;
    }
    if (used == 0) return {0.0, true};
    return {sum / used, false};
}

template <class T>
void view_consistency_backward(const std::vector<RefinedView<T>>& views, const BasicDepthMap<T>& full_pred,
                               double delta, T scale, std::vector<BasicDepthMap<T>*>& grad_views,
                               BasicDepthMap<T>& grad_full) {
    std::vector<std::size_t> counts;
    int used = 0;
    for (const auto& v : views) {
        counts.push_back(aligned_huber(*v.refined, *v.sample, full_pred, delta).count);
        if (counts.back() > 0) ++used;
    }
    if (used == 0) return;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (counts[i] == 0) continue;
        const T g = scale / static_cast<T>(used) / static_cast<T>(counts[i]);
        aligned_huber_backward(*views[i].refined, *views[i].sample, full_pred, delta, g, grad_views[i], &grad_full);
    }
}

template ConsistencyValue pud_consistency_from(const std::vector<RefinedView<float>>&, const BasicDepthMap<float>&,
                                               double);
template ConsistencyValue pud_consistency_from(const std::vector<RefinedView<double>>&, const BasicDepthMap<double>&,
                                               double);
template ConsistencyValue view_consistency_from(const std::vector<RefinedView<float>>&, const BasicDepthMap<float>&,
                                                double);
template ConsistencyValue view_consistency_from(const std::vector<RefinedView<double>>&,
                                                const BasicDepthMap<double>&, double);
template void pud_consistency_backward(const std::vector<RefinedView<float>>&, const BasicDepthMap<float>&, double,
                                       float, std::vector<BasicDepthMap<float>*>&, BasicDepthMap<float>&);
template void pud_consistency_backward(const std::vector<RefinedView<double>>&, const BasicDepthMap<double>&, double,
                                       double, std::vector<BasicDepthMap<double>*>&, BasicDepthMap<double>&);
template void view_consistency_backward(const std::vector<RefinedView<float>>&, const BasicDepthMap<float>&, double,
                                        float, std::vector<BasicDepthMap<float>*>&, BasicDepthMap<float>&);
template void view_consistency_backward(const std::vector<RefinedView<double>>&, const BasicDepthMap<double>&,
                                        double, double, std::vector<BasicDepthMap<double>*>&,
                                        BasicDepthMap<double>&);

namespace {

ConsistencyValue refine_and_compare(const Refiner& refiner, const std::vector<Sample>& samples,
                                    const DepthMap& full_pred, double delta, SampleKind kind) {
    std::vector<DepthMap> refined;
    refined.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.kind != kind) fail_input(std::string("expected ") + to_string(kind) + " samples");
        refined.push_back(refiner(s.rgb, s.depth));
    }
    std::vector<RefinedView<float>> views;
    for (std::size_t i = 0; i < samples.size(); ++i) views.push_back({&samples[i], &refined[i]});
    return view_consistency_from(views, full_pred, delta);
}

} // namespace

ConsistencyValue pud_consistency(const Refiner& refiner, const ImageTensor& rgb, const DepthMap& depth, int s,
                                 double delta) {
    const DepthMap full_pred = refiner(rgb, depth);
    if (s == 1) return {static_cast<double>(huber(full_pred, full_pred, delta)), false};
    const auto puds = pud_samples(rgb, depth, s);
    std::vector<DepthMap> refined;
    for (const auto& p : puds) refined.push_back(refiner(p.rgb, p.depth));
    std::vector<RefinedView<float>> views;
    for (std::size_t i = 0; i < puds.size(); ++i) views.push_back({&puds[i], &refined[i]});
    return pud_consistency_from(views, full_pred, delta);
}

ConsistencyValue sub_consistency(const Refiner& refiner, const std::vector<Sample>& crops, const DepthMap& full_pred,
                                 double delta) {
    return refine_and_compare(refiner, crops, full_pred, delta, SampleKind::Crop);
}

ConsistencyValue seg_consistency(const Refiner& refiner, const std::vector<Sample>& segs, const DepthMap& full_pred,
                                 double delta) {
    return refine_and_compare(refiner, segs, full_pred, delta, SampleKind::Seg);
}

LossBreakdown total_loss(double lambda_mse_value, double pud, double sub, double seg, const LossWeights& w) {
    for (double v : {lambda_mse_value, pud, sub, seg})
        if (!std::isfinite(v)) fail_numeric("non-finite loss component");
    LossBreakdown b;
    b.lambda_mse = lambda_mse_value;
    b.pud = pud;
    b.sub = sub;
    b.seg = seg;
    b.sample = w.lambda_sample[0] * pud + w.lambda_sample[1] * sub + w.lambda_sample[2] * seg;
    b.total = lambda_mse_value + w.w_sample * b.sample;
    return b;
}

} // namespace multidepth
