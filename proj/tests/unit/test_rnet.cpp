#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "multidepth/rnet.hpp"

using namespace multidepth;
using testing::random_depth;
using testing::random_image;

namespace {

RNetConfig small_config() {
    RNetConfig cfg;
    cfg.levels = 2;
    cfg.base_channels = 4;
    return cfg;
}

template <class T>
void randomize(BasicRNetWeights<T>& w, Rng& rng, double scale) {
    for (auto& p : w.params)
        for (auto& v : p.value) v = static_cast<T>(rng.normal(0.0, scale));
}

} // namespace

TEST_CASE("zero weights refine to the input exactly, noise or not") {
    Rng rng(1);
    const ImageTensor rgb = random_image(3, 10, 14, rng);
    DepthMap d = random_depth(10, 14, rng);
    d.valid[5] = 0;
    d.depth[5] = 0.0f;
    const RNetWeights w = zero_weights<float>(small_config());
    const auto noise = draw_log_noise(10, 14, 0.1, rng);
    CHECK(refine_view(w, rgb, d, std::span<const float>{}) == d);
    CHECK(refine_view(w, rgb, d, noise) == d);
    Rng r(2);
    CHECK(refine(w, rgb, d, 0.05, r) == d);
}

TEST_CASE("refinement stays positive and respects the residual clamp") {
    Rng rng(3);
    const RNetConfig cfg = small_config();
    RNetWeights w = init_weights(cfg, rng);
    randomize(w, rng, 2.0);
    const ImageTensor rgb = random_image(3, 9, 11, rng);
    DepthMap d = random_depth(9, 11, rng);
    d.valid[7] = 0;
    d.depth[7] = 0.0f;
    const DepthMap out = refine_view(w, rgb, d, std::span<const float>{});
    const double bound = std::exp(cfg.residual_clamp) * (1 + 1e-6);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(out.valid[i] == d.valid[i]);
        if (!d.valid[i]) continue;
        CHECK(out.depth[i] > 0.0f);
        CHECK(std::isfinite(out.depth[i]));
        const double ratio = out.depth[i] / static_cast<double>(d.depth[i]);
        CHECK(ratio <= bound);
        CHECK(ratio >= 1.0 / bound);
    }
}

TEST_CASE("forward is deterministic and thread-count independent in output") {
    Rng rng(4);
    RNetWeights w = init_weights(small_config(), rng);
    const ImageTensor rgb = random_image(3, 16, 16, rng);
    const DepthMap d = random_depth(16, 16, rng);
    const auto noise = draw_log_noise(16, 16, 0.05, rng);
    CHECK(refine_view(w, rgb, d, noise) == refine_view(w, rgb, d, noise));
}

TEST_CASE("draw_log_noise is empty at sigma 0 and reproducible") {
    Rng a(5), b(5);
    CHECK(draw_log_noise(4, 4, 0.0, a).empty());
    CHECK(a.next_u64() == b.next_u64());
    Rng c(6), e(6);
    CHECK(draw_log_noise(3, 5, 0.2, c) == draw_log_noise(3, 5, 0.2, e));
    CHECK(draw_log_noise(3, 5, 0.2, c).size() == 15);
}

TEST_CASE("refine_view_backward matches central differences") {
    Rng rng(7);
    BasicRNetWeights<double> w = weights_cast<double>(init_weights(small_config(), rng));
    randomize(w, rng, 0.3);
    const ImageTensor rgb = random_image(3, 6, 7, rng);  // odd size exercises padding
    DepthMap d = random_depth(6, 7, rng);
    d.valid[3] = 0;
    d.depth[3] = 0.0f;
    const auto noise = draw_log_noise(6, 7, 0.05, rng);
    std::vector<double> coeff(d.size());
    for (auto& c : coeff) c = rng.normal();

    auto loss = [&](const BasicRNetWeights<double>& ww) {
        const auto out = refine_view(ww, rgb, d, noise);
        double s = 0;
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out.valid[i]) s += coeff[i] * out.depth[i];
        return s;
    };

    RefineCache<double> cache;
    refine_view(w, rgb, d, noise, &cache);
    BasicDepthMap<double> g(6, 7, 0.0, true);
    for (std::size_t i = 0; i < g.size(); ++i) g.depth[i] = coeff[i];
    BasicRNetWeights<double> grads = zero_weights<double>(w.config);
    refine_view_backward(w, cache, g, grads);

    const double h = 1e-6;
    int checked = 0;
    for (std::size_t p = 0; p < w.params.size(); ++p) {
        for (std::size_t j = 0; j < w.params[p].value.size(); j += 1 + w.params[p].value.size() / 5) {
            BasicRNetWeights<double> up = w, dn = w;
            up.params[p].value[j] += h;
            dn.params[p].value[j] -= h;
            const double fd = (loss(up) - loss(dn)) / (2 * h);
            const double an = grads.params[p].value[j];
            CHECK(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(fd)));
            ++checked;
        }
    }
    CHECK(checked > 20);
}

TEST_CASE("adamw step matches a direct evaluation of the update rule") {
    Rng rng(8);
    RNetWeights w = init_weights(small_config(), rng);
    RNetWeights g = zero_weights<float>(w.config);
    randomize(g, rng, 0.1);
    AdamWConfig cfg;
    cfg.lr = 1e-2;
    cfg.weight_decay = 0.05;
    OptimState st = OptimState::for_weights(w, cfg);

    // Oracle kept in double with its own moments.
    std::vector<std::vector<double>> m(w.params.size()), v(w.params.size()), x(w.params.size());
    for (std::size_t i = 0; i < w.params.size(); ++i) {
        m[i].assign(w.params[i].value.size(), 0.0);
        v[i].assign(w.params[i].value.size(), 0.0);
        x[i].assign(w.params[i].value.begin(), w.params[i].value.end());
    }
    for (int t = 1; t <= 3; ++t) {
        adamw_step(w, g, st);
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (std::size_t j = 0; j < x[i].size(); ++j) {
                const double gj = g.params[i].value[j];
                x[i][j] *= 1.0 - cfg.lr * cfg.weight_decay;
                m[i][j] = cfg.beta1 * m[i][j] + (1 - cfg.beta1) * gj;
                v[i][j] = cfg.beta2 * v[i][j] + (1 - cfg.beta2) * gj * gj;
                const double mh = m[i][j] / (1 - std::pow(cfg.beta1, t));
                const double vh = v[i][j] / (1 - std::pow(cfg.beta2, t));
                x[i][j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.epsilon);
            }
        }
    }
    CHECK(st.step == 3);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) CHECK(w.params[i].value[j] == doctest::Approx(x[i][j]).epsilon(1e-5));
}

TEST_CASE("adamw rejects non-finite gradients without side effects") {
    Rng rng(9);
    RNetWeights w = init_weights(small_config(), rng);
    RNetWeights g = zero_weights<float>(w.config);
    g.params[0].value[0] = std::numeric_limits<float>::quiet_NaN();
    OptimState st = OptimState::for_weights(w, AdamWConfig{});
    const RNetWeights before = w;
    try {
        adamw_step(w, g, st);
        FAIL("expected a numeric error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numeric);
    }
    CHECK(st.step == 0);
    for (std::size_t i = 0; i < w.params.size(); ++i) CHECK(w.params[i].value == before.params[i].value);
}

TEST_CASE("rnet config validation") {
    RNetConfig c;
    c.levels = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.base_channels = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.depth_noise_sigma = -1;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(RNetConfig{}.size_multiple() == 4);
}
