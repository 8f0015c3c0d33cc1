#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "openparts/error.hpp"
#include "openparts/math.hpp"
#include "openparts/ood.hpp"

namespace ood = openparts::ood;
namespace m = openparts::math;
using openparts::RngState;
using openparts::Tensor2;

namespace {

// Stats with hand-set parameters, bypassing the EMA path.
ood::ClassStats fixed_stats(const std::vector<std::vector<double>>& mus,
                            const std::vector<Tensor2>& covs) {
    int d = static_cast<int>(mus[0].size());
    ood::ClassStats st(static_cast<int>(mus.size()), d);
    for (size_t c = 0; c < mus.size(); ++c) {
        st.classes[c].init = true;
        st.classes[c].mu = mus[c];
        st.classes[c].cov = covs[c];
    }
    return st;
}

Tensor2 scaled_identity(int d, double s) {
    Tensor2 t = Tensor2::identity(d);
    for (auto& v : t.data) v *= s;
    return t;
}

}  // namespace

TEST_CASE("ema first touch adopts batch statistics") {
    ood::ClassStats st(2, 1);
    Tensor2 z(2, 1, {1.0, 3.0});
    st.ema_update(z, {0, 0}, 0.9, 0.9);

    REQUIRE(st.classes[0].init);
    CHECK_FALSE(st.classes[1].init);
    CHECK(st.initialized_count() == 1);
    CHECK(st.initialized_ids() == std::vector<int>({0}));
    CHECK(st.classes[0].mu[0] == 2.0);
    // divisor max(n-1, 1) = 1
    CHECK(st.classes[0].cov(0, 0) == 2.0);
}

TEST_CASE("ema blends with retention alpha") {
    ood::ClassStats st(1, 1);
    Tensor2 z1(2, 1, {1.0, 3.0});
    st.ema_update(z1, {0, 0}, 0.9, 0.9);
    Tensor2 z2(1, 1, {4.0});
    st.ema_update(z2, {0}, 0.9, 0.9);

    // batch of one has zero covariance under divisor max(0, 1) = 1
    CHECK(st.classes[0].mu[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 4.0).epsilon(1e-15));
    CHECK(st.classes[0].cov(0, 0) == doctest::Approx(0.9 * 2.0).epsilon(1e-15));
    CHECK(st.classes[0].updates == 2);
}

TEST_CASE("ema rejects bad labels and shapes") {
    ood::ClassStats st(2, 3);
    Tensor2 z(1, 3, {1, 2, 3});
    CHECK_THROWS_AS(st.ema_update(z, {2}, 0.9, 0.9), openparts::ParamError);
    CHECK_THROWS_AS(st.ema_update(z, {-1}, 0.9, 0.9), openparts::ParamError);
    CHECK_THROWS_AS(st.ema_update(z, {0, 1}, 0.9, 0.9), openparts::DimError);
    Tensor2 wide(1, 4, {1, 2, 3, 4});
    CHECK_THROWS_AS(st.ema_update(wide, {0}, 0.9, 0.9), openparts::DimError);
}

TEST_CASE("ema diagonal mode drops cross terms") {
    ood::ClassStats st(1, 2, true);
    Tensor2 z(3, 2, {1.0, 2.0, 2.0, 4.0, 3.0, 6.0});
    st.ema_update(z, {0, 0, 0}, 0.9, 0.9);
    CHECK(st.classes[0].cov(0, 1) == 0.0);
    CHECK(st.classes[0].cov(1, 0) == 0.0);
    CHECK(st.classes[0].cov(0, 0) > 0.0);
}

TEST_CASE("tail samples reproduce the broadened covariance") {
    Tensor2 sigma(4, 4, {1.0, 0.3, 0.0, 0.0,
                         0.3, 1.0, 0.0, 0.0,
                         0.0, 0.0, 0.5, 0.1,
                         0.0, 0.0, 0.1, 0.25});
    std::vector<double> mu = {1.0, -2.0, 0.5, 3.0};
    ood::ClassStats st = fixed_stats({mu}, {sigma});

    for (double beta : {1.0, 2.0}) {
        RngState rng(42);
        int n = 50000;
        Tensor2 z = ood::sample_tail(st, 0, beta, n, rng);
        REQUIRE(z.rows == n);

        auto mean = m::batch_mean(z);
        for (int j = 0; j < 4; ++j) CHECK(std::abs(mean[j] - mu[j]) < 0.05);

        Tensor2 cov = m::batch_cov(z, mean);
        Tensor2 want = sigma;
        for (auto& v : want.data) v *= beta;
        for (int j = 0; j < 4; ++j) want(j, j) += m::kRidge;
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < cov.data.size(); ++i) {
            double d = cov.data[i] - want.data[i];
            num += d * d;
            den += want.data[i] * want.data[i];
        }
        CHECK(std::sqrt(num / den) < 0.05);
    }
}

TEST_CASE("tail sampling guards its preconditions") {
    ood::ClassStats st(2, 2);
    RngState rng(1);
    CHECK_THROWS_AS(ood::sample_tail(st, 0, 2.0, 1, rng), openparts::ParamError);
    CHECK_THROWS_AS(ood::sample_tail(st, 5, 2.0, 1, rng), openparts::ParamError);

    st.classes[0].init = true;
    st.classes[0].mu = {0.0, 0.0};
    st.classes[0].cov = Tensor2::identity(2);
    CHECK_THROWS_AS(ood::sample_tail(st, 0, 0.5, 1, rng), openparts::ParamError);
    CHECK_NOTHROW(ood::sample_tail(st, 0, 1.0, 1, rng));
}

TEST_CASE("mix with zero jitter lies on the segment between two means") {
    ood::ClassStats st =
        fixed_stats({{1.0, 0.0}, {0.0, 1.0}}, {scaled_identity(2, 1.0), scaled_identity(2, 1.0)});
    RngState rng(7);
    int n = 50000;
    Tensor2 z = ood::sample_mix(st, 2, 0.0, n, rng);

    // Coordinates are (w, 1-w); the mixing weight is uniform on [0, 1].
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) {
        CHECK(z(i, 0) + z(i, 1) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(z(i, 0) >= -1e-12);
        CHECK(z(i, 0) <= 1.0 + 1e-12);
        w[i] = z(i, 0);
    }
    std::sort(w.begin(), w.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        double lo = static_cast<double>(i) / n;
        double hi = static_cast<double>(i + 1) / n;
        ks = std::max(ks, std::max(std::abs(w[i] - lo), std::abs(w[i] - hi)));
    }
    CHECK(ks < 0.02);
}

TEST_CASE("mix jitter is centered") {
    ood::ClassStats st =
        fixed_stats({{1.0, 0.0}, {0.0, 1.0}}, {scaled_identity(2, 1.0), scaled_identity(2, 1.0)});
    RngState rng(8);
    int n = 50000;
    Tensor2 z = ood::sample_mix(st, 2, 0.1, n, rng);
    auto mean = m::batch_mean(z);
    CHECK(std::abs(mean[0] - 0.5) < 0.01);
    CHECK(std::abs(mean[1] - 0.5) < 0.01);
}

TEST_CASE("mix needs k distinct initialized classes") {
    ood::ClassStats st = fixed_stats({{1.0, 0.0}}, {scaled_identity(2, 1.0)});
    RngState rng(9);
    CHECK_THROWS_AS(ood::sample_mix(st, 2, 0.1, 4, rng), openparts::ParamError);
    CHECK_THROWS_AS(ood::sample_mix(st, 0, 0.1, 4, rng), openparts::ParamError);
    // a single-mean "mixture" is legal and degenerates to jittered copies
    Tensor2 z = ood::sample_mix(st, 1, 0.0, 3, rng);
    for (int i = 0; i < 3; ++i) {
        CHECK(z(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(z(i, 1) == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("sphere samples are unit and directionally uniform") {
    RngState rng(11);
    int n = 16000;
    Tensor2 z = ood::sample_sphere(2, n, rng);
    std::vector<int> bins(16, 0);
    for (int i = 0; i < n; ++i) {
        double norm = std::sqrt(z(i, 0) * z(i, 0) + z(i, 1) * z(i, 1));
        CHECK(std::abs(norm - 1.0) < 1e-12);
        double angle = std::atan2(z(i, 1), z(i, 0));  // [-pi, pi]
        int b = std::min(15, static_cast<int>((angle + 3.14159265358979323846) /
                                              (2.0 * 3.14159265358979323846) * 16.0));
        ++bins[b];
    }
    double expect = n / 16.0;
    double chi2 = 0.0;
    for (int b = 0; b < 16; ++b) {
        double d = bins[b] - expect;
        chi2 += d * d / expect;
    }
    // 1% critical value for 15 degrees of freedom
    CHECK(chi2 < 30.578);

    Tensor2 z5 = ood::sample_sphere(5, 2000, rng);
    for (int i = 0; i < 2000; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) s += z5(i, j) * z5(i, j);
        CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-12);
    }
}

TEST_CASE("proposal splits 64 as 22/21/21 with the remainder on the tail") {
    ood::ClassStats st = fixed_stats(
        {{10.0, 0.0}, {0.0, 10.0}, {-10.0, -10.0}},
        {scaled_identity(2, 1e-6), scaled_identity(2, 1e-6), scaled_identity(2, 1e-6)});
    RngState rng(13);
    ood::ProposalConfig cfg;
    ood::OODBatch batch = ood::propose_ood(st, cfg, rng);

    REQUIRE(batch.z.rows == 64);
    REQUIRE(batch.tag.size() == 64);
    int counts[3] = {0, 0, 0};
    for (int tag : batch.tag) ++counts[tag];
    CHECK(counts[0] == 22);
    CHECK(counts[1] == 21);
    CHECK(counts[2] == 21);
    // tags come in blocks: tail, then mix, then sphere
    CHECK(batch.tag.front() == 0);
    CHECK(batch.tag.back() == 2);
    CHECK(std::is_sorted(batch.tag.begin(), batch.tag.end()));

    // Tiny covariances pin tail draws to their class mean; the 22 draws
    // cycle ids 0,1,2 so the per-class counts are 8/7/7.
    int per_class[3] = {0, 0, 0};
    for (int i = 0; i < 22; ++i) {
        double best = 1e300;
        int arg = -1;
        for (int c = 0; c < 3; ++c) {
            double dx = batch.z(i, 0) - st.classes[c].mu[0];
            double dy = batch.z(i, 1) - st.classes[c].mu[1];
            double d = dx * dx + dy * dy;
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        ++per_class[arg];
    }
    CHECK(per_class[0] == 8);
    CHECK(per_class[1] == 7);
    CHECK(per_class[2] == 7);
}

TEST_CASE("proposal honors disabled samplers") {
    ood::ClassStats st = fixed_stats(
        {{10.0, 0.0}, {0.0, 10.0}},
        {scaled_identity(2, 1e-6), scaled_identity(2, 1e-6)});
    RngState rng(14);

    ood::ProposalConfig cfg;
    cfg.split = {0.0, 1.0, 1.0};
    ood::OODBatch batch = ood::propose_ood(st, cfg, rng);
    int counts[3] = {0, 0, 0};
    for (int tag : batch.tag) ++counts[tag];
    CHECK(counts[0] == 0);
    CHECK(counts[1] == 32);
    CHECK(counts[2] == 32);

    cfg.split = {1.0, 0.0, 0.0};
    batch = ood::propose_ood(st, cfg, rng);
    counts[0] = counts[1] = counts[2] = 0;
    for (int tag : batch.tag) ++counts[tag];
    CHECK(counts[0] == 64);

    cfg.split = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(ood::propose_ood(st, cfg, rng), openparts::ParamError);
    cfg.split = {1.0, 1.0};
    CHECK_THROWS_AS(ood::propose_ood(st, cfg, rng), openparts::ParamError);
    cfg.split = {1.0, 1.0, 1.0};
    cfg.n_total = 0;
    CHECK_THROWS_AS(ood::propose_ood(st, cfg, rng), openparts::ParamError);
}

TEST_CASE("proposal demands enough initialized classes") {
    ood::ClassStats st(3, 2);
    RngState rng(15);
    ood::ProposalConfig cfg;
    CHECK_THROWS_AS(ood::propose_ood(st, cfg, rng), openparts::ParamError);

    st.classes[0].init = true;
    st.classes[0].mu = {1.0, 0.0};
    st.classes[0].cov = scaled_identity(2, 1e-6);
    // one class: tail fine, mix (k = 2) not
    CHECK_THROWS_AS(ood::propose_ood(st, cfg, rng), openparts::ParamError);
    cfg.split = {1.0, 0.0, 1.0};
    CHECK_NOTHROW(ood::propose_ood(st, cfg, rng));
}

TEST_CASE("cosine classifier scale and invariances") {
    RngState rng(17);
    ood::CosineClassifier clf = ood::CosineClassifier::init(3, 4, 10.0, rng);
    CHECK(clf.gamma() == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(clf.log_gamma == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    for (int k = 0; k < 3; ++k) {
        double n = 0.0;
        for (int j = 0; j < 4; ++j) n += clf.w(k, j) * clf.w(k, j);
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    }

    Tensor2 z(2, 4, {1.0, 2.0, -0.5, 0.25, 0.0, -1.0, 0.5, 2.0});
    Tensor2 g1 = ood::logits(clf, z);
    Tensor2 z2 = z;
    for (auto& v : z2.data) v *= 3.0;
    Tensor2 g2 = ood::logits(clf, z2);
    for (size_t i = 0; i < g1.data.size(); ++i)
        CHECK(g1.data[i] == doctest::Approx(g2.data[i]).epsilon(1e-12));

    // logit = gamma * cosine
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 3; ++k) {
            double c = m::cosine_sim(z.row(i), clf.w.row(k), 4, nullptr);
            CHECK(g1(i, k) == doctest::Approx(10.0 * c).epsilon(1e-12));
        }

    Tensor2 zz(1, 4);
    int degenerate = 0;
    Tensor2 g0 = ood::logits(clf, zz, &degenerate);
    CHECK(degenerate == 1);
    for (double v : g0.data) CHECK(v == 0.0);
}

TEST_CASE("energy of uniform logits is -tau ln K") {
    std::vector<double> flat = {0.0, 0.0, 0.0, 0.0};
    CHECK(ood::energy(flat.data(), 4, 1.0) ==
          doctest::Approx(-1.3862943611198906).epsilon(1e-14));
    CHECK(ood::energy(flat.data(), 4, 0.5) ==
          doctest::Approx(-0.5 * 1.3862943611198906).epsilon(1e-14));

    std::vector<double> peak = {10.0, 0.0, 0.0};
    CHECK(ood::energy(peak.data(), 3, 1.0) ==
          doctest::Approx(-10.000090795737467).epsilon(1e-14));
}

TEST_CASE("energy is bracketed by the max logit") {
    RngState rng(19);
    for (int trial = 0; trial < 50; ++trial) {
        int k = 2 + static_cast<int>(rng.below(6));
        std::vector<double> g(k);
        for (auto& v : g) v = 4.0 * (rng.uniform01() - 0.5);
        double tau = 0.25 + rng.uniform01();
        double e = ood::energy(g.data(), k, tau);
        double mx = *std::max_element(g.begin(), g.end());
        CHECK(e <= -mx + 1e-12);
        CHECK(e >= -mx - tau * std::log(static_cast<double>(k)) - 1e-12);
    }
}

TEST_CASE("frozen loss values") {
    std::vector<double> e = {3.0, 5.0, 7.0};
    CHECK(ood::loss_oe(e, 5.0) == doctest::Approx(0.6666666666666666).epsilon(1e-15));

    // Hinge vanishes once every energy clears the margin.
    std::vector<double> high = {5.0, 6.0, 9.0};
    CHECK(ood::loss_oe(high, 5.0) == 0.0);

    Tensor2 logits(1, 2, {2.0, 0.0});
    CHECK(ood::loss_ent(logits, 1.0) == doctest::Approx(0.36533385508720767).epsilon(1e-14));

    double ufa = ood::loss_ufa(0.6666666666666666, 0.36533385508720767, 0.5, 0.5);
    CHECK(ufa == doctest::Approx(0.15066640578972948).epsilon(1e-14));

    // Uniform logits maximize the entropy term at ln K.
    Tensor2 uni(2, 4);
    CHECK(ood::loss_ent(uni, 1.0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    CHECK(ood::energies(logits, 1.0).size() == 1);
}

TEST_CASE("broadened tails respect a generous class margin") {
    // Two classes separated by 14 sqrt(beta lambda_max): broadened samples
    // from one class stay on their own side.
    double beta = 2.0;
    double delta = 14.0 * std::sqrt(beta * 1.0);
    Tensor2 cov(4, 4, {1.0, 0.0, 0.0, 0.0,
                       0.0, 0.5, 0.0, 0.0,
                       0.0, 0.0, 0.25, 0.0,
                       0.0, 0.0, 0.0, 0.1});
    ood::ClassStats st = fixed_stats({{0.0, 0.0, 0.0, 0.0}, {delta, 0.0, 0.0, 0.0}},
                                     {cov, cov});
    RngState rng(23);
    Tensor2 z = ood::sample_tail(st, 0, beta, 10000, rng);
    for (int i = 0; i < z.rows; ++i) {
        double d0 = 0.0, d1 = 0.0;
        for (int j = 0; j < 4; ++j) {
            d0 += z(i, j) * z(i, j);
            double t = z(i, j) - st.classes[1].mu[j];
            d1 += t * t;
        }
        CHECK(d0 < d1);
    }
}
