#include <cmath>
#include <vector>

#include "doctest.h"
#include "openparts/math.hpp"

using namespace openparts;
namespace m = openparts::math;

TEST_CASE("logsumexp matches closed forms") {
    double v1[] = {0.0, 0.0};
    CHECK(m::logsumexp(v1, 2, 1.0) == doctest::Approx(0.6931471805599453).epsilon(1e-12));

    // 100.5 + log1p(exp(-0.5)), no overflow
    double v2[] = {100.0, 100.5};
    CHECK(m::logsumexp(v2, 2, 1.0) == doctest::Approx(100.9740769841801).epsilon(1e-12));

    double v3[] = {5.0};
    CHECK(m::logsumexp(v3, 1, 0.25) == doctest::Approx(5.0));
}

TEST_CASE("logsumexp bounds and temperature scaling") {
    RngState rng(41);
    for (double tau : {0.1, 0.5, 1.0, 2.0}) {
        for (int rep = 0; rep < 20; ++rep) {
            int n = 2 + static_cast<int>(rng.below(9));
            std::vector<double> v(n);
            for (auto& x : v) x = 20.0 * (rng.uniform01() - 0.5);
            double mx = *std::max_element(v.begin(), v.end());
            double lse = m::logsumexp(v.data(), n, tau);
            CHECK(lse >= mx - 1e-12);
            CHECK(lse <= mx + tau * std::log(static_cast<double>(n)) + 1e-12);
        }
    }
}

TEST_CASE("softmax closed form and invariances") {
    double v[] = {2.0, 1.0};
    auto p = m::softmax(v, 2, 0.5);
    CHECK(p[0] == doctest::Approx(0.8807970779778823).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.11920292202211755).epsilon(1e-12));

    RngState rng(7);
    for (int rep = 0; rep < 30; ++rep) {
        int n = 2 + static_cast<int>(rng.below(7));
        std::vector<double> x(n), shifted(n);
        double c = 50.0 * (rng.uniform01() - 0.5);
        for (int i = 0; i < n; ++i) {
            x[i] = 10.0 * (rng.uniform01() - 0.5);
            shifted[i] = x[i] + c;
        }
        auto a = m::softmax(x.data(), n, 0.7);
        auto b = m::softmax(shifted.data(), n, 0.7);
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            s += a[i];
            CHECK(std::abs(a[i] - b[i]) < 1e-12);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
        // order preserved
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (x[i] < x[j]) CHECK(a[i] <= a[j] + 1e-15);
    }
}

TEST_CASE("entropy of uniform logits is ln K") {
    std::vector<double> z(16, 0.0);
    CHECK(m::entropy_of_logits(z.data(), 16, 1.0) ==
          doctest::Approx(std::log(16.0)).epsilon(1e-12));
}

TEST_CASE("cosine similarity clamping and degenerate input") {
    double a[] = {1.0, 0.0};
    double b[] = {1.0, 0.0};
    double c[] = {0.0, 1.0};
    double z[] = {0.0, 0.0};
    CHECK(m::cosine_sim(a, b, 2) == doctest::Approx(1.0));
    CHECK(m::cosine_sim(a, c, 2) == doctest::Approx(0.0));
    bool degenerate = false;
    CHECK(m::cosine_sim(a, z, 2, &degenerate) == 0.0);
    CHECK(degenerate);

    // near-parallel vectors must stay within [-1, 1] after rounding
    double p[] = {1e8, 1e-8};
    double q[] = {1e8, 1e-8};
    double s = m::cosine_sim(p, q, 2);
    CHECK(s <= 1.0);
    CHECK(s >= -1.0);
}

TEST_CASE("cholesky closed forms") {
    Tensor2 eye = Tensor2::identity(3);
    Tensor2 l = m::cholesky(eye);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(std::abs(l(i, j) - (i == j ? 1.0 : 0.0)) < 6e-5);

    Tensor2 d2(2, 2);
    d2(0, 0) = 4.0;
    d2(1, 1) = 9.0;
    Tensor2 l2 = m::cholesky(d2);
    CHECK(std::abs(l2(0, 0) - 2.0) < 3e-5);
    CHECK(std::abs(l2(1, 1) - 3.0) < 3e-5);
    CHECK(l2(0, 1) == 0.0);
    CHECK(std::abs(l2(1, 0)) < 1e-12);
}

TEST_CASE("cholesky reconstructs ridged covariance up to 64x64") {
    RngState rng(11);
    for (int n : {2, 8, 31, 64}) {
        // A A^T + I is symmetric positive definite
        Tensor2 a(n, n);
        for (auto& v : a.data) v = rng.normal();
        Tensor2 sigma = m::matmul_nt(a, a);
        for (int i = 0; i < n; ++i) sigma(i, i) += 1.0;

        Tensor2 l = m::cholesky(sigma);
        Tensor2 rec = m::matmul_nt(l, l);
        double num = 0.0, den = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double target = sigma(i, j) + (i == j ? m::kRidge : 0.0);
                num += (rec(i, j) - target) * (rec(i, j) - target);
                den += target * target;
            }
        }
        CHECK(std::sqrt(num / den) < 1e-8);
    }
}

TEST_CASE("cholesky rejects an indefinite matrix and names the pivot") {
    Tensor2 bad(2, 2);
    bad(0, 0) = 1.0;
    bad(0, 1) = 2.0;
    bad(1, 0) = 2.0;
    bad(1, 1) = 1.0;
    CHECK_THROWS_AS(m::cholesky(bad), NumericError);
    try {
        m::cholesky(bad, m::kRidge, "class 3");
    } catch (const NumericError& e) {
        std::string msg = e.what();
        CHECK(msg.find("pivot 1") != std::string::npos);
        CHECK(msg.find("class 3") != std::string::npos);
    }
}

TEST_CASE("matmul variants agree with naive loops") {
    RngState rng(3);
    Tensor2 a(5, 4), b(4, 6);
    for (auto& v : a.data) v = rng.normal();
    for (auto& v : b.data) v = rng.normal();
    Tensor2 c = m::matmul(a, b);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-12));
        }

    Tensor2 at(4, 5);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 4; ++k) at(k, i) = a(i, k);
    Tensor2 c2 = m::matmul_tn(at, b);  // (a^T)^T b = a b
    for (size_t i = 0; i < c.data.size(); ++i)
        CHECK(c2.data[i] == doctest::Approx(c.data[i]).epsilon(1e-12));

    Tensor2 bt(6, 4);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 6; ++j) bt(j, k) = b(k, j);
    Tensor2 c3 = m::matmul_nt(a, bt);
    for (size_t i = 0; i < c.data.size(); ++i)
        CHECK(c3.data[i] == doctest::Approx(c.data[i]).epsilon(1e-12));
}

TEST_CASE("rng is a pure function of seed and position") {
    RngState a(123), b(123);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(a.pos == 1000);

    RngState c(123);
    c.pos = 500;
    RngState d(123);
    for (int i = 0; i < 500; ++i) d.next_u64();
    CHECK(c.next_u64() == d.next_u64());

    RngState e(124);
    RngState f(123);
    f.pos = 0;
    CHECK(e.next_u64() != f.next_u64());
}

TEST_CASE("uniform_open stays strictly inside (0,1)") {
    RngState rng(9);
    for (int i = 0; i < 100000; ++i) {
        double u = rng.uniform_open();
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("standard normal sampler moments") {
    RngState rng(2024);
    std::vector<double> mu(4, 0.0);
    Tensor2 l = Tensor2::identity(4);
    Tensor2 x = m::sample_gaussian(rng, mu, l, 50000);

    auto mean = m::batch_mean(x);
    for (double v : mean) CHECK(std::abs(v) < 0.05);

    Tensor2 cov = m::batch_cov(x, mean);
    double num = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double target = (i == j) ? 1.0 : 0.0;
            num += (cov(i, j) - target) * (cov(i, j) - target);
        }
    CHECK(std::sqrt(num) / 2.0 < 0.05);  // ||I||_F = 2
}

TEST_CASE("correlated gaussian sampler reproduces its factor") {
    Tensor2 sigma(2, 2);
    sigma(0, 0) = 1.0;
    sigma(0, 1) = 0.6;
    sigma(1, 0) = 0.6;
    sigma(1, 1) = 2.0;
    Tensor2 l = m::cholesky(sigma, 0.0);
    RngState rng(77);
    Tensor2 x = m::sample_gaussian(rng, {1.0, -2.0}, l, 50000);
    auto mean = m::batch_mean(x);
    CHECK(std::abs(mean[0] - 1.0) < 0.05);
    CHECK(std::abs(mean[1] + 2.0) < 0.05);
    Tensor2 cov = m::batch_cov(x, mean);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            num += (cov(i, j) - sigma(i, j)) * (cov(i, j) - sigma(i, j));
            den += sigma(i, j) * sigma(i, j);
        }
    CHECK(std::sqrt(num / den) < 0.05);
}

TEST_CASE("dirichlet(1) component means") {
    RngState rng(5);
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        auto w = m::sample_dirichlet(rng, 3);
        s0 += w[0];
        s1 += w[1];
        s2 += w[2];
        CHECK(std::abs(w[0] + w[1] + w[2] - 1.0) < 1e-12);
    }
    CHECK(std::abs(s0 / n - 1.0 / 3.0) < 0.01);
    CHECK(std::abs(s1 / n - 1.0 / 3.0) < 0.01);
    CHECK(std::abs(s2 / n - 1.0 / 3.0) < 0.01);
}

TEST_CASE("gumbel sampler mean near Euler-Mascheroni") {
    RngState rng(6);
    double s = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        double g = m::sample_gumbel(rng);
        CHECK(std::isfinite(g));
        s += g;
    }
    CHECK(std::abs(s / n - 0.5772156649015329) < 0.02);
}

TEST_CASE("argmax breaks ties toward the lower index") {
    double v[] = {0.3, 0.7, 0.7, 0.1};
    CHECK(m::argmax(v, 4) == 1);
    double w[] = {2.0, 2.0};
    CHECK(m::argmax(w, 2) == 0);
}

TEST_CASE("l2_normalize_rows flags near-zero rows") {
    Tensor2 x(2, 3);
    x(0, 0) = 3.0;
    x(0, 1) = 4.0;
    CHECK(m::l2_normalize_rows(x) == 1);
    CHECK(x(0, 0) == doctest::Approx(0.6));
    CHECK(x(0, 1) == doctest::Approx(0.8));
    CHECK(x(1, 0) == 1.0);  // degenerate row becomes e1
    CHECK(x(1, 1) == 0.0);
}
