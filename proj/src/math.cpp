#include "openparts/math.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace openparts::math {

double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double norm(const double* a, int n) { return std::sqrt(dot(a, a, n)); }

double logsumexp(const double* v, int n, double tau) {
    if (n <= 0) throw ParamError("logsumexp over empty vector");
    if (tau <= 0.0) throw ParamError("logsumexp temperature must be positive");
    double m = v[0];
    for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp((v[i] - m) / tau);
    return m + tau * std::log(s);
}

std::vector<double> softmax(const double* v, int n, double tau) {
    if (n <= 0) throw ParamError("softmax over empty vector");
    if (tau <= 0.0) throw ParamError("softmax temperature must be positive");
    double m = v[0];
    for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
    std::vector<double> out(n);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp((v[i] - m) / tau);
        s += out[i];
    }
    for (int i = 0; i < n; ++i) out[i] /= s;
    return out;
}

Tensor2 softmax_rows(const Tensor2& x, double tau) {
    Tensor2 out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
        auto p = softmax(x.row(r), x.cols, tau);
        std::copy(p.begin(), p.end(), out.row(r));
    }
    return out;
}

Tensor2 logsumexp_rows(const Tensor2& x, double tau) {
    Tensor2 out(x.rows, 1);
    for (int r = 0; r < x.rows; ++r) out(r, 0) = logsumexp(x.row(r), x.cols, tau);
    return out;
}

double entropy_of_logits(const double* v, int n, double tau) {
    auto p = softmax(v, n, tau);
    double h = 0.0;
    for (int i = 0; i < n; ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
}

double cosine_sim(const double* a, const double* b, int n, bool* degenerate) {
    double na = norm(a, n);
    double nb = norm(b, n);
    if (na < kNormEps || nb < kNormEps) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    double c = dot(a, b, n) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

Tensor2 cosine_pairwise(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.cols) throw DimError("cosine_pairwise: column mismatch");
    Tensor2 out(a.rows, b.rows);
    std::vector<double> nb(b.rows);
    for (int j = 0; j < b.rows; ++j) nb[j] = norm(b.row(j), b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double na = norm(a.row(i), a.cols);
        for (int j = 0; j < b.rows; ++j) {
            if (na < kNormEps || nb[j] < kNormEps) {
                out(i, j) = 0.0;
            } else {
                out(i, j) = std::clamp(dot(a.row(i), b.row(j), a.cols) / (na * nb[j]), -1.0, 1.0);
            }
        }
    }
    return out;
}

int l2_normalize_rows(Tensor2& x) {
    int degenerate = 0;
    for (int r = 0; r < x.rows; ++r) {
        double n = norm(x.row(r), x.cols);
        if (n < kNormEps) {
            ++degenerate;
            std::fill(x.row(r), x.row(r) + x.cols, 0.0);
            if (x.cols > 0) x(r, 0) = 1.0;
        } else {
            for (int c = 0; c < x.cols; ++c) x(r, c) /= n;
        }
    }
    return degenerate;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.rows) throw DimError("matmul: inner dimension mismatch");
    Tensor2 out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * br[j];
        }
    }
    return out;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
    if (a.rows != b.rows) throw DimError("matmul_tn: row mismatch");
    Tensor2 out(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* ar = a.row(k);
        const double* br = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            double aki = ar[i];
            if (aki == 0.0) continue;
            double* orow = out.row(i);
            for (int j = 0; j < b.cols; ++j) orow[j] += aki * br[j];
        }
    }
    return out;
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
    if (a.cols != b.cols) throw DimError("matmul_nt: column mismatch");
    Tensor2 out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.rows; ++j) out(i, j) = dot(a.row(i), b.row(j), a.cols);
    return out;
}

Tensor2 cholesky(const Tensor2& sigma, double ridge, const char* who) {
    if (sigma.rows != sigma.cols) throw DimError("cholesky: matrix not square");
    int n = sigma.rows;
    Tensor2 l(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = sigma(i, j) + (i == j ? ridge : 0.0);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) {
                    std::string msg = "cholesky: matrix not positive definite at pivot " +
                                      std::to_string(i);
                    if (who) msg += std::string(" (") + who + ")";
                    throw NumericError(msg);
                }
                l(i, j) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

Tensor2 sample_gaussian(RngState& rng, const std::vector<double>& mu, const Tensor2& l_factor,
                        int n) {
    int d = static_cast<int>(mu.size());
    if (l_factor.rows != d || l_factor.cols != d)
        throw DimError("sample_gaussian: factor shape does not match mean");
    Tensor2 out(n, d);
    std::vector<double> v(d);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) v[k] = rng.normal();
        double* row = out.row(i);
        for (int r = 0; r < d; ++r) {
            double s = mu[r];
            const double* lr = l_factor.row(r);
            for (int k = 0; k <= r; ++k) s += lr[k] * v[k];
            row[r] = s;
        }
    }
    return out;
}

std::vector<double> sample_dirichlet(RngState& rng, int k) {
    if (k < 1) throw ParamError("sample_dirichlet: k must be >= 1");
    std::vector<double> w(k);
    double s = 0.0;
    for (int i = 0; i < k; ++i) {
        w[i] = -std::log(rng.uniform_open());
        s += w[i];
    }
    for (int i = 0; i < k; ++i) w[i] /= s;
    return w;
}

double sample_gumbel(RngState& rng) { return -std::log(-std::log(rng.uniform_open())); }

std::vector<double> sample_sphere(RngState& rng, int d) {
    std::vector<double> v(d);
    double n = 0.0;
    do {
        for (int i = 0; i < d; ++i) v[i] = rng.normal();
        n = norm(v.data(), d);
    } while (n < kNormEps);
    for (int i = 0; i < d; ++i) v[i] /= n;
    return v;
}

int argmax(const double* v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::vector<double> batch_mean(const Tensor2& x) {
    std::vector<double> m(x.cols, 0.0);
    if (x.rows == 0) return m;
    for (int r = 0; r < x.rows; ++r)
        for (int c = 0; c < x.cols; ++c) m[c] += x(r, c);
    for (int c = 0; c < x.cols; ++c) m[c] /= x.rows;
    return m;
}

Tensor2 batch_cov(const Tensor2& x, const std::vector<double>& mean) {
    int d = x.cols;
    Tensor2 cov(d, d);
    if (x.rows == 0) return cov;
    double denom = std::max(x.rows - 1, 1);
    std::vector<double> dev(d);
    for (int r = 0; r < x.rows; ++r) {
        for (int c = 0; c < d; ++c) dev[c] = x(r, c) - mean[c];
        for (int i = 0; i < d; ++i) {
            if (dev[i] == 0.0) continue;
            for (int j = 0; j < d; ++j) cov(i, j) += dev[i] * dev[j];
        }
    }
    for (auto& v : cov.data) v /= denom;
    return cov;
}

bool all_finite(const Tensor2& x) {
    for (double v : x.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace openparts::math
