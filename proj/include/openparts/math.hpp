#pragma once

#include <vector>

#include "openparts/rng.hpp"
#include "openparts/tensor.hpp"

namespace openparts::math {

// Mass guard used by masked means and part pooling.
inline constexpr double kDelta = 1e-6;
// Ridge added to every covariance ahead of factorization.
inline constexpr double kRidge = 1e-4;
// Threshold below which a vector norm counts as degenerate.
inline constexpr double kNormEps = 1e-12;

double dot(const double* a, const double* b, int n);
double norm(const double* a, int n);

// tau * log(sum_i exp(v_i / tau)), evaluated with max subtraction.
double logsumexp(const double* v, int n, double tau);

// exp(v_i / tau) / sum_j exp(v_j / tau)
std::vector<double> softmax(const double* v, int n, double tau);
Tensor2 softmax_rows(const Tensor2& x, double tau);

// Column vector (rows x 1) of per-row logsumexp values.
Tensor2 logsumexp_rows(const Tensor2& x, double tau);

// Shannon entropy of softmax(v / tau).
double entropy_of_logits(const double* v, int n, double tau);

// Clamped to [-1, 1]. A zero-norm side yields 0 and sets *degenerate.
double cosine_sim(const double* a, const double* b, int n, bool* degenerate = nullptr);

// C[i][j] = cosine_sim(A row i, B row j)
Tensor2 cosine_pairwise(const Tensor2& a, const Tensor2& b);

// In-place row normalization to unit length; a near-zero row is replaced by
// e1 and counted in the returned tally.
int l2_normalize_rows(Tensor2& x);

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);  // a^T * b
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);  // a * b^T

// Lower-triangular L with L L^T = sigma + ridge * I. Throws NumericError
// naming the pivot (and `who`, when given) if the ridged matrix is not
// positive definite.
Tensor2 cholesky(const Tensor2& sigma, double ridge = kRidge, const char* who = nullptr);

// n rows of mu + L v, v standard normal.
Tensor2 sample_gaussian(RngState& rng, const std::vector<double>& mu, const Tensor2& l_factor,
                        int n);

// Dirichlet(1,...,1) over k components via normalized exponentials.
std::vector<double> sample_dirichlet(RngState& rng, int k);

// Standard Gumbel via -log(-log(u)) on u in (0,1).
double sample_gumbel(RngState& rng);

// Uniform direction on the unit sphere; redraws while the Gaussian vector
// norm is below kNormEps.
std::vector<double> sample_sphere(RngState& rng, int d);

// First index attaining the row maximum.
int argmax(const double* v, int n);

std::vector<double> batch_mean(const Tensor2& x);
// Unbiased covariance with divisor max(n - 1, 1).
Tensor2 batch_cov(const Tensor2& x, const std::vector<double>& mean);

bool all_finite(const Tensor2& x);

}  // namespace openparts::math
