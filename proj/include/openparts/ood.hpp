#pragma once

#include <vector>

#include "openparts/rng.hpp"
#include "openparts/tensor.hpp"

namespace openparts::ood {

// Running per-class Gaussian statistics over embeddings, maintained with
// exponential moving averages. The first batch that touches a class adopts
// the batch statistics outright.
struct ClassStats {
    struct PerClass {
        bool init = false;
        std::vector<double> mu;
        Tensor2 cov;
        uint64_t updates = 0;
    };

    int dim = 0;
    bool diagonal = false;
    std::vector<PerClass> classes;

    ClassStats() = default;
    ClassStats(int n_classes, int d, bool diag = false);

    // Batch covariance uses divisor max(n_y - 1, 1). Labels outside
    // [0, classes) raise ParamError.
    void ema_update(const Tensor2& z_batch, const std::vector<int>& labels, double alpha_mean,
                    double alpha_cov);

    int initialized_count() const;
    std::vector<int> initialized_ids() const;
};

// N(mu_y, beta * cov_y + ridge I) via Cholesky. Requires an initialized
// class and beta >= 1.
Tensor2 sample_tail(const ClassStats& stats, int class_id, double beta, int n, RngState& rng);

// Convex mixtures of k distinct initialized class means (Dirichlet(1)
// weights) plus isotropic jitter of scale sigma.
Tensor2 sample_mix(const ClassStats& stats, int k, double sigma, int n, RngState& rng);

// Uniform directions on the unit sphere.
Tensor2 sample_sphere(int d, int n, RngState& rng);

struct OODBatch {
    Tensor2 z;
    std::vector<int> tag;  // 0 tail, 1 mix, 2 sphere
};

struct ProposalConfig {
    int n_total = 64;
    std::vector<double> split = {1.0, 1.0, 1.0};  // tail, mix, sphere weights
    double beta = 2.0;
    int k = 2;
    double sigma = 0.1;
};

// Allocates floor(w_i / sum(w) * n_total) per sampler, remainder to tail.
// Tail draws cycle over initialized classes in id order.
OODBatch propose_ood(const ClassStats& stats, const ProposalConfig& cfg, RngState& rng);

// Cosine classifier with a log-parameterized positive scale.
struct CosineClassifier {
    Tensor2 w;  // K x Dz
    double log_gamma = 0.0;

    int num_classes() const { return w.rows; }
    double gamma() const;

    static CosineClassifier init(int k, int dz, double gamma0, RngState& rng);
};

// gamma * cos(w_y, z) per row; a degenerate (near-zero) embedding row gives
// all-zero logits and bumps *degenerate.
Tensor2 logits(const CosineClassifier& clf, const Tensor2& z, int* degenerate = nullptr);

// E(z) = -tau * log sum_y exp(g_y / tau)
double energy(const double* logit_row, int k, double tau);
std::vector<double> energies(const Tensor2& logit_rows, double tau);

// mean over rows of max(0, margin - E)
double loss_oe(const std::vector<double>& e, double margin);
// mean Shannon entropy of softmax(logits / tau)
double loss_ent(const Tensor2& logit_rows, double tau);
// lambda_oe * L_OE - lambda_ent * L_ENT
double loss_ufa(double oe, double ent, double lambda_oe, double lambda_ent);

}  // namespace openparts::ood
