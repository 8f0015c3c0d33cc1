#pragma once

#include <vector>

#include "openparts/math.hpp"
#include "openparts/rng.hpp"
#include "openparts/tensor.hpp"

namespace openparts::routing {

// One frozen-backbone sample: patch features, a global token, and per-head
// attention rows from the global token over patches.
struct PatchFeatureSet {
    Tensor2 f_patch;             // N x D
    std::vector<double> f_cls;   // D
    Tensor2 a_cls;               // H x N, nonnegative, rows sum to 1

    void validate_ingest();  // rejects negatives, renormalizes attention rows
};

// Per-head masked mean over the top-ceil(rho * N) patches by attention mass,
// ties toward the lower patch index. Returns H x D.
Tensor2 attention_priors(const PatchFeatureSet& pfs, double rho);

// Multi-head cross attention, one projection set per head.
struct CrossAttention {
    std::vector<Tensor2> wq;  // D x dh
    std::vector<Tensor2> wk;  // D x dh
    std::vector<Tensor2> wv;  // D x dh
    std::vector<Tensor2> wo;  // dh x D

    int heads() const { return static_cast<int>(wq.size()); }
    int head_dim() const { return wq.empty() ? 0 : wq[0].cols; }
};

// queries + MHA(queries, f_prior, f_prior); scores scaled by 1/sqrt(dh).
Tensor2 condition_queries(const Tensor2& queries, const Tensor2& f_prior,
                          const CrossAttention& attn);

enum class NoiseMode { Stochastic, Deterministic };

struct Assignment {
    Tensor2 s;       // N x T cosine scores
    Tensor2 h_soft;  // N x T rows on the simplex
    Tensor2 h_hard;  // N x T one-hot rows
};

// S from patch/query cosines; soft rows softmax((S + g) / tau) with g Gumbel
// noise in Stochastic mode and zero otherwise; hard rows one-hot at the soft
// argmax (ties toward the lower part index).
Assignment assign_patches(const Tensor2& f_patch, const Tensor2& q_cond, double tau,
                          NoiseMode mode, RngState& rng);

struct PartPooling {
    Tensor2 p;                   // T x D mass-normalized part vectors
    std::vector<double> mass;    // T column sums of h
    std::vector<double> f_part;  // D, mean over the T part vectors
};

// p_t = sum_n h[n][t] f_patch[n] / (mass_t + delta); a part with no mass
// pools to the zero vector.
PartPooling aggregate_parts(const Tensor2& f_patch, const Tensor2& h);

struct FusionHead {
    Tensor2 w1;              // D x hidden
    std::vector<double> b1;  // hidden
    Tensor2 w2;              // hidden x Dz
    std::vector<double> b2;  // Dz
};

// L2-normalized h(f_cls) + h(f_part) with shared weights. A zero fused
// vector maps to e1 and sets *degenerate.
std::vector<double> fuse(const std::vector<double>& f_cls, const std::vector<double>& f_part,
                         const FusionHead& head, bool* degenerate = nullptr);

struct RoutingParams {
    Tensor2 queries;  // T x D
    CrossAttention attn;
    FusionHead fusion;
};

struct ForwardOut {
    Tensor2 f_prior;
    Tensor2 q_cond;
    Assignment assign;
    PartPooling pool;
    std::vector<double> z;
    bool degenerate_fuse = false;
};

// The full per-sample pipeline. `hard` selects which allocation feeds the
// pooling stage; inference uses hard rows.
ForwardOut forward(const PatchFeatureSet& pfs, const RoutingParams& params, double rho,
                   double tau, NoiseMode mode, RngState& rng, bool hard = true);

// Entropy of the pooled patch-to-part allocation histogram.
double parts_usage_entropy(const std::vector<Tensor2>& h_hard_batch);
// Same pooling applied to soft allocation mass.
double soft_usage_entropy(const std::vector<Tensor2>& h_soft_batch);

// Mean over rows of KL(a_row || b_row), both sides floored at 1e-12.
double attention_kl(const Tensor2& a, const Tensor2& b);

// Spherical assignment fit: seeds t_parts centroids (greedy, cosine
// distance), alternates argmax-cosine assignment and normalized mean
// updates. Returns the final per-patch part ids.
std::vector<int> fit_routing(const Tensor2& f_patch, int t_parts, int iters, RngState& rng);

}  // namespace openparts::routing
