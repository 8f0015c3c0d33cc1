#pragma once

#include <string>
#include <vector>

#include "openparts/autodiff.hpp"
#include "openparts/config.hpp"
#include "openparts/ood.hpp"
#include "openparts/routing.hpp"

namespace openparts::train {

// Every trainable tensor, in a fixed order. Biases are stored as 1xN rows.
struct Parameters {
    std::vector<std::string> names;
    std::vector<Tensor2> tensors;

    int feat_dim = 0;
    int n_classes = 0;

    static Parameters init(int feat_dim, int n_classes, const RunConfig& cfg, RngState& rng);

    Tensor2& at(const std::string& name);
    const Tensor2& at(const std::string& name) const;

    routing::RoutingParams routing_view() const;
    ood::CosineClassifier classifier_view() const;

    size_t scalar_count() const;
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
};

struct LossReport {
    double infonce = 0.0;
    double supcon = 0.0;
    double ce = 0.0;
    double oe = 0.0;
    double ent = 0.0;
    double ufa = 0.0;
    double total = 0.0;
};

enum class RoutingMode {
    HardST,  // pool one-hot rows, gradient through the soft allocation
    Soft     // pool the soft rows themselves; fully differentiable
};

// Everything a single loss evaluation reads. Outlier rows and prototypes
// enter the graph as constants.
struct StepBatch {
    std::vector<routing::PatchFeatureSet> view1;
    std::vector<routing::PatchFeatureSet> view2;
    std::vector<int> labels;
    Tensor2 prototypes;  // n_classes x Dz
    Tensor2 ood;         // M x Dz, M may be 0
};

// Tape handles for the parameter leaves, in Parameters order.
struct Leaves {
    std::vector<ad::Var> vars;
};

struct EmbedVars {
    Leaves leaves;
    ad::Var z1;  // B x Dz
    ad::Var z2;  // B x Dz
};

// Lifts parameters onto the tape and embeds both views. Stochastic mode
// draws Gumbel noise from `rng` (one matrix per sample per view).
EmbedVars build_embeddings(ad::Tape& tape, const Parameters& p, const StepBatch& batch,
                           const RunConfig& cfg, double tau_now, RoutingMode rmode,
                           routing::NoiseMode nmode, RngState& rng);

struct LossVars {
    ad::Var total;
    LossReport report;
};

// InfoNCE over both views (anchor excluded from its own denominator),
// prototype SupCon and cosine CE over the stacked views, hinge energy and
// entropy terms over the outlier rows.
LossVars build_losses(ad::Tape& tape, const EmbedVars& ev, const StepBatch& batch,
                      const RunConfig& cfg);

// One-call evaluation; returns the report and, when grads != nullptr, the
// gradient of the total for every parameter tensor in Parameters order.
LossReport eval_loss(const Parameters& p, const StepBatch& batch, const RunConfig& cfg,
                     RoutingMode rmode, routing::NoiseMode nmode, RngState rng,
                     std::vector<Tensor2>* grads = nullptr);

// Plain (tape-free) embeddings with deterministic hard routing.
Tensor2 embed_all(const std::vector<routing::PatchFeatureSet>& sets, const Parameters& p,
                  const RunConfig& cfg);

struct Optimizer {
    std::vector<Tensor2> velocity;
    double lr0 = 0.3;
    double momentum = 0.9;
    double weight_decay = 5e-5;
    int epochs_total = 1;

    static Optimizer init(const Parameters& p, const RunConfig& cfg);
    // Half-cosine decay: lr0 at epoch 0, zero at epochs_total.
    double lr_at(int epoch) const;
    // v <- momentum v + g + wd p ; p <- p - lr v. Decay skips biases and the
    // classifier scale.
    void step(Parameters& p, const std::vector<Tensor2>& grads, int epoch);
};

struct TrainExample {
    routing::PatchFeatureSet pfs;
    int label = 0;
};

struct StepRecord {
    int epoch = 0;
    int step = 0;
    LossReport report;
};

struct FitResult {
    Parameters params;
    ood::ClassStats stats;
    std::vector<StepRecord> history;
    Tensor2 prototypes;  // from the final epoch
};

// Full training loop: per epoch, recompute class-mean prototypes from the
// previous parameters, then per batch embed both views, update EMA stats,
// synthesize outliers, assemble the objective, and take one SGD step.
// A non-finite loss aborts with NumericError naming epoch and step.
FitResult fit(const std::vector<TrainExample>& data, const RunConfig& cfg);

// view1 is the input itself; view2 adds Gaussian jitter and feature dropout.
routing::PatchFeatureSet make_second_view(const routing::PatchFeatureSet& pfs,
                                          const RunConfig& cfg, RngState& rng);

std::string history_csv(const std::vector<StepRecord>& history);

struct GradCheck {
    double max_rel_err = 0.0;
    size_t n_params = 0;
};

// Central differences (step 1e-5) against the tape gradients on a tiny
// model with soft routing. Relative error uses a 1e-4 floor so that
// exactly-zero gradients compare in absolute terms.
GradCheck gradcheck(uint64_t seed);

}  // namespace openparts::train
