#pragma once

#include <string>
#include <vector>

#include "openparts/bench.hpp"
#include "openparts/config.hpp"
#include "openparts/eval.hpp"
#include "openparts/ood.hpp"
#include "openparts/tensor.hpp"
#include "openparts/train.hpp"

namespace openparts::protocol {

struct ClusterReport {
    double acc_all = 0.0;
    double acc_old = 0.0;
    double acc_new = 0.0;
    double auroc_entropy = 0.0;  // novel-vs-seen separation by prediction entropy
    double auroc_energy = 0.0;   // same split scored by energy
    int k_used = 0;
    int k_estimated = -1;        // -1 when the scan was skipped
    double inertia = 0.0;
};

// Clusters embedded target rows with one centroid per true class, scores a
// single global cluster-to-class matching, and ranks novel against seen
// rows with entropy and energy scores. The optional K scan runs on a seeded
// subsample (eval_k_subsample rows) over [eval_kmin, eval_kmax].
ClusterReport evaluate_target(const Tensor2& z, const std::vector<int>& y, int n_old,
                              const ood::CosineClassifier& clf, const RunConfig& cfg,
                              bool with_k_estimate, RngState& rng);

std::string cluster_report_json(const ClusterReport& r);

struct CalibReport {
    double auroc_entropy = 0.0;
    double auroc_energy = 0.0;
    std::vector<double> edges;  // bins + 1 entropy bin edges, 0 .. ln(K)
    std::vector<int> seen;      // per-bin counts, truth below n_old
    std::vector<int> novel;     // per-bin counts, truth at or above n_old
};

CalibReport calibration(const Tensor2& z, const std::vector<int>& y, int n_old,
                        const ood::CosineClassifier& clf, const RunConfig& cfg, int bins);

// bin_lo,bin_hi,seen,novel rows
std::string calib_hist_csv(const CalibReport& r);
std::string calib_report_json(const CalibReport& r);

// sample,patch,part rows
std::string assignments_csv(const std::vector<std::vector<int>>& part_ids);

}  // namespace openparts::protocol

namespace openparts::artifacts {

// A generated benchmark task: raw source/target embeddings plus the
// synthesized patch sets that the training and evaluation stages consume.
struct SynthTask {
    Tensor2 means;
    bench::Dataset source;
    bench::Dataset target;
    std::vector<bench::SynthesizedSample> source_samples;
    std::vector<bench::SynthesizedSample> target_samples;
};

SynthTask build_task(const RunConfig& cfg, RngState& rng);

void write_task(const std::string& path, const SynthTask& task);
// Labels, means, and latent part ids are optional in the file; a plain
// feature export (patches + attention + global token) also loads.
SynthTask read_task(const std::string& path);

struct Model {
    train::Parameters params;
    ood::ClassStats stats;
    Tensor2 prototypes;
};

void write_model(const std::string& path, const Model& m);
Model read_model(const std::string& path);

std::vector<train::TrainExample> task_examples(const SynthTask& task);

}  // namespace openparts::artifacts
