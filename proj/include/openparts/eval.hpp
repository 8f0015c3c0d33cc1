#pragma once

#include <vector>

#include "openparts/rng.hpp"
#include "openparts/tensor.hpp"

namespace openparts::eval {

struct KMeansResult {
    std::vector<int> labels;
    Tensor2 centroids;
    double inertia = 0.0;
    // inertia after each Lloyd iteration of the winning restart
    std::vector<double> inertia_trace;
};

// Squared-distance seeding, Lloyd iterations, best of `restarts` runs by
// final inertia. An emptied cluster is re-seeded at the point farthest from
// the centroid of the largest cluster, which keeps the trace non-increasing.
KMeansResult kmeans(const Tensor2& x, int k, int restarts, int max_iter, RngState& rng);

// Minimum-cost perfect matching on a square cost matrix; returns the column
// assigned to each row.
std::vector<int> hungarian(const Tensor2& cost);

struct MatchedAccuracy {
    double all = 0.0;
    double old_classes = 0.0;
    double new_classes = 0.0;
    int n_old = 0;  // sample counts under the truth split
    int n_new = 0;
    std::vector<int> mapping;  // cluster id -> class id; padded ids map past the truth range
};

// One global cluster-to-class matching (maximum agreement); the same
// matching scores the full set and the old / new truth splits. Classes
// below `n_old_classes` count as old.
MatchedAccuracy matched_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int n_old_classes);

// Probability a positive scores above a negative, ties at half weight.
// Computed from average ranks.
double auroc(const std::vector<double>& positives, const std::vector<double>& negatives);

struct KEstimate {
    int k = 0;
    double best_score = 0.0;
    std::vector<double> scores;  // one per scanned k, k_min first
};

// Mean-silhouette scan over [k_min, k_max] with a cached distance matrix.
// Degenerate inputs (too few points, or all points coincident) fall back to
// k_min with an empty scan.
KEstimate estimate_k(const Tensor2& x, int k_min, int k_max, int restarts, int max_iter,
                     RngState& rng);

// Scan variant scored by matched accuracy on the rows whose label is >= 0.
KEstimate estimate_k_labeled(const Tensor2& x, const std::vector<int>& labels_or_negative,
                             int n_old_classes, int k_min, int k_max, int restarts,
                             int max_iter, RngState& rng);

// Mean silhouette for a fixed labeling given pairwise distances. Singleton
// clusters contribute zero.
double silhouette_from_dist(const Tensor2& dist, const std::vector<int>& labels, int k);

Tensor2 pairwise_distances(const Tensor2& x);

struct MarginStats {
    double delta_inter = 0.0;  // smallest centroid-to-centroid distance
    double sigma_intra = 0.0;  // mean squared distance to the own centroid
    int n_classes_used = 0;    // classes with at least one sample
};

MarginStats margin_stats(const Tensor2& x, const std::vector<int>& labels);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// Per-row Shannon entropy of softmax(logits / tau).
std::vector<double> entropy_scores(const Tensor2& logits, double tau);

}  // namespace openparts::eval
