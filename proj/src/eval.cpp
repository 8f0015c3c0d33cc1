#include "openparts/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "openparts/error.hpp"
#include "openparts/math.hpp"

namespace openparts::eval {

namespace {

double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

int nearest_centroid(const double* p, const Tensor2& c, int d) {
    int best = 0;
    double best_d = sq_dist(p, c.row(0), d);
    for (int j = 1; j < c.rows; ++j) {
        double dj = sq_dist(p, c.row(j), d);
        if (dj < best_d) {
            best_d = dj;
            best = j;
        }
    }
    return best;
}

Tensor2 seed_centroids(const Tensor2& x, int k, RngState& rng) {
    int n = x.rows, d = x.cols;
    Tensor2 c(k, d);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());

    int first = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    std::copy(x.row(first), x.row(first) + d, c.row(0));

    for (int j = 1; j < k; ++j) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(x.row(i), c.row(j - 1), d));
            total += d2[i];
        }
        int pick;
        if (total > 0.0) {
            double r = rng.uniform01() * total;
            double acc = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
        }
        std::copy(x.row(pick), x.row(pick) + d, c.row(j));
    }
    return c;
}

struct LloydRun {
    std::vector<int> labels;
    Tensor2 centroids;
    double inertia = 0.0;
    std::vector<double> trace;
};

LloydRun lloyd(const Tensor2& x, Tensor2 c, int max_iter) {
    int n = x.rows, d = x.cols, k = c.rows;
    std::vector<int> labels(n, -1), prev(n, -2);
    std::vector<int> counts(k, 0);
    LloydRun run;

    for (int iter = 0; iter < max_iter; ++iter) {
        for (int i = 0; i < n; ++i) labels[i] = nearest_centroid(x.row(i), c, d);

        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) ++counts[labels[i]];

        // re-seed empty clusters from the largest one
        for (int e = 0; e < k; ++e) {
            if (counts[e] > 0) continue;
            int big = static_cast<int>(std::max_element(counts.begin(), counts.end()) -
                                       counts.begin());
            if (counts[big] < 2) break;
            int far = -1;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                if (labels[i] != big) continue;
                double di = sq_dist(x.row(i), c.row(big), d);
                if (di > far_d) {
                    far_d = di;
                    far = i;
                }
            }
            std::copy(x.row(far), x.row(far) + d, c.row(e));
            labels[far] = e;
            --counts[big];
            ++counts[e];
        }

        for (int j = 0; j < k; ++j) {
            if (counts[j] == 0) continue;
            std::fill(c.row(j), c.row(j) + d, 0.0);
        }
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < d; ++t) c(labels[i], t) += x(i, t);
        for (int j = 0; j < k; ++j)
            if (counts[j] > 0)
                for (int t = 0; t < d; ++t) c(j, t) /= counts[j];

        double inertia = 0.0;
        for (int i = 0; i < n; ++i) inertia += sq_dist(x.row(i), c.row(labels[i]), d);
        run.trace.push_back(inertia);

        if (labels == prev) break;
        prev = labels;
    }

    run.labels = std::move(labels);
    run.centroids = std::move(c);
    run.inertia = run.trace.empty() ? 0.0 : run.trace.back();
    return run;
}

}  // namespace

KMeansResult kmeans(const Tensor2& x, int k, int restarts, int max_iter, RngState& rng) {
    if (x.rows < 1) throw ParamError("kmeans: empty input");
    if (k < 1) throw ParamError("kmeans: k must be >= 1");
    if (k > x.rows) throw ParamError("kmeans: k exceeds the sample count");
    if (restarts < 1) throw ParamError("kmeans: restarts must be >= 1");

    KMeansResult best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        LloydRun run = lloyd(x, seed_centroids(x, k, rng), max_iter);
        if (!have || run.inertia < best.inertia) {
            have = true;
            best.labels = std::move(run.labels);
            best.centroids = std::move(run.centroids);
            best.inertia = run.inertia;
            best.inertia_trace = std::move(run.trace);
        }
    }
    return best;
}

std::vector<int> hungarian(const Tensor2& cost) {
    int n = cost.rows;
    if (cost.cols != n) throw DimError("hungarian: cost matrix must be square");
    if (n == 0) return {};

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);

    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

MatchedAccuracy matched_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int n_old_classes) {
    if (pred.size() != truth.size()) throw DimError("matched_accuracy: length mismatch");
    if (pred.empty()) throw ParamError("matched_accuracy: empty input");

    int kp = 0, kt = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || truth[i] < 0) throw ParamError("matched_accuracy: negative id");
        kp = std::max(kp, pred[i] + 1);
        kt = std::max(kt, truth[i] + 1);
    }
    int n = std::max(kp, kt);

    Tensor2 w(n, n);
    for (size_t i = 0; i < pred.size(); ++i) w(pred[i], truth[i]) += 1.0;

    double wmax = 0.0;
    for (double v : w.data) wmax = std::max(wmax, v);
    Tensor2 cost(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cost(i, j) = wmax - w(i, j);

    MatchedAccuracy out;
    out.mapping = hungarian(cost);

    int hit_all = 0, hit_old = 0, hit_new = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        bool hit = out.mapping[pred[i]] == truth[i];
        hit_all += hit;
        if (truth[i] < n_old_classes) {
            ++out.n_old;
            hit_old += hit;
        } else {
            ++out.n_new;
            hit_new += hit;
        }
    }
    out.all = static_cast<double>(hit_all) / static_cast<double>(pred.size());
    out.old_classes = out.n_old > 0 ? static_cast<double>(hit_old) / out.n_old : 0.0;
    out.new_classes = out.n_new > 0 ? static_cast<double>(hit_new) / out.n_new : 0.0;
    return out;
}

double auroc(const std::vector<double>& positives, const std::vector<double>& negatives) {
    if (positives.empty() || negatives.empty())
        throw ParamError("auroc: both score sets must be non-empty");

    size_t np = positives.size(), nn = negatives.size();
    struct Item {
        double s;
        bool pos;
    };
    std::vector<Item> items;
    items.reserve(np + nn);
    for (double s : positives) items.push_back({s, true});
    for (double s : negatives) items.push_back({s, false});
    std::stable_sort(items.begin(), items.end(),
                     [](const Item& a, const Item& b) { return a.s < b.s; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < items.size()) {
        size_t j = i;
        while (j < items.size() && items[j].s == items[i].s) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (size_t t = i; t < j; ++t)
            if (items[t].pos) rank_sum_pos += avg_rank;
        i = j;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(np) * static_cast<double>(np + 1);
    return u / (static_cast<double>(np) * static_cast<double>(nn));
}

Tensor2 pairwise_distances(const Tensor2& x) {
    Tensor2 d(x.rows, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = i + 1; j < x.rows; ++j) {
            double v = std::sqrt(sq_dist(x.row(i), x.row(j), x.cols));
            d(i, j) = v;
            d(j, i) = v;
        }
    return d;
}

double silhouette_from_dist(const Tensor2& dist, const std::vector<int>& labels, int k) {
    int n = dist.rows;
    if (static_cast<int>(labels.size()) != n) throw DimError("silhouette: label count mismatch");

    std::vector<int> counts(k, 0);
    for (int l : labels) {
        if (l < 0 || l >= k) throw ParamError("silhouette: label out of range");
        ++counts[l];
    }

    double total = 0.0;
    std::vector<double> sums(k);
    for (int i = 0; i < n; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        for (int j = 0; j < n; ++j)
            if (j != i) sums[labels[j]] += dist(i, j);

        int own = labels[i];
        if (counts[own] <= 1) continue;  // singleton: contributes 0

        double a = sums[own] / (counts[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == own || counts[c] == 0) continue;
            b = std::min(b, sums[c] / counts[c]);
        }
        if (!std::isfinite(b)) continue;  // only one non-empty cluster
        double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / n;
}

KEstimate estimate_k(const Tensor2& x, int k_min, int k_max, int restarts, int max_iter,
                     RngState& rng) {
    if (k_min < 2) throw ParamError("estimate_k: k_min must be >= 2");
    if (k_max < k_min) throw ParamError("estimate_k: k_max must be >= k_min");

    KEstimate out;
    out.k = k_min;

    int hi = std::min(k_max, x.rows - 1);
    if (x.rows < 3 || hi < k_min) return out;

    Tensor2 dist = pairwise_distances(x);
    double spread = 0.0;
    for (double v : dist.data) spread = std::max(spread, v);
    if (spread < 1e-12) return out;

    bool have = false;
    for (int k = k_min; k <= hi; ++k) {
        KMeansResult km = kmeans(x, k, restarts, max_iter, rng);
        double s = silhouette_from_dist(dist, km.labels, k);
        out.scores.push_back(s);
        if (!have || s > out.best_score) {
            have = true;
            out.best_score = s;
            out.k = k;
        }
    }
    return out;
}

KEstimate estimate_k_labeled(const Tensor2& x, const std::vector<int>& labels_or_negative,
                             int n_old_classes, int k_min, int k_max, int restarts,
                             int max_iter, RngState& rng) {
    if (static_cast<int>(labels_or_negative.size()) != x.rows)
        throw DimError("estimate_k_labeled: label count mismatch");
    if (k_min < 2) throw ParamError("estimate_k: k_min must be >= 2");
    if (k_max < k_min) throw ParamError("estimate_k: k_max must be >= k_min");

    std::vector<size_t> labeled;
    for (size_t i = 0; i < labels_or_negative.size(); ++i)
        if (labels_or_negative[i] >= 0) labeled.push_back(i);
    if (labeled.empty()) throw ParamError("estimate_k_labeled: no labeled rows");

    KEstimate out;
    out.k = k_min;
    int hi = std::min(k_max, x.rows);
    bool have = false;
    for (int k = k_min; k <= hi; ++k) {
        KMeansResult km = kmeans(x, k, restarts, max_iter, rng);
        std::vector<int> pred, truth;
        for (size_t i : labeled) {
            pred.push_back(km.labels[i]);
            truth.push_back(labels_or_negative[i]);
        }
        double s = matched_accuracy(pred, truth, n_old_classes).all;
        out.scores.push_back(s);
        if (!have || s > out.best_score) {
            have = true;
            out.best_score = s;
            out.k = k;
        }
    }
    return out;
}

MarginStats margin_stats(const Tensor2& x, const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != x.rows) throw DimError("margin_stats: label mismatch");
    if (x.rows == 0) throw ParamError("margin_stats: empty input");

    int k = 0;
    for (int l : labels) {
        if (l < 0) throw ParamError("margin_stats: negative label");
        k = std::max(k, l + 1);
    }

    Tensor2 cent(k, x.cols);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < x.rows; ++i) {
        ++counts[labels[i]];
        for (int c = 0; c < x.cols; ++c) cent(labels[i], c) += x(i, c);
    }
    std::vector<int> used;
    for (int j = 0; j < k; ++j) {
        if (counts[j] == 0) continue;
        for (int c = 0; c < x.cols; ++c) cent(j, c) /= counts[j];
        used.push_back(j);
    }

    MarginStats out;
    out.n_classes_used = static_cast<int>(used.size());

    double min_d = std::numeric_limits<double>::infinity();
    for (size_t a = 0; a < used.size(); ++a)
        for (size_t b = a + 1; b < used.size(); ++b)
            min_d = std::min(min_d, std::sqrt(sq_dist(cent.row(used[a]), cent.row(used[b]),
                                                      x.cols)));
    out.delta_inter = used.size() >= 2 ? min_d : 0.0;

    double acc = 0.0;
    for (int i = 0; i < x.rows; ++i) acc += sq_dist(x.row(i), cent.row(labels[i]), x.cols);
    out.sigma_intra = acc / x.rows;
    return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw DimError("adjusted_rand_index: length mismatch");
    if (a.empty()) throw ParamError("adjusted_rand_index: empty input");

    int ka = 0, kb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0 || b[i] < 0) throw ParamError("adjusted_rand_index: negative label");
        ka = std::max(ka, a[i] + 1);
        kb = std::max(kb, b[i] + 1);
    }

    Tensor2 m(ka, kb);
    for (size_t i = 0; i < a.size(); ++i) m(a[i], b[i]) += 1.0;

    auto choose2 = [](double v) { return v * (v - 1.0) / 2.0; };

    double sum_ij = 0.0;
    for (double v : m.data) sum_ij += choose2(v);
    double sum_a = 0.0;
    for (int i = 0; i < ka; ++i) {
        double row = 0.0;
        for (int j = 0; j < kb; ++j) row += m(i, j);
        sum_a += choose2(row);
    }
    double sum_b = 0.0;
    for (int j = 0; j < kb; ++j) {
        double col = 0.0;
        for (int i = 0; i < ka; ++i) col += m(i, j);
        sum_b += choose2(col);
    }
    double total = choose2(static_cast<double>(a.size()));
    double expected = sum_a * sum_b / total;
    double max_index = 0.5 * (sum_a + sum_b);
    double denom = max_index - expected;
    if (denom == 0.0) return 1.0;  // both partitions trivial and identical in structure
    return (sum_ij - expected) / denom;
}

std::vector<double> entropy_scores(const Tensor2& logits, double tau) {
    std::vector<double> out(logits.rows);
    for (int i = 0; i < logits.rows; ++i)
        out[i] = math::entropy_of_logits(logits.row(i), logits.cols, tau);
    return out;
}

}  // namespace openparts::eval
