#include "openparts/ood.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "openparts/math.hpp"

namespace openparts::ood {

namespace m = openparts::math;

ClassStats::ClassStats(int n_classes, int d, bool diag) : dim(d), diagonal(diag) {
    if (n_classes < 1 || d < 1) throw ParamError("ClassStats needs positive sizes");
    classes.resize(n_classes);
    for (auto& c : classes) {
        c.mu.assign(d, 0.0);
        c.cov = Tensor2(d, d);
    }
}

void ClassStats::ema_update(const Tensor2& z_batch, const std::vector<int>& labels,
                            double alpha_mean, double alpha_cov) {
    if (z_batch.rows != static_cast<int>(labels.size()))
        throw DimError("ema_update: label count does not match batch rows");
    if (z_batch.cols != dim) throw DimError("ema_update: embedding width mismatch");

    for (int y : labels)
        if (y < 0 || y >= static_cast<int>(classes.size()))
            throw ParamError("ema_update: unknown class id " + std::to_string(y));

    for (int y = 0; y < static_cast<int>(classes.size()); ++y) {
        int n_y = 0;
        for (int i = 0; i < z_batch.rows; ++i)
            if (labels[i] == y) ++n_y;
        if (n_y == 0) continue;

        Tensor2 sub(n_y, dim);
        int at = 0;
        for (int i = 0; i < z_batch.rows; ++i)
            if (labels[i] == y) {
                std::copy(z_batch.row(i), z_batch.row(i) + dim, sub.row(at));
                ++at;
            }
        auto mean = m::batch_mean(sub);
        Tensor2 cov = m::batch_cov(sub, mean);
        if (diagonal)
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j)
                    if (i != j) cov(i, j) = 0.0;

        PerClass& c = classes[y];
        if (!c.init) {
            c.mu = mean;
            c.cov = std::move(cov);
            c.init = true;
        } else {
            for (int i = 0; i < dim; ++i)
                c.mu[i] = alpha_mean * c.mu[i] + (1.0 - alpha_mean) * mean[i];
            for (size_t i = 0; i < c.cov.data.size(); ++i)
                c.cov.data[i] = alpha_cov * c.cov.data[i] + (1.0 - alpha_cov) * cov.data[i];
        }
        ++c.updates;
    }
}

int ClassStats::initialized_count() const {
    int n = 0;
    for (const auto& c : classes)
        if (c.init) ++n;
    return n;
}

std::vector<int> ClassStats::initialized_ids() const {
    std::vector<int> ids;
    for (int i = 0; i < static_cast<int>(classes.size()); ++i)
        if (classes[i].init) ids.push_back(i);
    return ids;
}

Tensor2 sample_tail(const ClassStats& stats, int class_id, double beta, int n, RngState& rng) {
    if (class_id < 0 || class_id >= static_cast<int>(stats.classes.size()))
        throw ParamError("sample_tail: unknown class id " + std::to_string(class_id));
    const auto& c = stats.classes[class_id];
    if (!c.init)
        throw ParamError("sample_tail: class " + std::to_string(class_id) + " not initialized");
    if (beta < 1.0) throw ParamError("sample_tail: beta must be >= 1");

    Tensor2 scaled = c.cov;
    for (auto& v : scaled.data) v *= beta;
    std::string who = "class " + std::to_string(class_id);
    Tensor2 l = m::cholesky(scaled, m::kRidge, who.c_str());
    return m::sample_gaussian(rng, c.mu, l, n);
}

Tensor2 sample_mix(const ClassStats& stats, int k, double sigma, int n, RngState& rng) {
    if (k < 1) throw ParamError("sample_mix: k must be >= 1");
    auto ids = stats.initialized_ids();
    if (static_cast<int>(ids.size()) < k)
        throw ParamError("sample_mix: needs at least k initialized classes");

    Tensor2 out(n, stats.dim);
    std::vector<int> pool;
    for (int s = 0; s < n; ++s) {
        pool = ids;
        // partial Fisher-Yates for k distinct classes
        for (int j = 0; j < k; ++j) {
            int pick = j + static_cast<int>(rng.below(pool.size() - j));
            std::swap(pool[j], pool[pick]);
        }
        auto w = m::sample_dirichlet(rng, k);
        double* row = out.row(s);
        for (int j = 0; j < k; ++j) {
            const auto& mu = stats.classes[pool[j]].mu;
            for (int c = 0; c < stats.dim; ++c) row[c] += w[j] * mu[c];
        }
        if (sigma > 0.0)
            for (int c = 0; c < stats.dim; ++c) row[c] += sigma * rng.normal();
    }
    return out;
}

Tensor2 sample_sphere(int d, int n, RngState& rng) {
    Tensor2 out(n, d);
    for (int i = 0; i < n; ++i) {
        auto v = m::sample_sphere(rng, d);
        std::copy(v.begin(), v.end(), out.row(i));
    }
    return out;
}

OODBatch propose_ood(const ClassStats& stats, const ProposalConfig& cfg, RngState& rng) {
    if (cfg.n_total < 1) throw ParamError("propose_ood: n_total must be >= 1");
    if (cfg.split.size() != 3) throw ParamError("propose_ood: split needs 3 weights");
    double wsum = cfg.split[0] + cfg.split[1] + cfg.split[2];
    if (wsum <= 0.0) throw ParamError("propose_ood: split weights must not all be zero");

    int counts[3];
    for (int i = 0; i < 3; ++i)
        counts[i] = static_cast<int>(std::floor(cfg.split[i] / wsum * cfg.n_total));
    counts[0] += cfg.n_total - counts[0] - counts[1] - counts[2];

    auto ids = stats.initialized_ids();
    if (counts[0] > 0 && ids.empty())
        throw ParamError("propose_ood: tail sampling needs an initialized class");
    if (counts[1] > 0 && static_cast<int>(ids.size()) < cfg.k)
        throw ParamError("propose_ood: mix sampling needs at least k initialized classes");

    OODBatch out;
    out.z = Tensor2(cfg.n_total, stats.dim);
    out.tag.reserve(cfg.n_total);
    int at = 0;

    for (int s = 0; s < counts[0]; ++s) {
        int cls = ids[s % ids.size()];
        Tensor2 one = sample_tail(stats, cls, cfg.beta, 1, rng);
        std::copy(one.row(0), one.row(0) + stats.dim, out.z.row(at++));
        out.tag.push_back(0);
    }
    if (counts[1] > 0) {
        Tensor2 mixed = sample_mix(stats, cfg.k, cfg.sigma, counts[1], rng);
        for (int s = 0; s < counts[1]; ++s) {
            std::copy(mixed.row(s), mixed.row(s) + stats.dim, out.z.row(at++));
            out.tag.push_back(1);
        }
    }
    if (counts[2] > 0) {
        Tensor2 sph = sample_sphere(stats.dim, counts[2], rng);
        for (int s = 0; s < counts[2]; ++s) {
            std::copy(sph.row(s), sph.row(s) + stats.dim, out.z.row(at++));
            out.tag.push_back(2);
        }
    }
    return out;
}

double CosineClassifier::gamma() const { return std::exp(log_gamma); }

CosineClassifier CosineClassifier::init(int k, int dz, double gamma0, RngState& rng) {
    if (k < 1 || dz < 1) throw ParamError("classifier needs positive sizes");
    if (gamma0 <= 0.0) throw ParamError("classifier scale must be positive");
    CosineClassifier clf;
    clf.w = Tensor2(k, dz);
    for (auto& v : clf.w.data) v = rng.normal();
    m::l2_normalize_rows(clf.w);
    clf.log_gamma = std::log(gamma0);
    return clf;
}

Tensor2 logits(const CosineClassifier& clf, const Tensor2& z, int* degenerate) {
    if (z.cols != clf.w.cols) throw DimError("logits: embedding width mismatch");
    if (degenerate) {
        for (int i = 0; i < z.rows; ++i)
            if (m::norm(z.row(i), z.cols) < m::kNormEps) ++*degenerate;
    }
    Tensor2 out = m::cosine_pairwise(z, clf.w);
    double g = clf.gamma();
    for (auto& v : out.data) v *= g;
    return out;
}

double energy(const double* logit_row, int k, double tau) {
    return -m::logsumexp(logit_row, k, tau);
}

std::vector<double> energies(const Tensor2& logit_rows, double tau) {
    std::vector<double> out(logit_rows.rows);
    for (int i = 0; i < logit_rows.rows; ++i)
        out[i] = energy(logit_rows.row(i), logit_rows.cols, tau);
    return out;
}

double loss_oe(const std::vector<double>& e, double margin) {
    if (e.empty()) throw ParamError("loss_oe over empty batch");
    double s = 0.0;
    for (double v : e) s += std::max(0.0, margin - v);
    return s / e.size();
}

double loss_ent(const Tensor2& logit_rows, double tau) {
    if (logit_rows.rows == 0) throw ParamError("loss_ent over empty batch");
    double s = 0.0;
    for (int i = 0; i < logit_rows.rows; ++i)
        s += m::entropy_of_logits(logit_rows.row(i), logit_rows.cols, tau);
    return s / logit_rows.rows;
}

double loss_ufa(double oe, double ent, double lambda_oe, double lambda_ent) {
    return lambda_oe * oe - lambda_ent * ent;
}

}  // namespace openparts::ood
