#include "openparts/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace openparts::routing {

namespace m = openparts::math;

void PatchFeatureSet::validate_ingest() {
    if (f_patch.rows < 1 || f_patch.cols < 1) throw ParamError("patch set is empty");
    if (static_cast<int>(f_cls.size()) != f_patch.cols)
        throw DimError("global token width does not match patch width");
    if (a_cls.cols != f_patch.rows)
        throw DimError("attention row length does not match patch count");
    auto finite = [](const double* v, size_t n) {
        for (size_t i = 0; i < n; ++i)
            if (!std::isfinite(v[i])) return false;
        return true;
    };
    if (!finite(f_patch.data.data(), f_patch.data.size()) ||
        !finite(f_cls.data(), f_cls.size()) || !finite(a_cls.data.data(), a_cls.data.size()))
        throw NumericError("non-finite value in ingested features");
    for (int h = 0; h < a_cls.rows; ++h) {
        double s = 0.0;
        for (int n = 0; n < a_cls.cols; ++n) {
            if (a_cls(h, n) < 0.0) throw ParamError("negative attention mass");
            s += a_cls(h, n);
        }
        if (s <= 0.0) throw ParamError("attention row has zero total mass");
        for (int n = 0; n < a_cls.cols; ++n) a_cls(h, n) /= s;
    }
}

Tensor2 attention_priors(const PatchFeatureSet& pfs, double rho) {
    if (rho <= 0.0 || rho > 1.0) throw ParamError("rho must lie in (0, 1]");
    int n = pfs.f_patch.rows;
    int d = pfs.f_patch.cols;
    int h = pfs.a_cls.rows;
    int k = static_cast<int>(std::ceil(rho * n));

    Tensor2 prior(h, d);
    std::vector<int> order(n);
    for (int head = 0; head < h; ++head) {
        std::iota(order.begin(), order.end(), 0);
        const double* row = pfs.a_cls.row(head);
        std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
            if (row[i] != row[j]) return row[i] > row[j];
            return i < j;
        });
        double* out = prior.row(head);
        for (int sel = 0; sel < k; ++sel) {
            const double* patch = pfs.f_patch.row(order[sel]);
            for (int c = 0; c < d; ++c) out[c] += patch[c];
        }
        double denom = static_cast<double>(k) + m::kDelta;
        for (int c = 0; c < d; ++c) out[c] /= denom;
    }
    return prior;
}

Tensor2 condition_queries(const Tensor2& queries, const Tensor2& f_prior,
                          const CrossAttention& attn) {
    if (attn.heads() < 1) throw ParamError("cross attention needs at least one head");
    if (queries.cols != f_prior.cols) throw DimError("query width does not match prior width");
    int dh = attn.head_dim();
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor2 out = queries;
    for (int head = 0; head < attn.heads(); ++head) {
        Tensor2 qh = m::matmul(queries, attn.wq[head]);   // T x dh
        Tensor2 kh = m::matmul(f_prior, attn.wk[head]);   // H x dh
        Tensor2 vh = m::matmul(f_prior, attn.wv[head]);   // H x dh
        Tensor2 scores = m::matmul_nt(qh, kh);            // T x H
        for (auto& v : scores.data) v *= inv_sqrt;
        Tensor2 weights = m::softmax_rows(scores, 1.0);
        Tensor2 mixed = m::matmul(weights, vh);           // T x dh
        Tensor2 proj = m::matmul(mixed, attn.wo[head]);   // T x D
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += proj.data[i];
    }
    return out;
}

Assignment assign_patches(const Tensor2& f_patch, const Tensor2& q_cond, double tau,
                          NoiseMode mode, RngState& rng) {
    if (tau <= 0.0) throw ParamError("assignment temperature must be positive");
    Assignment out;
    out.s = m::cosine_pairwise(f_patch, q_cond);

    Tensor2 noisy = out.s;
    if (mode == NoiseMode::Stochastic)
        for (auto& v : noisy.data) v += m::sample_gumbel(rng);

    out.h_soft = m::softmax_rows(noisy, tau);
    out.h_hard = Tensor2(out.h_soft.rows, out.h_soft.cols);
    for (int r = 0; r < out.h_soft.rows; ++r)
        out.h_hard(r, m::argmax(out.h_soft.row(r), out.h_soft.cols)) = 1.0;
    return out;
}

PartPooling aggregate_parts(const Tensor2& f_patch, const Tensor2& h) {
    if (h.rows != f_patch.rows) throw DimError("allocation rows do not match patch count");
    int t = h.cols;
    int d = f_patch.cols;

    PartPooling out;
    out.p = m::matmul_tn(h, f_patch);  // T x D raw sums
    out.mass.assign(t, 0.0);
    for (int n = 0; n < h.rows; ++n)
        for (int j = 0; j < t; ++j) out.mass[j] += h(n, j);
    for (int j = 0; j < t; ++j) {
        double denom = out.mass[j] + m::kDelta;
        for (int c = 0; c < d; ++c) out.p(j, c) /= denom;
    }
    out.f_part.assign(d, 0.0);
    for (int j = 0; j < t; ++j)
        for (int c = 0; c < d; ++c) out.f_part[c] += out.p(j, c);
    for (int c = 0; c < d; ++c) out.f_part[c] /= t;
    return out;
}

namespace {

std::vector<double> project(const std::vector<double>& x, const FusionHead& head) {
    int d = head.w1.rows;
    int hidden = head.w1.cols;
    int dz = head.w2.cols;
    if (static_cast<int>(x.size()) != d) throw DimError("fuse: input width mismatch");

    std::vector<double> a(hidden);
    for (int j = 0; j < hidden; ++j) {
        double s = head.b1[j];
        for (int i = 0; i < d; ++i) s += x[i] * head.w1(i, j);
        a[j] = s > 0.0 ? s : 0.0;
    }
    std::vector<double> z(dz);
    for (int j = 0; j < dz; ++j) {
        double s = head.b2[j];
        for (int i = 0; i < hidden; ++i) s += a[i] * head.w2(i, j);
        z[j] = s;
    }
    return z;
}

}  // namespace

std::vector<double> fuse(const std::vector<double>& f_cls, const std::vector<double>& f_part,
                         const FusionHead& head, bool* degenerate) {
    std::vector<double> zc = project(f_cls, head);
    std::vector<double> zp = project(f_part, head);
    for (size_t i = 0; i < zc.size(); ++i) zc[i] += zp[i];
    double n = m::norm(zc.data(), static_cast<int>(zc.size()));
    if (n < m::kNormEps) {
        if (degenerate) *degenerate = true;
        std::fill(zc.begin(), zc.end(), 0.0);
        zc[0] = 1.0;
        return zc;
    }
    for (auto& v : zc) v /= n;
    return zc;
}

ForwardOut forward(const PatchFeatureSet& pfs, const RoutingParams& params, double rho,
                   double tau, NoiseMode mode, RngState& rng, bool hard) {
    ForwardOut out;
    out.f_prior = attention_priors(pfs, rho);
    out.q_cond = condition_queries(params.queries, out.f_prior, params.attn);
    out.assign = assign_patches(pfs.f_patch, out.q_cond, tau, mode, rng);
    out.pool = aggregate_parts(pfs.f_patch, hard ? out.assign.h_hard : out.assign.h_soft);
    out.z = fuse(pfs.f_cls, out.pool.f_part, params.fusion, &out.degenerate_fuse);
    return out;
}

namespace {

double allocation_entropy(const std::vector<Tensor2>& batch) {
    if (batch.empty()) throw ParamError("allocation entropy over empty batch");
    int t = batch[0].cols;
    std::vector<double> massv(t, 0.0);
    double total = 0.0;
    for (const auto& h : batch) {
        if (h.cols != t) throw DimError("allocation column mismatch across batch");
        for (int r = 0; r < h.rows; ++r)
            for (int c = 0; c < t; ++c) {
                massv[c] += h(r, c);
                total += h(r, c);
            }
    }
    if (total <= 0.0) throw ParamError("allocation has zero total mass");
    double e = 0.0;
    for (double q : massv) {
        double p = q / total;
        if (p > 0.0) e -= p * std::log(p);
    }
    return e;
}

}  // namespace

double parts_usage_entropy(const std::vector<Tensor2>& h_hard_batch) {
    return allocation_entropy(h_hard_batch);
}

double soft_usage_entropy(const std::vector<Tensor2>& h_soft_batch) {
    return allocation_entropy(h_soft_batch);
}

double attention_kl(const Tensor2& a, const Tensor2& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw DimError("attention_kl: shape mismatch");
    constexpr double floor = 1e-12;
    double total = 0.0;
    for (int r = 0; r < a.rows; ++r) {
        double kl = 0.0;
        for (int c = 0; c < a.cols; ++c) {
            double p = std::max(a(r, c), floor);
            double q = std::max(b(r, c), floor);
            kl += p * std::log(p / q);
        }
        total += kl;
    }
    return total / a.rows;
}

std::vector<int> fit_routing(const Tensor2& f_patch, int t_parts, int iters, RngState& rng) {
    int n = f_patch.rows;
    int d = f_patch.cols;
    if (t_parts < 1 || t_parts > n) throw ParamError("fit_routing: bad part count");

    Tensor2 pts = f_patch;
    m::l2_normalize_rows(pts);

    // greedy seeding: first centroid at random, then repeatedly the patch
    // farthest (in cosine distance) from its nearest centroid
    std::vector<int> seeds;
    seeds.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(n))));
    std::vector<double> best_cos(n, -2.0);
    while (static_cast<int>(seeds.size()) < t_parts) {
        int last = seeds.back();
        for (int i = 0; i < n; ++i) {
            double c = m::dot(pts.row(i), pts.row(last), d);
            best_cos[i] = std::max(best_cos[i], c);
        }
        int far = 0;
        for (int i = 1; i < n; ++i)
            if (best_cos[i] < best_cos[far]) far = i;
        seeds.push_back(far);
    }

    Tensor2 centroids(t_parts, d);
    for (int j = 0; j < t_parts; ++j)
        std::copy(pts.row(seeds[j]), pts.row(seeds[j]) + d, centroids.row(j));

    std::vector<int> labels(n, 0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bc = -2.0;
            for (int j = 0; j < t_parts; ++j) {
                double c = m::dot(pts.row(i), centroids.row(j), d);
                if (c > bc) {
                    bc = c;
                    best = j;
                }
            }
            if (labels[i] != best) changed = true;
            labels[i] = best;
        }
        centroids.fill(0.0);
        std::vector<int> counts(t_parts, 0);
        for (int i = 0; i < n; ++i) {
            ++counts[labels[i]];
            for (int c = 0; c < d; ++c) centroids(labels[i], c) += pts(i, c);
        }
        m::l2_normalize_rows(centroids);
        for (int j = 0; j < t_parts; ++j) {
            if (counts[j] > 0) continue;
            // reseed from the patch least similar to its current centroid
            int far = 0;
            double worst = 2.0;
            for (int i = 0; i < n; ++i) {
                double c = m::dot(pts.row(i), centroids.row(labels[i]), d);
                if (c < worst) {
                    worst = c;
                    far = i;
                }
            }
            std::copy(pts.row(far), pts.row(far) + d, centroids.row(j));
        }
        if (!changed) break;
    }
    return labels;
}

}  // namespace openparts::routing
