#include "openparts/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "openparts/math.hpp"

namespace openparts::train {

namespace m = openparts::math;
namespace r = openparts::routing;

// ---------------------------------------------------------------------------
// Parameters

Parameters Parameters::init(int feat_dim, int n_classes, const RunConfig& cfg, RngState& rng) {
    if (feat_dim < 1) throw ParamError("feature dimension must be >= 1");
    if (n_classes < 1) throw ParamError("class count must be >= 1");
    if (feat_dim % cfg.attn_heads != 0)
        throw ParamError("attn_heads must divide the feature dimension");

    Parameters p;
    p.feat_dim = feat_dim;
    p.n_classes = n_classes;
    int dh = feat_dim / cfg.attn_heads;

    auto push = [&](const std::string& name, Tensor2 t) {
        p.names.push_back(name);
        p.tensors.push_back(std::move(t));
    };

    Tensor2 q(cfg.parts, feat_dim);
    double qs = 1.0 / std::sqrt(static_cast<double>(feat_dim));
    for (auto& v : q.data) v = qs * rng.normal();
    push("queries", std::move(q));

    for (int h = 0; h < cfg.attn_heads; ++h) {
        for (const char* part : {"wq", "wk", "wv"}) {
            Tensor2 w(feat_dim, dh);
            for (auto& v : w.data) v = qs * rng.normal();
            push("attn." + std::string(part) + "." + std::to_string(h), std::move(w));
        }
        Tensor2 wo(dh, feat_dim);
        double os = 1.0 / std::sqrt(static_cast<double>(dh));
        for (auto& v : wo.data) v = os * rng.normal();
        push("attn.wo." + std::to_string(h), std::move(wo));
    }

    Tensor2 w1(feat_dim, cfg.fusion_hidden);
    double s1 = std::sqrt(2.0 / feat_dim);
    for (auto& v : w1.data) v = s1 * rng.normal();
    push("fusion.w1", std::move(w1));
    push("fusion.b1", Tensor2(1, cfg.fusion_hidden));

    Tensor2 w2(cfg.fusion_hidden, cfg.embed_dim);
    double s2 = std::sqrt(2.0 / cfg.fusion_hidden);
    for (auto& v : w2.data) v = s2 * rng.normal();
    push("fusion.w2", std::move(w2));
    push("fusion.b2", Tensor2(1, cfg.embed_dim));

    Tensor2 cw(n_classes, cfg.embed_dim);
    for (auto& v : cw.data) v = rng.normal();
    m::l2_normalize_rows(cw);
    push("clf.w", std::move(cw));

    Tensor2 lg(1, 1);
    lg(0, 0) = std::log(cfg.gamma_init);
    push("clf.log_gamma", std::move(lg));

    return p;
}

Tensor2& Parameters::at(const std::string& name) {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return tensors[i];
    throw ParamError("no parameter named '" + name + "'");
}

const Tensor2& Parameters::at(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return tensors[i];
    throw ParamError("no parameter named '" + name + "'");
}

routing::RoutingParams Parameters::routing_view() const {
    routing::RoutingParams rp;
    rp.queries = at("queries");
    int h = 0;
    while (true) {
        std::string suffix = std::to_string(h);
        bool found = false;
        for (const auto& n : names)
            if (n == "attn.wq." + suffix) found = true;
        if (!found) break;
        rp.attn.wq.push_back(at("attn.wq." + suffix));
        rp.attn.wk.push_back(at("attn.wk." + suffix));
        rp.attn.wv.push_back(at("attn.wv." + suffix));
        rp.attn.wo.push_back(at("attn.wo." + suffix));
        ++h;
    }
    rp.fusion.w1 = at("fusion.w1");
    const Tensor2& b1 = at("fusion.b1");
    rp.fusion.b1.assign(b1.data.begin(), b1.data.end());
    rp.fusion.w2 = at("fusion.w2");
    const Tensor2& b2 = at("fusion.b2");
    rp.fusion.b2.assign(b2.data.begin(), b2.data.end());
    return rp;
}

ood::CosineClassifier Parameters::classifier_view() const {
    ood::CosineClassifier clf;
    clf.w = at("clf.w");
    clf.log_gamma = at("clf.log_gamma")(0, 0);
    return clf;
}

size_t Parameters::scalar_count() const {
    size_t n = 0;
    for (const auto& t : tensors) n += t.data.size();
    return n;
}

std::vector<double> Parameters::flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    for (const auto& t : tensors) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

void Parameters::unflatten(const std::vector<double>& flat) {
    if (flat.size() != scalar_count()) throw DimError("unflatten: size mismatch");
    size_t at = 0;
    for (auto& t : tensors) {
        std::copy(flat.begin() + at, flat.begin() + at + t.data.size(), t.data.begin());
        at += t.data.size();
    }
}

// ---------------------------------------------------------------------------
// Taped forward

namespace {

struct LeafIdx {
    ad::Var queries;
    std::vector<ad::Var> wq, wk, wv, wo;
    ad::Var w1, b1, w2, b2;
    ad::Var clf_w, log_gamma;
};

LeafIdx lift(ad::Tape& t, const Parameters& p, Leaves& out, int heads) {
    LeafIdx L;
    out.vars.clear();
    for (const auto& tensor : p.tensors) out.vars.push_back(t.leaf(tensor));

    auto var_of = [&](const std::string& name) {
        for (size_t i = 0; i < p.names.size(); ++i)
            if (p.names[i] == name) return out.vars[i];
        throw ParamError("no parameter named '" + name + "'");
    };

    L.queries = var_of("queries");
    for (int h = 0; h < heads; ++h) {
        std::string s = std::to_string(h);
        L.wq.push_back(var_of("attn.wq." + s));
        L.wk.push_back(var_of("attn.wk." + s));
        L.wv.push_back(var_of("attn.wv." + s));
        L.wo.push_back(var_of("attn.wo." + s));
    }
    L.w1 = var_of("fusion.w1");
    L.b1 = var_of("fusion.b1");
    L.w2 = var_of("fusion.w2");
    L.b2 = var_of("fusion.b2");
    L.clf_w = var_of("clf.w");
    L.log_gamma = var_of("clf.log_gamma");
    return L;
}

ad::Var embed_one(ad::Tape& t, const routing::PatchFeatureSet& pfs, const LeafIdx& L,
                  const RunConfig& cfg, double tau_now, RoutingMode rmode,
                  routing::NoiseMode nmode, RngState& rng) {
    int n = pfs.f_patch.rows;
    int d = pfs.f_patch.cols;
    int dh = d / cfg.attn_heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    ad::Var f_prior = t.constant(r::attention_priors(pfs, cfg.rho));
    ad::Var f_patch = t.constant(pfs.f_patch);

    ad::Var q_cond = L.queries;
    for (int h = 0; h < cfg.attn_heads; ++h) {
        ad::Var qh = ad::matmul(t, L.queries, L.wq[h]);
        ad::Var kh = ad::matmul(t, f_prior, L.wk[h]);
        ad::Var vh = ad::matmul(t, f_prior, L.wv[h]);
        ad::Var scores = ad::scale(t, ad::matmul(t, qh, kh, false, true), inv_sqrt);
        ad::Var wgt = ad::softmax_rows(t, scores, 1.0);
        ad::Var mixed = ad::matmul(t, wgt, vh);
        q_cond = ad::add(t, q_cond, ad::matmul(t, mixed, L.wo[h]));
    }

    ad::Var s = ad::cosine_pairwise(t, f_patch, q_cond);
    if (nmode == routing::NoiseMode::Stochastic) {
        Tensor2 g(n, cfg.parts);
        for (auto& v : g.data) v = m::sample_gumbel(rng);
        s = ad::add(t, s, t.constant(std::move(g)));
    }
    ad::Var h_soft = ad::softmax_rows(t, s, tau_now);
    ad::Var h_used = rmode == RoutingMode::HardST ? ad::straight_through(t, h_soft) : h_soft;

    ad::Var raw = ad::matmul(t, h_used, f_patch, true, false);  // T x D
    Tensor2 ones(n, 1);
    ones.fill(1.0);
    ad::Var mass = ad::matmul(t, h_used, t.constant(std::move(ones)), true, false);  // T x 1
    ad::Var p = ad::mul(t, raw, ad::recip_shift(t, mass, m::kDelta));
    ad::Var f_part = ad::scale(t, ad::col_sum(t, p), 1.0 / cfg.parts);  // 1 x D

    ad::Var f_cls = t.constant(Tensor2(1, d, pfs.f_cls));
    auto project = [&](ad::Var x) {
        ad::Var a = ad::relu(t, ad::add(t, ad::matmul(t, x, L.w1), L.b1));
        return ad::add(t, ad::matmul(t, a, L.w2), L.b2);
    };
    ad::Var fused = ad::add(t, project(f_cls), project(f_part));
    return ad::l2norm_rows(t, fused);
}

Tensor2 one_hot(const std::vector<int>& labels, int k) {
    Tensor2 out(static_cast<int>(labels.size()), k);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k) throw ParamError("label out of range");
        out(static_cast<int>(i), labels[i]) = 1.0;
    }
    return out;
}

}  // namespace

EmbedVars build_embeddings(ad::Tape& tape, const Parameters& p, const StepBatch& batch,
                           const RunConfig& cfg, double tau_now, RoutingMode rmode,
                           routing::NoiseMode nmode, RngState& rng) {
    if (batch.view1.size() != batch.view2.size() || batch.view1.size() != batch.labels.size())
        throw DimError("step batch views and labels must align");
    if (batch.view1.empty()) throw ParamError("step batch is empty");

    EmbedVars ev;
    LeafIdx L = lift(tape, p, ev.leaves, cfg.attn_heads);

    std::vector<ad::Var> z1s, z2s;
    for (size_t i = 0; i < batch.view1.size(); ++i) {
        z1s.push_back(embed_one(tape, batch.view1[i], L, cfg, tau_now, rmode, nmode, rng));
        z2s.push_back(embed_one(tape, batch.view2[i], L, cfg, tau_now, rmode, nmode, rng));
    }
    ev.z1 = ad::stack_rows(tape, z1s);
    ev.z2 = ad::stack_rows(tape, z2s);
    return ev;
}

LossVars build_losses(ad::Tape& t, const EmbedVars& ev, const StepBatch& batch,
                      const RunConfig& cfg) {
    int b = t.val(ev.z1).rows;
    const LeafIdx* L = nullptr;
    // recover classifier leaves from the stored order
    LeafIdx tmp;
    tmp.clf_w = ev.leaves.vars[ev.leaves.vars.size() - 2];
    tmp.log_gamma = ev.leaves.vars[ev.leaves.vars.size() - 1];
    L = &tmp;

    ad::Var z_all = ad::stack_rows(t, {ev.z1, ev.z2});  // 2B x Dz

    // symmetric InfoNCE; the anchor itself is masked out of its denominator
    ad::Var czz = ad::cosine_pairwise(t, z_all, z_all);
    Tensor2 diag_mask(2 * b, 2 * b);
    for (int i = 0; i < 2 * b; ++i) diag_mask(i, i) = -1e30;
    ad::Var masked = ad::add(t, czz, t.constant(std::move(diag_mask)));
    ad::Var lse_n = ad::logsumexp_rows(t, masked, cfg.tau_c);
    Tensor2 pos_mask(2 * b, 2 * b);
    for (int i = 0; i < b; ++i) {
        pos_mask(i, b + i) = 1.0;
        pos_mask(b + i, i) = 1.0;
    }
    ad::Var pos = ad::row_sum(t, ad::mul(t, czz, t.constant(std::move(pos_mask))));
    ad::Var nce = ad::scale(t, ad::mean_all(t, ad::sub(t, lse_n, pos)), 1.0 / cfg.tau_c);

    std::vector<int> labels2(batch.labels);
    labels2.insert(labels2.end(), batch.labels.begin(), batch.labels.end());

    // prototype SupCon
    ad::Var cp = ad::cosine_pairwise(t, z_all, t.constant(batch.prototypes));
    ad::Var lse_s = ad::logsumexp_rows(t, cp, cfg.tau_c);
    ad::Var pick_s =
        ad::row_sum(t, ad::mul(t, cp, t.constant(one_hot(labels2, batch.prototypes.rows))));
    ad::Var scon = ad::scale(t, ad::mean_all(t, ad::sub(t, lse_s, pick_s)), 1.0 / cfg.tau_c);

    // cosine-classifier cross entropy
    ad::Var gamma = ad::exp(t, L->log_gamma);
    ad::Var cw = ad::cosine_pairwise(t, z_all, L->clf_w);
    ad::Var logits = ad::mul(t, cw, gamma);
    ad::Var lse_c = ad::logsumexp_rows(t, logits, cfg.tau_temp);
    ad::Var pick_c =
        ad::row_sum(t, ad::mul(t, logits, t.constant(one_hot(labels2, t.val(L->clf_w).rows))));
    ad::Var ce = ad::scale(t, ad::mean_all(t, ad::sub(t, lse_c, pick_c)), 1.0 / cfg.tau_temp);

    LossVars out;
    out.report.infonce = t.val(nce)(0, 0);
    out.report.supcon = t.val(scon)(0, 0);
    out.report.ce = t.val(ce)(0, 0);

    ad::Var total = ad::add(t, ad::add(t, ad::scale(t, nce, cfg.lambda_nce),
                                       ad::scale(t, scon, cfg.lambda_scon)),
                            ad::scale(t, ce, cfg.lambda_ce));

    if (batch.ood.rows > 0) {
        ad::Var zo = t.constant(batch.ood);
        ad::Var lo = ad::mul(t, ad::cosine_pairwise(t, zo, L->clf_w), gamma);
        ad::Var e = ad::scale(t, ad::logsumexp_rows(t, lo, cfg.tau_temp), -1.0);
        ad::Var oe = ad::mean_all(t, ad::hinge(t, e, cfg.margin));
        ad::Var ent = ad::mean_all(t, ad::entropy_rows(t, lo, cfg.tau_temp));
        out.report.oe = t.val(oe)(0, 0);
        out.report.ent = t.val(ent)(0, 0);
        out.report.ufa = cfg.lambda_oe * out.report.oe - cfg.lambda_ent * out.report.ent;
        total = ad::add(t, total, ad::add(t, ad::scale(t, oe, cfg.lambda_oe),
                                          ad::scale(t, ent, -cfg.lambda_ent)));
    }

    out.total = total;
    out.report.total = t.val(total)(0, 0);
    return out;
}

LossReport eval_loss(const Parameters& p, const StepBatch& batch, const RunConfig& cfg,
                     RoutingMode rmode, routing::NoiseMode nmode, RngState rng,
                     std::vector<Tensor2>* grads) {
    ad::Tape tape;
    EmbedVars ev = build_embeddings(tape, p, batch, cfg, cfg.gumbel_tau, rmode, nmode, rng);
    LossVars lv = build_losses(tape, ev, batch, cfg);
    if (grads) {
        tape.backward(lv.total);
        grads->clear();
        for (ad::Var v : ev.leaves.vars) grads->push_back(tape.grad(v));
    }
    return lv.report;
}

Tensor2 embed_all(const std::vector<routing::PatchFeatureSet>& sets, const Parameters& p,
                  const RunConfig& cfg) {
    if (sets.empty()) throw ParamError("embed_all: no inputs");
    routing::RoutingParams rp = p.routing_view();
    Tensor2 out(static_cast<int>(sets.size()), cfg.embed_dim);
    RngState unused(0);
    for (size_t i = 0; i < sets.size(); ++i) {
        auto fw = routing::forward(sets[i], rp, cfg.rho, cfg.gumbel_tau,
                                   routing::NoiseMode::Deterministic, unused, true);
        std::copy(fw.z.begin(), fw.z.end(), out.row(static_cast<int>(i)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer Optimizer::init(const Parameters& p, const RunConfig& cfg) {
    Optimizer o;
    o.lr0 = cfg.lr;
    o.momentum = cfg.momentum;
    o.weight_decay = cfg.weight_decay;
    o.epochs_total = cfg.epochs;
    for (const auto& t : p.tensors) o.velocity.emplace_back(t.rows, t.cols);
    return o;
}

double Optimizer::lr_at(int epoch) const {
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs_total));
}

void Optimizer::step(Parameters& p, const std::vector<Tensor2>& grads, int epoch) {
    if (grads.size() != p.tensors.size()) throw DimError("optimizer: gradient count mismatch");
    double lr = lr_at(epoch);
    for (size_t i = 0; i < p.tensors.size(); ++i) {
        bool decay = p.names[i] != "fusion.b1" && p.names[i] != "fusion.b2" &&
                     p.names[i] != "clf.log_gamma";
        Tensor2& v = velocity[i];
        Tensor2& t = p.tensors[i];
        const Tensor2& g = grads[i];
        for (size_t j = 0; j < t.data.size(); ++j) {
            double upd = g.data[j] + (decay ? weight_decay * t.data[j] : 0.0);
            v.data[j] = momentum * v.data[j] + upd;
            t.data[j] -= lr * v.data[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop

routing::PatchFeatureSet make_second_view(const routing::PatchFeatureSet& pfs,
                                          const RunConfig& cfg, RngState& rng) {
    routing::PatchFeatureSet out = pfs;
    auto distort = [&](double x) {
        double y = x + cfg.view_jitter * rng.normal();
        return rng.uniform01() < cfg.view_dropout ? 0.0 : y;
    };
    for (auto& v : out.f_patch.data) v = distort(v);
    for (auto& v : out.f_cls) v = distort(v);
    return out;
}

namespace {

Tensor2 class_means(const Tensor2& z, const std::vector<int>& labels, int n_classes) {
    Tensor2 out(n_classes, z.cols);
    std::vector<int> counts(n_classes, 0);
    for (int i = 0; i < z.rows; ++i) {
        ++counts[labels[i]];
        for (int c = 0; c < z.cols; ++c) out(labels[i], c) += z(i, c);
    }
    for (int y = 0; y < n_classes; ++y)
        if (counts[y] > 0)
            for (int c = 0; c < z.cols; ++c) out(y, c) /= counts[y];
    return out;
}

}  // namespace

FitResult fit(const std::vector<TrainExample>& data, const RunConfig& cfg) {
    if (data.empty()) throw ParamError("fit: empty training set");
    int feat_dim = data[0].pfs.f_patch.cols;
    int n_classes = 0;
    for (const auto& e : data) n_classes = std::max(n_classes, e.label + 1);

    RngState rng(cfg.seed);
    // separate stream for synthetic outlier proposals so that runs differing
    // only in proposal settings still share init, shuffles, and view noise
    RngState rng_ood(cfg.seed ^ 0xA5A5A5A5A5A5A5A5ULL);
    FitResult res;
    res.params = Parameters::init(feat_dim, n_classes, cfg, rng);
    res.stats = ood::ClassStats(n_classes, cfg.embed_dim, cfg.cov_diagonal);
    Optimizer opt = Optimizer::init(res.params, cfg);

    std::vector<routing::PatchFeatureSet> all_sets;
    std::vector<int> all_labels;
    for (const auto& e : data) {
        all_sets.push_back(e.pfs);
        all_labels.push_back(e.label);
    }

    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tensor2 all_z = embed_all(all_sets, res.params, cfg);
        res.prototypes = class_means(all_z, all_labels, n_classes);

        double tau_now = cfg.tau_anneal
                             ? 1.0 + (0.1 - 1.0) * epoch / std::max(cfg.epochs - 1, 1)
                             : cfg.gumbel_tau;

        for (size_t i = data.size(); i > 1; --i) {
            size_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }

        int step = 0;
        for (size_t start = 0; start < data.size(); start += cfg.batch_size, ++step) {
            size_t end = std::min(start + cfg.batch_size, data.size());

            StepBatch sb;
            sb.prototypes = res.prototypes;
            for (size_t k = start; k < end; ++k) {
                const auto& ex = data[order[k]];
                sb.view1.push_back(ex.pfs);
                sb.view2.push_back(make_second_view(ex.pfs, cfg, rng));
                sb.labels.push_back(ex.label);
            }

            ad::Tape tape;
            EmbedVars ev = build_embeddings(tape, res.params, sb, cfg, tau_now,
                                            RoutingMode::HardST,
                                            routing::NoiseMode::Stochastic, rng);

            res.stats.ema_update(tape.val(ev.z1), sb.labels, cfg.alpha_mean, cfg.alpha_cov);

            bool want_ood = cfg.n_ood > 0 && (cfg.lambda_oe > 0.0 || cfg.lambda_ent > 0.0);
            bool can_ood = res.stats.initialized_count() >= std::max(cfg.mix_k, 1);
            if (want_ood && can_ood) {
                ood::ProposalConfig pc;
                pc.n_total = cfg.n_ood;
                pc.split = cfg.ood_split;
                pc.beta = cfg.beta_tail;
                pc.k = cfg.mix_k;
                pc.sigma = cfg.mix_sigma;
                sb.ood = ood::propose_ood(res.stats, pc, rng_ood).z;
            } else {
                sb.ood = Tensor2(0, cfg.embed_dim);
            }

            LossVars lv = build_losses(tape, ev, sb, cfg);
            if (!std::isfinite(lv.report.total))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step));

            tape.backward(lv.total);
            std::vector<Tensor2> grads;
            grads.reserve(ev.leaves.vars.size());
            for (ad::Var v : ev.leaves.vars) grads.push_back(tape.grad(v));
            opt.step(res.params, grads, epoch);

            res.history.push_back({epoch, step, lv.report});
        }
    }
    return res;
}

std::string history_csv(const std::vector<StepRecord>& history) {
    std::string out = "epoch,step,infonce,supcon,ce,oe,ent,ufa,total\n";
    char buf[512];
    for (const auto& rec : history) {
        std::snprintf(buf, sizeof(buf),
                      "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", rec.epoch, rec.step,
                      rec.report.infonce, rec.report.supcon, rec.report.ce, rec.report.oe,
                      rec.report.ent, rec.report.ufa, rec.report.total);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheck gradcheck(uint64_t seed) {
    RunConfig cfg;
    cfg.parts = 3;
    cfg.attn_heads = 2;
    cfg.fusion_hidden = 16;
    cfg.embed_dim = 8;
    cfg.n_ood = 12;

    const int d = 8, n_patches = 6, n_classes = 4, b = 6, attn_rows = 3;

    RngState rng(seed);
    Parameters p = Parameters::init(d, n_classes, cfg, rng);

    StepBatch sb;
    for (int i = 0; i < b; ++i) {
        routing::PatchFeatureSet pfs;
        pfs.f_patch = Tensor2(n_patches, d);
        for (auto& v : pfs.f_patch.data) v = rng.normal();
        pfs.f_cls.resize(d);
        for (auto& v : pfs.f_cls) v = rng.normal();
        pfs.a_cls = Tensor2(attn_rows, n_patches);
        for (auto& v : pfs.a_cls.data) v = std::abs(rng.normal()) + 0.05;
        pfs.validate_ingest();
        sb.view1.push_back(pfs);
        sb.view2.push_back(make_second_view(pfs, cfg, rng));
        sb.labels.push_back(static_cast<int>(rng.below(n_classes)));
    }
    sb.prototypes = Tensor2(n_classes, cfg.embed_dim);
    for (auto& v : sb.prototypes.data) v = rng.normal();
    m::l2_normalize_rows(sb.prototypes);
    sb.ood = Tensor2(cfg.n_ood, cfg.embed_dim);
    for (auto& v : sb.ood.data) v = rng.normal();

    RngState unused(0);
    std::vector<Tensor2> grads;
    eval_loss(p, sb, cfg, RoutingMode::Soft, routing::NoiseMode::Deterministic, unused, &grads);

    std::vector<double> flat_grad;
    for (const auto& g : grads)
        flat_grad.insert(flat_grad.end(), g.data.begin(), g.data.end());

    std::vector<double> theta = p.flatten();
    const double h = 1e-5;
    GradCheck out;
    out.n_params = theta.size();

    Parameters probe = p;
    for (size_t i = 0; i < theta.size(); ++i) {
        double keep = theta[i];
        theta[i] = keep + h;
        probe.unflatten(theta);
        double up = eval_loss(probe, sb, cfg, RoutingMode::Soft,
                              routing::NoiseMode::Deterministic, unused)
                        .total;
        theta[i] = keep - h;
        probe.unflatten(theta);
        double dn = eval_loss(probe, sb, cfg, RoutingMode::Soft,
                              routing::NoiseMode::Deterministic, unused)
                        .total;
        theta[i] = keep;
        double fd = (up - dn) / (2.0 * h);
        double rel = std::abs(flat_grad[i] - fd) /
                     std::max({std::abs(flat_grad[i]), std::abs(fd), 1e-4});
        out.max_rel_err = std::max(out.max_rel_err, rel);
    }
    probe.unflatten(theta);
    return out;
}

}  // namespace openparts::train
