#include "openparts/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "openparts/error.hpp"
#include "openparts/math.hpp"
#include "openparts/ood.hpp"

namespace openparts::bench {

namespace m = openparts::math;

namespace {

// two Gram-Schmidt passes over the columns of a Gaussian matrix blended
// with the identity; strength 1 is a fully random orthogonal matrix,
// strength 0 is the identity, and values between give partial rotations
Tensor2 random_orthogonal(int d, double strength, RngState& rng) {
    Tensor2 q(d, d);
    for (auto& v : q.data) v = rng.normal();
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            q(i, j) = strength * q(i, j) + (i == j ? 1.0 - strength : 0.0);

    for (int pass = 0; pass < 2; ++pass) {
        for (int j = 0; j < d; ++j) {
            for (int prev = 0; prev < j; ++prev) {
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += q(i, j) * q(i, prev);
                for (int i = 0; i < d; ++i) q(i, j) -= dot * q(i, prev);
            }
            double nrm = 0.0;
            for (int i = 0; i < d; ++i) nrm += q(i, j) * q(i, j);
            nrm = std::sqrt(nrm);
            if (nrm < 1e-12) throw NumericError("random_orthogonal: degenerate column");
            for (int i = 0; i < d; ++i) q(i, j) /= nrm;
        }
    }
    return q;
}

double min_pair_distance(const Tensor2& means, int upto) {
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < upto; ++a)
        for (int b = a + 1; b < upto; ++b) {
            double s = 0.0;
            for (int c = 0; c < means.cols; ++c) {
                double t = means(a, c) - means(b, c);
                s += t * t;
            }
            best = std::min(best, std::sqrt(s));
        }
    return best;
}

}  // namespace

ShiftSpec make_shift(int d, double rotate, double translation_scale, double noise,
                     RngState& rng) {
    if (d < 1) throw ParamError("make_shift: dimension must be >= 1");
    if (noise < 0.0) throw ParamError("make_shift: noise must be >= 0");
    if (rotate < 0.0 || rotate > 1.0)
        throw ParamError("make_shift: rotation strength must be in [0, 1]");

    ShiftSpec spec;
    spec.rotation = rotate > 0.0 ? random_orthogonal(d, rotate, rng) : Tensor2::identity(d);
    spec.translation.assign(d, 0.0);
    if (translation_scale != 0.0) {
        Tensor2 dir = ood::sample_sphere(d, 1, rng);
        for (int i = 0; i < d; ++i) spec.translation[i] = translation_scale * dir(0, i);
    }
    spec.noise = noise;
    return spec;
}

Tensor2 apply_shift(const Tensor2& x, const ShiftSpec& spec, RngState& rng) {
    if (spec.rotation.cols != x.cols || spec.rotation.rows != x.cols)
        throw DimError("apply_shift: rotation does not match the data dimension");
    if (static_cast<int>(spec.translation.size()) != x.cols)
        throw DimError("apply_shift: translation does not match the data dimension");

    Tensor2 out = m::matmul_nt(x, spec.rotation);  // rows become R x
    for (int i = 0; i < out.rows; ++i)
        for (int c = 0; c < out.cols; ++c) {
            out(i, c) += spec.translation[c];
            if (spec.noise > 0.0) out(i, c) += spec.noise * rng.normal();
        }
    return out;
}

Generated generate(const RunConfig& cfg, RngState& rng) {
    int d = cfg.synth_dim, c_all = cfg.synth_classes, c_old = cfg.synth_known;
    int per = cfg.synth_per_class;
    if (d < 2) throw ParamError("generate: synth_dim must be >= 2");
    if (c_all < 2) throw ParamError("generate: synth_classes must be >= 2");
    if (c_old < 1 || c_old > c_all)
        throw ParamError("generate: synth_known must be in [1, synth_classes]");
    if (per < 1) throw ParamError("generate: synth_per_class must be >= 1");
    if (cfg.synth_radius <= 0.0) throw ParamError("generate: synth_radius must be > 0");

    Generated g;

    // repulsion placement: each new mean is the best of a candidate pool
    const int pool = 64;
    g.means = Tensor2(c_all, d);
    Tensor2 first = ood::sample_sphere(d, 1, rng);
    for (int c = 0; c < d; ++c) g.means(0, c) = cfg.synth_radius * first(0, c);
    for (int j = 1; j < c_all; ++j) {
        Tensor2 cand = ood::sample_sphere(d, pool, rng);
        double best_score = -1.0;
        int best = 0;
        for (int p = 0; p < pool; ++p) {
            double closest = std::numeric_limits<double>::infinity();
            for (int prev = 0; prev < j; ++prev) {
                double s = 0.0;
                for (int c = 0; c < d; ++c) {
                    double t = cfg.synth_radius * cand(p, c) - g.means(prev, c);
                    s += t * t;
                }
                closest = std::min(closest, s);
            }
            if (closest > best_score) {
                best_score = closest;
                best = p;
            }
        }
        for (int c = 0; c < d; ++c) g.means(j, c) = cfg.synth_radius * cand(best, c);
    }

    g.delta_inter = min_pair_distance(g.means, c_all);

    if (cfg.synth_margin_ratio > 0.0) {
        if (g.delta_inter <= 0.0)
            throw NumericError("generate: coincident means, margin ratio unreachable");
        g.sigma_used = std::sqrt(cfg.synth_margin_ratio * g.delta_inter / d);
    } else {
        g.sigma_used = cfg.synth_sigma;
    }
    if (!(g.sigma_used > 0.0)) throw ParamError("generate: cluster width must be > 0");

    auto draw = [&](int classes_from, int classes_to, Dataset& out) {
        int n = (classes_to - classes_from) * per;
        out.x = Tensor2(n, d);
        out.y.clear();
        out.y.reserve(n);
        out.n_old_classes = c_old;
        int row = 0;
        for (int y = classes_from; y < classes_to; ++y)
            for (int i = 0; i < per; ++i, ++row) {
                for (int c = 0; c < d; ++c)
                    out.x(row, c) = g.means(y, c) + g.sigma_used * rng.normal();
                out.y.push_back(y);
            }
    };

    draw(0, c_old, g.source);

    Dataset clean;
    draw(0, c_all, clean);
    g.achieved = eval::margin_stats(clean.x, clean.y);

    g.shift = make_shift(d, cfg.synth_rotation, cfg.synth_translation, cfg.synth_shift_noise,
                         rng);
    g.target.x = apply_shift(clean.x, g.shift, rng);
    g.target.y = clean.y;
    g.target.n_old_classes = c_old;

    return g;
}

SynthesizedSample synthesize_patches(const std::vector<double>& x, const RunConfig& cfg,
                                     RngState& rng) {
    int d = static_cast<int>(x.size());
    int n = cfg.synth_patches, p_true = cfg.synth_parts_true, h = cfg.synth_attn_rows;
    if (d < 1) throw ParamError("synthesize_patches: empty embedding");
    if (n < 1 || p_true < 1 || h < 1)
        throw ParamError("synthesize_patches: patch, part, and attention counts must be >= 1");
    if (cfg.synth_attn_mass <= 0.0 || cfg.synth_attn_mass >= 1.0)
        throw ParamError("synthesize_patches: synth_attn_mass must be in (0, 1)");

    Tensor2 offsets = ood::sample_sphere(d, p_true, rng);
    Tensor2 parts(p_true, d);
    for (int p = 0; p < p_true; ++p)
        for (int c = 0; c < d; ++c)
            parts(p, c) = x[c] + cfg.synth_part_scale * offsets(p, c);

    SynthesizedSample out;
    out.pfs.f_patch = Tensor2(n, d);
    out.part_id.resize(n);
    for (int i = 0; i < n; ++i) {
        int pid = i % p_true;
        out.part_id[i] = pid;
        for (int c = 0; c < d; ++c)
            out.pfs.f_patch(i, c) = parts(pid, c) + cfg.synth_patch_noise * rng.normal();
    }

    int informative = (p_true + 1) / 2;
    out.pfs.a_cls = Tensor2(h, n);
    for (int r = 0; r < h; ++r) {
        double sum_in = 0.0, sum_out = 0.0;
        std::vector<double> raw(n);
        for (int i = 0; i < n; ++i) {
            raw[i] = rng.uniform_open();
            (out.part_id[i] < informative ? sum_in : sum_out) += raw[i];
        }
        for (int i = 0; i < n; ++i) {
            bool in = out.part_id[i] < informative;
            double group_mass = in ? cfg.synth_attn_mass : 1.0 - cfg.synth_attn_mass;
            double group_sum = in ? sum_in : sum_out;
            out.pfs.a_cls(r, i) = group_sum > 0.0 ? group_mass * raw[i] / group_sum : 0.0;
        }
    }

    out.pfs.f_cls = x;
    out.pfs.validate_ingest();
    return out;
}

std::vector<SynthesizedSample> synthesize_all(const Tensor2& x, const RunConfig& cfg,
                                              RngState& rng) {
    std::vector<SynthesizedSample> out;
    out.reserve(x.rows);
    for (int i = 0; i < x.rows; ++i) {
        std::vector<double> row(x.row(i), x.row(i) + x.cols);
        out.push_back(synthesize_patches(row, cfg, rng));
    }
    return out;
}

}  // namespace openparts::bench
