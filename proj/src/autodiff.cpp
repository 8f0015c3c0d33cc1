#include "openparts/autodiff.hpp"

#include <cmath>
#include <set>
#include <string>

#include "openparts/math.hpp"

namespace openparts::ad {

namespace m = openparts::math;

namespace {

const std::set<std::string>& op_vocabulary() {
    static const std::set<std::string> ops = {
        "leaf",           "const",        "add",
        "mul",            "scale",        "shift",
        "matmul",         "relu",         "exp",
        "recip_shift",    "hinge",        "softmax_rows",
        "logsumexp_rows", "entropy_rows", "cosine_pairwise",
        "l2norm_rows",    "straight_through", "stack_rows",
        "row_sum",        "col_sum",      "sum_all",
        "mean_all"};
    return ops;
}

enum class Bcast { Full, Row, Col, Scalar };

Bcast broadcast_kind(const Tensor2& a, const Tensor2& b) {
    if (a.rows == b.rows && a.cols == b.cols) return Bcast::Full;
    if (b.rows == 1 && b.cols == 1) return Bcast::Scalar;
    if (b.rows == 1 && b.cols == a.cols) return Bcast::Row;
    if (b.cols == 1 && b.rows == a.rows) return Bcast::Col;
    throw DimError("elementwise op: shapes do not broadcast");
}

double bval(const Tensor2& b, Bcast k, int r, int c) {
    switch (k) {
        case Bcast::Full: return b(r, c);
        case Bcast::Row: return b(0, c);
        case Bcast::Col: return b(r, 0);
        default: return b(0, 0);
    }
}

void baccum(Tensor2& gb, Bcast k, int r, int c, double g) {
    switch (k) {
        case Bcast::Full: gb(r, c) += g; break;
        case Bcast::Row: gb(0, c) += g; break;
        case Bcast::Col: gb(r, 0) += g; break;
        default: gb(0, 0) += g; break;
    }
}

void accum(Tensor2& dst, const Tensor2& src) {
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

Var Tape::push(const char* op, Tensor2 value) {
    if (!op_vocabulary().count(op))
        throw UnsupportedOpError(std::string("op '") + op + "' is not in the tape vocabulary");
    Node n;
    n.grad = Tensor2(value.rows, value.cols);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_back(Var v, std::function<void(Tape&)> back) {
    nodes_[v.idx].back = std::move(back);
}

void Tape::backward(Var root) {
    if (root.idx < 0 || root.idx >= static_cast<int>(nodes_.size()))
        throw ParamError("backward: bad root");
    Node& r = nodes_[root.idx];
    if (r.value.rows != 1 || r.value.cols != 1)
        throw ParamError("backward: root must be a scalar node");
    r.grad(0, 0) = 1.0;
    for (int i = root.idx; i >= 0; --i)
        if (nodes_[i].back) nodes_[i].back(*this);
}

Var add(Tape& t, Var a, Var b) {
    const Tensor2& av = t.val(a);
    const Tensor2& bv = t.val(b);
    Bcast k = broadcast_kind(av, bv);
    Tensor2 out(av.rows, av.cols);
    for (int r = 0; r < av.rows; ++r)
        for (int c = 0; c < av.cols; ++c) out(r, c) = av(r, c) + bval(bv, k, r, c);
    Var o = t.push("add", std::move(out));
    t.set_back(o, [o, a, b, k](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        Tensor2& ga = tp.grad(a);
        Tensor2& gb = tp.grad(b);
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) {
                ga(r, c) += g(r, c);
                baccum(gb, k, r, c, g(r, c));
            }
    });
    return o;
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor2& av = t.val(a);
    const Tensor2& bv = t.val(b);
    Bcast k = broadcast_kind(av, bv);
    Tensor2 out(av.rows, av.cols);
    for (int r = 0; r < av.rows; ++r)
        for (int c = 0; c < av.cols; ++c) out(r, c) = av(r, c) * bval(bv, k, r, c);
    Var o = t.push("mul", std::move(out));
    t.set_back(o, [o, a, b, k](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& av = tp.val(a);
        const Tensor2& bv = tp.val(b);
        Tensor2& ga = tp.grad(a);
        Tensor2& gb = tp.grad(b);
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) {
                ga(r, c) += g(r, c) * bval(bv, k, r, c);
                baccum(gb, k, r, c, g(r, c) * av(r, c));
            }
    });
    return o;
}

Var scale(Tape& t, Var a, double c) {
    Tensor2 out = t.val(a);
    for (auto& v : out.data) v *= c;
    Var o = t.push("scale", std::move(out));
    t.set_back(o, [o, a, c](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        Tensor2& ga = tp.grad(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
    });
    return o;
}

Var shift(Tape& t, Var a, double c) {
    Tensor2 out = t.val(a);
    for (auto& v : out.data) v += c;
    Var o = t.push("shift", std::move(out));
    t.set_back(o, [o, a](Tape& tp) { accum(tp.grad(a), tp.grad(o)); });
    return o;
}

Var sub(Tape& t, Var a, Var b) { return add(t, a, scale(t, b, -1.0)); }

Var matmul(Tape& t, Var a, Var b, bool trans_a, bool trans_b) {
    if (trans_a && trans_b) throw ParamError("matmul: both sides transposed is unsupported");
    const Tensor2& av = t.val(a);
    const Tensor2& bv = t.val(b);
    Tensor2 out = trans_a   ? m::matmul_tn(av, bv)
                  : trans_b ? m::matmul_nt(av, bv)
                            : m::matmul(av, bv);
    Var o = t.push("matmul", std::move(out));
    t.set_back(o, [o, a, b, trans_a, trans_b](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& av = tp.val(a);
        const Tensor2& bv = tp.val(b);
        if (trans_a) {
            accum(tp.grad(a), m::matmul_nt(bv, g));
            accum(tp.grad(b), m::matmul(av, g));
        } else if (trans_b) {
            accum(tp.grad(a), m::matmul(g, bv));
            accum(tp.grad(b), m::matmul_tn(g, av));
        } else {
            accum(tp.grad(a), m::matmul_nt(g, bv));
            accum(tp.grad(b), m::matmul_tn(av, g));
        }
    });
    return o;
}

Var relu(Tape& t, Var a) {
    Tensor2 out = t.val(a);
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    Var o = t.push("relu", std::move(out));
    t.set_back(o, [o, a](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& av = tp.val(a);
        Tensor2& ga = tp.grad(a);
        for (size_t i = 0; i < g.data.size(); ++i)
            if (av.data[i] > 0.0) ga.data[i] += g.data[i];
    });
    return o;
}

Var exp(Tape& t, Var a) {
    Tensor2 out = t.val(a);
    for (auto& v : out.data) v = std::exp(v);
    Var o = t.push("exp", std::move(out));
    t.set_back(o, [o, a](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& ov = tp.val(o);
        Tensor2& ga = tp.grad(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * ov.data[i];
    });
    return o;
}

Var recip_shift(Tape& t, Var a, double delta) {
    Tensor2 out = t.val(a);
    for (auto& v : out.data) v = 1.0 / (v + delta);
    Var o = t.push("recip_shift", std::move(out));
    t.set_back(o, [o, a](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& ov = tp.val(o);
        Tensor2& ga = tp.grad(a);
        for (size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] -= g.data[i] * ov.data[i] * ov.data[i];
    });
    return o;
}

Var hinge(Tape& t, Var a, double margin) {
    Tensor2 out = t.val(a);
    for (auto& v : out.data) v = std::max(0.0, margin - v);
    Var o = t.push("hinge", std::move(out));
    t.set_back(o, [o, a, margin](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& av = tp.val(a);
        Tensor2& ga = tp.grad(a);
        for (size_t i = 0; i < g.data.size(); ++i)
            if (av.data[i] < margin) ga.data[i] -= g.data[i];
    });
    return o;
}

Var softmax_rows(Tape& t, Var a, double tau) {
    Tensor2 out = m::softmax_rows(t.val(a), tau);
    Var o = t.push("softmax_rows", std::move(out));
    t.set_back(o, [o, a, tau](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& y = tp.val(o);
        Tensor2& ga = tp.grad(a);
        for (int r = 0; r < g.rows; ++r) {
            double d = 0.0;
            for (int c = 0; c < g.cols; ++c) d += g(r, c) * y(r, c);
            for (int c = 0; c < g.cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - d) / tau;
        }
    });
    return o;
}

Var logsumexp_rows(Tape& t, Var a, double tau) {
    const Tensor2& av = t.val(a);
    Tensor2 out = m::logsumexp_rows(av, tau);
    Tensor2 p = m::softmax_rows(av, tau);
    Var o = t.push("logsumexp_rows", std::move(out));
    t.set_back(o, [o, a, p](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        Tensor2& ga = tp.grad(a);
        for (int r = 0; r < p.rows; ++r)
            for (int c = 0; c < p.cols; ++c) ga(r, c) += g(r, 0) * p(r, c);
    });
    return o;
}

Var entropy_rows(Tape& t, Var a, double tau) {
    const Tensor2& av = t.val(a);
    Tensor2 p = m::softmax_rows(av, tau);
    Tensor2 out(av.rows, 1);
    for (int r = 0; r < av.rows; ++r) {
        double h = 0.0;
        for (int c = 0; c < av.cols; ++c)
            if (p(r, c) > 0.0) h -= p(r, c) * std::log(p(r, c));
        out(r, 0) = h;
    }
    Var o = t.push("entropy_rows", std::move(out));
    t.set_back(o, [o, a, p, tau](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& h = tp.val(o);
        Tensor2& ga = tp.grad(a);
        for (int r = 0; r < p.rows; ++r)
            for (int c = 0; c < p.cols; ++c) {
                double pc = p(r, c);
                if (pc <= 0.0) continue;
                ga(r, c) -= g(r, 0) * pc * (std::log(pc) + h(r, 0)) / tau;
            }
    });
    return o;
}

Var cosine_pairwise(Tape& t, Var a, Var b) {
    const Tensor2& av = t.val(a);
    const Tensor2& bv = t.val(b);
    if (av.cols != bv.cols) throw DimError("cosine_pairwise: column mismatch");
    int ma = av.rows, nb = bv.rows, d = av.cols;

    std::vector<double> na(ma), nbv(nb);
    for (int i = 0; i < ma; ++i) na[i] = m::norm(av.row(i), d);
    for (int j = 0; j < nb; ++j) nbv[j] = m::norm(bv.row(j), d);

    Tensor2 out(ma, nb);
    for (int i = 0; i < ma; ++i)
        for (int j = 0; j < nb; ++j) {
            if (na[i] < m::kNormEps || nbv[j] < m::kNormEps)
                out(i, j) = 0.0;
            else
                out(i, j) = std::clamp(
                    m::dot(av.row(i), bv.row(j), d) / (na[i] * nbv[j]), -1.0, 1.0);
        }

    Var o = t.push("cosine_pairwise", std::move(out));
    t.set_back(o, [o, a, b, na, nbv](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& av = tp.val(a);
        const Tensor2& bv = tp.val(b);
        const Tensor2& cv = tp.val(o);
        Tensor2& ga = tp.grad(a);
        Tensor2& gb = tp.grad(b);
        int d = av.cols;
        for (int i = 0; i < av.rows; ++i) {
            if (na[i] < m::kNormEps) continue;
            for (int j = 0; j < bv.rows; ++j) {
                if (nbv[j] < m::kNormEps) continue;
                double gij = g(i, j);
                if (gij == 0.0) continue;
                double cij = cv(i, j);
                const double* ar = av.row(i);
                const double* br = bv.row(j);
                double* gar = ga.row(i);
                double* gbr = gb.row(j);
                for (int k = 0; k < d; ++k) {
                    double ahat = ar[k] / na[i];
                    double bhat = br[k] / nbv[j];
                    gar[k] += gij * (bhat - cij * ahat) / na[i];
                    gbr[k] += gij * (ahat - cij * bhat) / nbv[j];
                }
            }
        }
    });
    return o;
}

Var l2norm_rows(Tape& t, Var a) {
    const Tensor2& av = t.val(a);
    Tensor2 out = av;
    std::vector<double> norms(av.rows);
    for (int r = 0; r < av.rows; ++r) {
        double n = m::norm(av.row(r), av.cols);
        norms[r] = n;
        if (n < m::kNormEps) {
            std::fill(out.row(r), out.row(r) + out.cols, 0.0);
            if (out.cols > 0) out(r, 0) = 1.0;
        } else {
            for (int c = 0; c < av.cols; ++c) out(r, c) /= n;
        }
    }
    Var o = t.push("l2norm_rows", std::move(out));
    t.set_back(o, [o, a, norms](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        const Tensor2& y = tp.val(o);
        Tensor2& ga = tp.grad(a);
        for (int r = 0; r < g.rows; ++r) {
            if (norms[r] < m::kNormEps) continue;
            double d = 0.0;
            for (int c = 0; c < g.cols; ++c) d += g(r, c) * y(r, c);
            for (int c = 0; c < g.cols; ++c)
                ga(r, c) += (g(r, c) - d * y(r, c)) / norms[r];
        }
    });
    return o;
}

Var straight_through(Tape& t, Var soft) {
    const Tensor2& sv = t.val(soft);
    Tensor2 out(sv.rows, sv.cols);
    for (int r = 0; r < sv.rows; ++r) out(r, m::argmax(sv.row(r), sv.cols)) = 1.0;
    Var o = t.push("straight_through", std::move(out));
    t.set_back(o, [o, soft](Tape& tp) { accum(tp.grad(soft), tp.grad(o)); });
    return o;
}

Var stack_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw ParamError("stack_rows: no inputs");
    int cols = t.val(parts[0]).cols;
    int rows = 0;
    for (Var p : parts) {
        if (t.val(p).cols != cols) throw DimError("stack_rows: column mismatch");
        rows += t.val(p).rows;
    }
    Tensor2 out(rows, cols);
    std::vector<int> offsets;
    int at = 0;
    for (Var p : parts) {
        const Tensor2& pv = t.val(p);
        offsets.push_back(at);
        std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + size_t(at) * cols);
        at += pv.rows;
    }
    Var o = t.push("stack_rows", std::move(out));
    t.set_back(o, [o, parts, offsets](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        for (size_t k = 0; k < parts.size(); ++k) {
            Tensor2& gp = tp.grad(parts[k]);
            for (int r = 0; r < gp.rows; ++r)
                for (int c = 0; c < gp.cols; ++c) gp(r, c) += g(offsets[k] + r, c);
        }
    });
    return o;
}

Var row_sum(Tape& t, Var a) {
    const Tensor2& av = t.val(a);
    Tensor2 out(av.rows, 1);
    for (int r = 0; r < av.rows; ++r)
        for (int c = 0; c < av.cols; ++c) out(r, 0) += av(r, c);
    Var o = t.push("row_sum", std::move(out));
    t.set_back(o, [o, a](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        Tensor2& ga = tp.grad(a);
        for (int r = 0; r < ga.rows; ++r)
            for (int c = 0; c < ga.cols; ++c) ga(r, c) += g(r, 0);
    });
    return o;
}

Var col_sum(Tape& t, Var a) {
    const Tensor2& av = t.val(a);
    Tensor2 out(1, av.cols);
    for (int r = 0; r < av.rows; ++r)
        for (int c = 0; c < av.cols; ++c) out(0, c) += av(r, c);
    Var o = t.push("col_sum", std::move(out));
    t.set_back(o, [o, a](Tape& tp) {
        const Tensor2& g = tp.grad(o);
        Tensor2& ga = tp.grad(a);
        for (int r = 0; r < ga.rows; ++r)
            for (int c = 0; c < ga.cols; ++c) ga(r, c) += g(0, c);
    });
    return o;
}

Var sum_all(Tape& t, Var a) {
    const Tensor2& av = t.val(a);
    Tensor2 out(1, 1);
    for (double v : av.data) out(0, 0) += v;
    Var o = t.push("sum_all", std::move(out));
    t.set_back(o, [o, a](Tape& tp) {
        double g = tp.grad(o)(0, 0);
        Tensor2& ga = tp.grad(a);
        for (auto& v : ga.data) v += g;
    });
    return o;
}

Var mean_all(Tape& t, Var a) {
    const Tensor2& av = t.val(a);
    if (av.data.empty()) throw ParamError("mean_all: empty tensor");
    Tensor2 out(1, 1);
    for (double v : av.data) out(0, 0) += v;
    double n = static_cast<double>(av.data.size());
    out(0, 0) /= n;
    Var o = t.push("mean_all", std::move(out));
    t.set_back(o, [o, a, n](Tape& tp) {
        double g = tp.grad(o)(0, 0) / n;
        Tensor2& ga = tp.grad(a);
        for (auto& v : ga.data) v += g;
    });
    return o;
}

}  // namespace openparts::ad
