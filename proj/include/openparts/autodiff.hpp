#pragma once

#include <functional>
#include <vector>

#include "openparts/tensor.hpp"

namespace openparts::ad {

// Handle into a Tape.
struct Var {
    int idx = -1;
};

// Reverse-mode tape over a fixed op vocabulary. Forward values are computed
// eagerly as ops are recorded; backward() replays the tape in reverse and
// accumulates gradients into every node. Recording an op whose name is not
// in the vocabulary throws UnsupportedOpError.
class Tape {
public:
    struct Node {
        Tensor2 value;
        Tensor2 grad;
        std::function<void(Tape&)> back;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var push(const char* op, Tensor2 value);
    void set_back(Var v, std::function<void(Tape&)> back);

    Var leaf(Tensor2 value) { return push("leaf", std::move(value)); }
    Var constant(Tensor2 value) { return push("const", std::move(value)); }

    Tensor2& val(Var v) { return nodes_[v.idx].value; }
    const Tensor2& val(Var v) const { return nodes_[v.idx].value; }
    Tensor2& grad(Var v) { return nodes_[v.idx].grad; }
    const Tensor2& grad(Var v) const { return nodes_[v.idx].grad; }

    // Seeds d(root)/d(root) = 1 and runs every recorded op backward.
    // root must be 1x1. Gradients accumulate; call once per tape.
    void backward(Var root);

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

// Elementwise. `b` may match `a`, or broadcast as a row (1xC), a column
// (Rx1), or a scalar (1x1).
Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);

Var scale(Tape& t, Var a, double c);  // c * a
Var shift(Tape& t, Var a, double c);  // a + c
Var sub(Tape& t, Var a, Var b);       // a + (-1) * b

Var matmul(Tape& t, Var a, Var b, bool trans_a = false, bool trans_b = false);

Var relu(Tape& t, Var a);
Var exp(Tape& t, Var a);
// 1 / (a + delta), the masked-mean denominator
Var recip_shift(Tape& t, Var a, double delta);
// max(0, margin - a)
Var hinge(Tape& t, Var a, double margin);

Var softmax_rows(Tape& t, Var a, double tau);
Var logsumexp_rows(Tape& t, Var a, double tau);
// Shannon entropy of softmax(row / tau), one value per row
Var entropy_rows(Tape& t, Var a, double tau);

// C[i][j] = cosine of (a row i, b row j); degenerate rows contribute zero
// value and zero gradient.
Var cosine_pairwise(Tape& t, Var a, Var b);
// Rows scaled to unit norm; a near-zero row becomes e1 with zero gradient.
Var l2norm_rows(Tape& t, Var a);

// Forward: one-hot of the row argmax (ties to the lower index).
// Backward: identity to the soft input.
Var straight_through(Tape& t, Var soft);

Var stack_rows(Tape& t, const std::vector<Var>& parts);
Var row_sum(Tape& t, Var a);   // (RxC) -> (Rx1)
Var col_sum(Tape& t, Var a);   // (RxC) -> (1xC)
Var sum_all(Tape& t, Var a);   // -> (1x1)
Var mean_all(Tape& t, Var a);  // -> (1x1)

}  // namespace openparts::ad
