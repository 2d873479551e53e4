#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace flexicrime::ad {

// Handle to a node on a Tape. Nodes are dense double vectors.
struct Var {
    int32_t id = -1;
    int32_t size = 0;
    bool valid() const { return id >= 0; }
};

// Reverse-mode automatic differentiation over small dense vectors.
//
// Values are computed eagerly as operations are recorded, so intermediate
// results can be inspected while the graph is being built. backward() runs a
// single reverse sweep from a scalar output and leaves gradients for every
// node, including leaves. reset() keeps the arenas allocated so a tape can be
// reused across many small evaluations without reallocating.
class Tape {
public:
    Tape();

    // Leaves. constant() nodes participate in forward values only in the
    // sense that no caller reads their gradient; the sweep still fills them.
    Var constant(std::span<const double> v);
    Var constant_scalar(double x);
    Var leaf(std::span<const double> v);
    Var zeros(int n);

    // Elementwise and linear ops.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);      // hadamard
    Var scale(Var a, double c); // c * a
    Var offset(Var a, double c);
    Var mul_scalar(Var a, Var s); // a * s[0], s is a 1-vector
    Var matvec(Var w, Var x, int rows, int cols); // w row-major rows x cols
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var sin(Var a);

    // Structure ops.
    Var concat(std::span<const Var> parts);
    Var concat(Var a, Var b);
    Var concat(Var a, Var b, Var c);
    Var slice(Var a, int pos, int len);

    // Reductions and attention building blocks.
    Var sum(Var a);
    Var dot(Var a, Var b);
    Var softmax(Var a);
    // sum_i w[i] * values[i]; w has size values.size(), all values same dim.
    Var weighted_sum(Var w, std::span<const Var> values);
    // sum_i coeffs[i] * xs[i] with compile-time-constant coefficients.
    Var lincomb(std::span<const double> coeffs, std::span<const Var> xs);

    double value0(Var v) const { return val_[node(v).off]; }
    std::span<const double> value(Var v) const;

    // Seeds d(out)/d(out)=1 on a scalar node and sweeps backwards.
    void backward(Var out);
    std::span<const double> grad(Var v) const;

    std::size_t node_count() const { return nodes_.size(); }
    void reset();

private:
    enum class Op : uint8_t {
        kConst, kLeaf, kAdd, kSub, kMul, kScale, kOffset, kMulScalar,
        kMatVec, kTanh, kSigmoid, kSoftplus, kExp, kLog, kSin,
        kConcat, kSlice, kSum, kDot, kSoftmax, kWeightedSum, kLincomb,
    };
    struct Node {
        Op op;
        int32_t a = -1, b = -1;
        int32_t off = 0, size = 0;  // slot in the value/grad arenas
        int32_t xb = 0, xn = 0;     // extra int operands (concat/weighted_sum)
        int32_t db = 0;             // extra double operands (lincomb, scale const)
        int32_t rows = 0, cols = 0; // matvec dims; also slice pos
    };

    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
    Var alloc(Op op, int size);
    double* out_ptr(const Node& n) { return val_.data() + n.off; }
    const double* in_ptr(int32_t id) const { return val_.data() + nodes_[static_cast<size_t>(id)].off; }

    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> grad_;
    std::vector<int32_t> extra_;
    std::vector<double> extra_d_;
};

} // namespace flexicrime::ad
