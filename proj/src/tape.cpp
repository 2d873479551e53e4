#include "flexicrime/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "flexicrime/numeric.hpp"

namespace flexicrime::ad {

using flexicrime::stable_sigmoid;
using flexicrime::stable_softplus;

Tape::Tape() {
    nodes_.reserve(1024);
    val_.reserve(16384);
    extra_.reserve(256);
    extra_d_.reserve(64);
}

void Tape::reset() {
    nodes_.clear();
    val_.clear();
    grad_.clear();
    extra_.clear();
    extra_d_.clear();
}

Var Tape::alloc(Op op, int size) {
    Node n;
    n.op = op;
    n.off = static_cast<int32_t>(val_.size());
    n.size = size;
    val_.resize(val_.size() + static_cast<size_t>(size), 0.0);
    nodes_.push_back(n);
    return Var{static_cast<int32_t>(nodes_.size()) - 1, size};
}

std::span<const double> Tape::value(Var v) const {
    const Node& n = node(v);
    return {val_.data() + n.off, static_cast<size_t>(n.size)};
}

std::span<const double> Tape::grad(Var v) const {
    const Node& n = node(v);
    return {grad_.data() + n.off, static_cast<size_t>(n.size)};
}

Var Tape::constant(std::span<const double> v) {
    Var out = alloc(Op::kConst, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), out_ptr(nodes_.back()));
    return out;
}

Var Tape::constant_scalar(double x) { return constant({&x, 1}); }

Var Tape::leaf(std::span<const double> v) {
    Var out = alloc(Op::kLeaf, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), out_ptr(nodes_.back()));
    return out;
}

Var Tape::zeros(int n) { return alloc(Op::kConst, n); }

Var Tape::add(Var a, Var b) {
    if (a.size != b.size) throw std::invalid_argument("tape add: size mismatch");
    Var out = alloc(Op::kAdd, a.size);
    Node& n = nodes_.back();
    n.a = a.id;
    n.b = b.id;
    const double* pa = in_ptr(a.id);
    const double* pb = in_ptr(b.id);
    double* po = out_ptr(n);
    for (int i = 0; i < a.size; ++i) po[i] = pa[i] + pb[i];
    return out;
}

Var Tape::sub(Var a, Var b) {
    if (a.size != b.size) throw std::invalid_argument("tape sub: size mismatch");
    Var out = alloc(Op::kSub, a.size);
    Node& n = nodes_.back();
    n.a = a.id;
    n.b = b.id;
    const double* pa = in_ptr(a.id);
    const double* pb = in_ptr(b.id);
    double* po = out_ptr(n);
    for (int i = 0; i < a.size; ++i) po[i] = pa[i] - pb[i];
    return out;
}

Var Tape::mul(Var a, Var b) {
    if (a.size != b.size) throw std::invalid_argument("tape mul: size mismatch");
    Var out = alloc(Op::kMul, a.size);
    Node& n = nodes_.back();
    n.a = a.id;
    n.b = b.id;
    const double* pa = in_ptr(a.id);
    const double* pb = in_ptr(b.id);
    double* po = out_ptr(n);
    for (int i = 0; i < a.size; ++i) po[i] = pa[i] * pb[i];
    return out;
}

Var Tape::scale(Var a, double c) {
    Var out = alloc(Op::kScale, a.size);
    Node& n = nodes_.back();
    n.a = a.id;
    n.db = static_cast<int32_t>(extra_d_.size());
    extra_d_.push_back(c);
    const double* pa = in_ptr(a.id);
    double* po = out_ptr(n);
    for (int i = 0; i < a.size; ++i) po[i] = c * pa[i];
    return out;
}

Var Tape::offset(Var a, double c) {
    Var out = alloc(Op::kOffset, a.size);
    Node& n = nodes_.back();
    n.a = a.id;
    const double* pa = in_ptr(a.id);
    double* po = out_ptr(n);
    for (int i = 0; i < a.size; ++i) po[i] = pa[i] + c;
    return out;
}

Var Tape::mul_scalar(Var a, Var s) {
    if (s.size != 1) throw std::invalid_argument("tape mul_scalar: scalar must have size 1");
    Var out = alloc(Op::kMulScalar, a.size);
    Node& n = nodes_.back();
    n.a = a.id;
    n.b = s.id;
    const double* pa = in_ptr(a.id);
    double sv = *in_ptr(s.id);
    double* po = out_ptr(n);
    for (int i = 0; i < a.size; ++i) po[i] = pa[i] * sv;
    return out;
}

Var Tape::matvec(Var w, Var x, int rows, int cols) {
    if (w.size != rows * cols || x.size != cols)
        throw std::invalid_argument("tape matvec: dimension mismatch");
    Var out = alloc(Op::kMatVec, rows);
    Node& n = nodes_.back();
    n.a = w.id;
    n.b = x.id;
    n.rows = rows;
    n.cols = cols;
    const double* pw = in_ptr(w.id);
    const double* px = in_ptr(x.id);
    double* po = out_ptr(n);
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* row = pw + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += row[c] * px[c];
        po[r] = acc;
    }
    return out;
}

#define FLEXICRIME_UNARY(NAME, OP, EXPR)                  \
    Var Tape::NAME(Var a) {                               \
        Var out = alloc(OP, a.size);                      \
        Node& n = nodes_.back();                          \
        n.a = a.id;                                       \
        const double* pa = in_ptr(a.id);                  \
        double* po = out_ptr(n);                          \
        for (int i = 0; i < a.size; ++i) po[i] = (EXPR);  \
        return out;                                       \
    }

FLEXICRIME_UNARY(tanh, Op::kTanh, std::tanh(pa[i]))
FLEXICRIME_UNARY(sigmoid, Op::kSigmoid, stable_sigmoid(pa[i]))
FLEXICRIME_UNARY(softplus, Op::kSoftplus, stable_softplus(pa[i]))
FLEXICRIME_UNARY(exp, Op::kExp, std::exp(pa[i]))
FLEXICRIME_UNARY(log, Op::kLog, std::log(pa[i]))
FLEXICRIME_UNARY(sin, Op::kSin, std::sin(pa[i]))

#undef FLEXICRIME_UNARY

Var Tape::concat(std::span<const Var> parts) {
    int total = 0;
    for (const Var& p : parts) total += p.size;
    Var out = alloc(Op::kConcat, total);
    Node& n = nodes_.back();
    n.xb = static_cast<int32_t>(extra_.size());
    n.xn = static_cast<int32_t>(parts.size());
    for (const Var& p : parts) extra_.push_back(p.id);
    double* po = out_ptr(n);
    for (const Var& p : parts) {
        const double* pp = in_ptr(p.id);
        std::memcpy(po, pp, sizeof(double) * static_cast<size_t>(p.size));
        po += p.size;
    }
    return out;
}

Var Tape::concat(Var a, Var b) {
    Var parts[2] = {a, b};
    return concat(std::span<const Var>(parts, 2));
}

Var Tape::concat(Var a, Var b, Var c) {
    Var parts[3] = {a, b, c};
    return concat(std::span<const Var>(parts, 3));
}

Var Tape::slice(Var a, int pos, int len) {
    if (pos < 0 || len < 0 || pos + len > a.size)
        throw std::invalid_argument("tape slice: out of range");
    Var out = alloc(Op::kSlice, len);
    Node& n = nodes_.back();
    n.a = a.id;
    n.rows = pos;
    const double* pa = in_ptr(a.id);
    std::memcpy(out_ptr(n), pa + pos, sizeof(double) * static_cast<size_t>(len));
    return out;
}

Var Tape::sum(Var a) {
    Var out = alloc(Op::kSum, 1);
    Node& n = nodes_.back();
    n.a = a.id;
    const double* pa = in_ptr(a.id);
    double acc = 0.0;
    for (int i = 0; i < a.size; ++i) acc += pa[i];
    *out_ptr(n) = acc;
    return out;
}

Var Tape::dot(Var a, Var b) {
    if (a.size != b.size) throw std::invalid_argument("tape dot: size mismatch");
    Var out = alloc(Op::kDot, 1);
    Node& n = nodes_.back();
    n.a = a.id;
    n.b = b.id;
    const double* pa = in_ptr(a.id);
    const double* pb = in_ptr(b.id);
    double acc = 0.0;
    for (int i = 0; i < a.size; ++i) acc += pa[i] * pb[i];
    *out_ptr(n) = acc;
    return out;
}

Var Tape::softmax(Var a) {
    Var out = alloc(Op::kSoftmax, a.size);
    Node& n = nodes_.back();
    n.a = a.id;
    const double* pa = in_ptr(a.id);
    double* po = out_ptr(n);
    double mx = pa[0];
    for (int i = 1; i < a.size; ++i) mx = std::max(mx, pa[i]);
    double z = 0.0;
    for (int i = 0; i < a.size; ++i) {
        po[i] = std::exp(pa[i] - mx);
        z += po[i];
    }
    for (int i = 0; i < a.size; ++i) po[i] /= z;
    return out;
}

Var Tape::weighted_sum(Var w, std::span<const Var> values) {
    if (static_cast<size_t>(w.size) != values.size())
        throw std::invalid_argument("tape weighted_sum: weight count mismatch");
    if (values.empty()) throw std::invalid_argument("tape weighted_sum: empty values");
    int dim = values[0].size;
    for (const Var& v : values)
        if (v.size != dim) throw std::invalid_argument("tape weighted_sum: ragged values");
    Var out = alloc(Op::kWeightedSum, dim);
    Node& n = nodes_.back();
    n.a = w.id;
    n.xb = static_cast<int32_t>(extra_.size());
    n.xn = static_cast<int32_t>(values.size());
    for (const Var& v : values) extra_.push_back(v.id);
    const double* pw = in_ptr(w.id);
    double* po = out_ptr(n);
    for (size_t i = 0; i < values.size(); ++i) {
        const double* pv = in_ptr(values[i].id);
        for (int d = 0; d < dim; ++d) po[d] += pw[i] * pv[d];
    }
    return out;
}

Var Tape::lincomb(std::span<const double> coeffs, std::span<const Var> xs) {
    if (coeffs.size() != xs.size() || xs.empty())
        throw std::invalid_argument("tape lincomb: operand mismatch");
    int dim = xs[0].size;
    for (const Var& v : xs)
        if (v.size != dim) throw std::invalid_argument("tape lincomb: ragged operands");
    Var out = alloc(Op::kLincomb, dim);
    Node& n = nodes_.back();
    n.xb = static_cast<int32_t>(extra_.size());
    n.xn = static_cast<int32_t>(xs.size());
    n.db = static_cast<int32_t>(extra_d_.size());
    for (const Var& v : xs) extra_.push_back(v.id);
    for (double c : coeffs) extra_d_.push_back(c);
    double* po = out_ptr(n);
    for (size_t i = 0; i < xs.size(); ++i) {
        const double* pv = in_ptr(xs[i].id);
        double c = coeffs[i];
        for (int d = 0; d < dim; ++d) po[d] += c * pv[d];
    }
    return out;
}

void Tape::backward(Var out) {
    if (out.size != 1) throw std::invalid_argument("tape backward: output must be scalar");
    grad_.assign(val_.size(), 0.0);
    grad_[node(out).off] = 1.0;

    for (size_t idx = nodes_.size(); idx-- > 0;) {
        const Node& n = nodes_[idx];
        const double* g = grad_.data() + n.off;
        switch (n.op) {
        case Op::kConst:
        case Op::kLeaf:
            break;
        case Op::kAdd: {
            double* ga = grad_.data() + nodes_[n.a].off;
            double* gb = grad_.data() + nodes_[n.b].off;
            for (int i = 0; i < n.size; ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
            break;
        }
        case Op::kSub: {
            double* ga = grad_.data() + nodes_[n.a].off;
            double* gb = grad_.data() + nodes_[n.b].off;
            for (int i = 0; i < n.size; ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
            break;
        }
        case Op::kMul: {
            double* ga = grad_.data() + nodes_[n.a].off;
            double* gb = grad_.data() + nodes_[n.b].off;
            const double* va = in_ptr(n.a);
            const double* vb = in_ptr(n.b);
            for (int i = 0; i < n.size; ++i) {
                ga[i] += g[i] * vb[i];
                gb[i] += g[i] * va[i];
            }
            break;
        }
        case Op::kScale: {
            double* ga = grad_.data() + nodes_[n.a].off;
            double c = extra_d_[static_cast<size_t>(n.db)];
            for (int i = 0; i < n.size; ++i) ga[i] += c * g[i];
            break;
        }
        case Op::kOffset: {
            double* ga = grad_.data() + nodes_[n.a].off;
            for (int i = 0; i < n.size; ++i) ga[i] += g[i];
            break;
        }
        case Op::kMulScalar: {
            double* ga = grad_.data() + nodes_[n.a].off;
            double* gs = grad_.data() + nodes_[n.b].off;
            const double* va = in_ptr(n.a);
            double sv = *in_ptr(n.b);
            double acc = 0.0;
            for (int i = 0; i < n.size; ++i) {
                ga[i] += g[i] * sv;
                acc += g[i] * va[i];
            }
            gs[0] += acc;
            break;
        }
        case Op::kMatVec: {
            double* gw = grad_.data() + nodes_[n.a].off;
            double* gx = grad_.data() + nodes_[n.b].off;
            const double* vw = in_ptr(n.a);
            const double* vx = in_ptr(n.b);
            for (int r = 0; r < n.rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                double* gwrow = gw + static_cast<size_t>(r) * n.cols;
                const double* wrow = vw + static_cast<size_t>(r) * n.cols;
                for (int c = 0; c < n.cols; ++c) {
                    gwrow[c] += gr * vx[c];
                    gx[c] += gr * wrow[c];
                }
            }
            break;
        }
        case Op::kTanh: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const double* y = val_.data() + n.off;
            for (int i = 0; i < n.size; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
            break;
        }
        case Op::kSigmoid: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const double* y = val_.data() + n.off;
            for (int i = 0; i < n.size; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
            break;
        }
        case Op::kSoftplus: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const double* x = in_ptr(n.a);
            for (int i = 0; i < n.size; ++i) ga[i] += g[i] * stable_sigmoid(x[i]);
            break;
        }
        case Op::kExp: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const double* y = val_.data() + n.off;
            for (int i = 0; i < n.size; ++i) ga[i] += g[i] * y[i];
            break;
        }
        case Op::kLog: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const double* x = in_ptr(n.a);
            for (int i = 0; i < n.size; ++i) ga[i] += g[i] / x[i];
            break;
        }
        case Op::kSin: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const double* x = in_ptr(n.a);
            for (int i = 0; i < n.size; ++i) ga[i] += g[i] * std::cos(x[i]);
            break;
        }
        case Op::kConcat: {
            const double* gp = g;
            for (int k = 0; k < n.xn; ++k) {
                int32_t id = extra_[static_cast<size_t>(n.xb) + k];
                const Node& part = nodes_[static_cast<size_t>(id)];
                double* gpart = grad_.data() + part.off;
                for (int i = 0; i < part.size; ++i) gpart[i] += gp[i];
                gp += part.size;
            }
            break;
        }
        case Op::kSlice: {
            double* ga = grad_.data() + nodes_[n.a].off + n.rows;
            for (int i = 0; i < n.size; ++i) ga[i] += g[i];
            break;
        }
        case Op::kSum: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const Node& a = nodes_[n.a];
            for (int i = 0; i < a.size; ++i) ga[i] += g[0];
            break;
        }
        case Op::kDot: {
            double* ga = grad_.data() + nodes_[n.a].off;
            double* gb = grad_.data() + nodes_[n.b].off;
            const double* va = in_ptr(n.a);
            const double* vb = in_ptr(n.b);
            const Node& a = nodes_[n.a];
            for (int i = 0; i < a.size; ++i) {
                ga[i] += g[0] * vb[i];
                gb[i] += g[0] * va[i];
            }
            break;
        }
        case Op::kSoftmax: {
            double* ga = grad_.data() + nodes_[n.a].off;
            const double* y = val_.data() + n.off;
            double dotyg = 0.0;
            for (int i = 0; i < n.size; ++i) dotyg += y[i] * g[i];
            for (int i = 0; i < n.size; ++i) ga[i] += y[i] * (g[i] - dotyg);
            break;
        }
        case Op::kWeightedSum: {
            double* gw = grad_.data() + nodes_[n.a].off;
            const double* vw = in_ptr(n.a);
            for (int k = 0; k < n.xn; ++k) {
                int32_t id = extra_[static_cast<size_t>(n.xb) + k];
                const Node& vn = nodes_[static_cast<size_t>(id)];
                double* gv = grad_.data() + vn.off;
                const double* vv = val_.data() + vn.off;
                double acc = 0.0;
                for (int i = 0; i < n.size; ++i) {
                    gv[i] += vw[k] * g[i];
                    acc += vv[i] * g[i];
                }
                gw[k] += acc;
            }
            break;
        }
        case Op::kLincomb: {
            for (int k = 0; k < n.xn; ++k) {
                int32_t id = extra_[static_cast<size_t>(n.xb) + k];
                double c = extra_d_[static_cast<size_t>(n.db) + k];
                double* gx = grad_.data() + nodes_[static_cast<size_t>(id)].off;
                for (int i = 0; i < n.size; ++i) gx[i] += c * g[i];
            }
            break;
        }
        }
    }
}

} // namespace flexicrime::ad
