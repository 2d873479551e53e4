#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flexicrime/rng.hpp"
#include "flexicrime/tape.hpp"

namespace flexicrime {

// One named, flat parameter vector. Gradients accumulate alongside.
struct ParamBlock {
    std::string name;
    std::vector<double> w;
    std::vector<double> g;

    void resize(size_t n) {
        w.assign(n, 0.0);
        g.assign(n, 0.0);
    }
    void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
    size_t size() const { return w.size(); }
};

// Uniform(-scale, scale) init from a stream derived from (seed, block name),
// so initialization does not depend on construction order.
inline void init_uniform(ParamBlock& b, uint64_t seed, double scale) {
    Rng rng(mix_seed(seed, hash_str(b.name.c_str())));
    for (double& x : b.w) x = rng.uniform(-scale, scale);
}

// Binds parameter blocks onto a tape, as differentiable leaves or frozen
// constants, memoized so every use of a block within one graph shares a node
// (gradients then accumulate on that single leaf).
class Binder {
public:
    Binder(ad::Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

    ad::Var operator()(const ParamBlock& b) {
        auto it = cache_.find(&b);
        if (it != cache_.end()) return it->second;
        ad::Var v = trainable_ ? tape_.leaf(b.w) : tape_.constant(b.w);
        cache_.emplace(&b, v);
        return v;
    }

    bool trainable() const { return trainable_; }
    ad::Tape& tape() { return tape_; }

    // After backward(): adds every bound block's gradient into `sink`, laid
    // out per `offsets` (block pointer -> offset in the flat sink).
    void collect(const std::unordered_map<const ParamBlock*, size_t>& offsets,
                 std::span<double> sink) const {
        for (const auto& [blk, var] : cache_) {
            auto it = offsets.find(blk);
            if (it == offsets.end()) continue;
            auto g = tape_.grad(var);
            double* dst = sink.data() + it->second;
            for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
    }

    // Adds gradients directly into each block's own .g accumulator.
    void accumulate_into_blocks() const {
        for (const auto& [blk, var] : cache_) {
            auto g = tape_.grad(var);
            auto* mut = const_cast<ParamBlock*>(blk);
            for (size_t i = 0; i < g.size(); ++i) mut->g[i] += g[i];
        }
    }

private:
    ad::Tape& tape_;
    bool trainable_;
    std::unordered_map<const ParamBlock*, ad::Var> cache_;
};

// An ordered set of trainable blocks with a flat layout; the unit the
// optimizer and the deterministic batch reduction work over.
struct BlockSet {
    std::vector<ParamBlock*> blocks;
    std::unordered_map<const ParamBlock*, size_t> offsets;
    size_t total = 0;

    void add(ParamBlock& b) {
        offsets.emplace(&b, total);
        blocks.push_back(&b);
        total += b.size();
    }

    // theta <- (1 - lr*decay) * theta - lr * grad
    void sgd_step(std::span<const double> grad, double lr, double decay) {
        size_t off = 0;
        for (ParamBlock* b : blocks) {
            for (size_t i = 0; i < b->w.size(); ++i, ++off)
                b->w[i] = b->w[i] * (1.0 - lr * decay) - lr * grad[off];
        }
    }

    void snapshot(std::vector<double>& out) const {
        out.clear();
        out.reserve(total);
        for (const ParamBlock* b : blocks) out.insert(out.end(), b->w.begin(), b->w.end());
    }

    void restore(std::span<const double> saved) {
        size_t off = 0;
        for (ParamBlock* b : blocks)
            for (size_t i = 0; i < b->w.size(); ++i, ++off) b->w[i] = saved[off];
    }

    double squared_norm() const {
        double acc = 0.0;
        for (const ParamBlock* b : blocks)
            for (double x : b->w) acc += x * x;
        return acc;
    }
};

// FNV-1a over the raw bit pattern of a list of blocks; used to verify the
// freeze contracts between training stages.
inline uint64_t hash_blocks(std::span<const ParamBlock* const> blocks) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const void* p, size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const ParamBlock* b : blocks) {
        feed(b->name.data(), b->name.size());
        feed(b->w.data(), b->w.size() * sizeof(double));
    }
    return h;
}

// Two-layer perceptron with tanh hidden units. hidden == 0 degenerates to a
// single affine map, which the tests use to realize exactly-linear dynamics.
struct Mlp {
    ParamBlock w1, b1, w2, b2;
    int in = 0, hidden = 0, out = 0;

    void configure(const std::string& name, int in_dim, int hidden_dim, int out_dim) {
        in = in_dim;
        hidden = hidden_dim;
        out = out_dim;
        if (hidden > 0) {
            w1.name = name + ".w1";
            w1.resize(static_cast<size_t>(hidden) * in);
            b1.name = name + ".b1";
            b1.resize(static_cast<size_t>(hidden));
            w2.name = name + ".w2";
            w2.resize(static_cast<size_t>(out) * hidden);
            b2.name = name + ".b2";
            b2.resize(static_cast<size_t>(out));
        } else {
            w1.name = name + ".w";
            w1.resize(static_cast<size_t>(out) * in);
            b1.name = name + ".b";
            b1.resize(static_cast<size_t>(out));
        }
    }

    void init(uint64_t seed, double scale) {
        init_uniform(w1, seed, scale);
        if (hidden > 0) init_uniform(w2, seed, scale);
        // biases start at zero
    }

    ad::Var forward(Binder& bind, ad::Var x) const {
        ad::Tape& t = bind.tape();
        if (hidden > 0) {
            ad::Var h = t.tanh(t.add(t.matvec(bind(w1), x, hidden, in), bind(b1)));
            return t.add(t.matvec(bind(w2), h, out, hidden), bind(b2));
        }
        return t.add(t.matvec(bind(w1), x, out, in), bind(b1));
    }

    // Forward value together with the Jacobian-vector product along a fixed
    // input direction, sharing the hidden activations. Used for the exact
    // trace of the spatial flow Jacobian.
    std::pair<ad::Var, ad::Var> forward_with_jvp(Binder& bind, ad::Var x,
                                                 std::span<const double> direction) const {
        ad::Tape& t = bind.tape();
        ad::Var dir = t.constant(direction);
        if (hidden > 0) {
            ad::Var pre = t.add(t.matvec(bind(w1), x, hidden, in), bind(b1));
            ad::Var act = t.tanh(pre);
            ad::Var y = t.add(t.matvec(bind(w2), act, out, hidden), bind(b2));
            ad::Var tan1 = t.matvec(bind(w1), dir, hidden, in);
            // tanh'(pre) = 1 - act^2
            ad::Var dact = t.offset(t.scale(t.mul(act, act), -1.0), 1.0);
            ad::Var tan2 = t.matvec(bind(w2), t.mul(dact, tan1), out, hidden);
            return {y, tan2};
        }
        ad::Var y = t.add(t.matvec(bind(w1), x, out, in), bind(b1));
        ad::Var jvp = t.matvec(bind(w1), dir, out, in);
        return {y, jvp};
    }

    template <class F>
    void for_each_block(F&& f) {
        f(w1);
        f(b1);
        if (hidden > 0) {
            f(w2);
            f(b2);
        }
    }
    template <class F>
    void for_each_block(F&& f) const {
        f(w1);
        f(b1);
        if (hidden > 0) {
            f(w2);
            f(b2);
        }
    }
};

// Standard GRU cell.
struct GruParams {
    ParamBlock wz, uz, bz, wr, ur, br, wh, uh, bh;
    int in = 0, hidden = 0;

    void configure(const std::string& name, int in_dim, int hidden_dim) {
        in = in_dim;
        hidden = hidden_dim;
        auto setup = [&](ParamBlock& b, const char* suffix, size_t n) {
            b.name = name + suffix;
            b.resize(n);
        };
        size_t wi = static_cast<size_t>(hidden) * in;
        size_t uu = static_cast<size_t>(hidden) * hidden;
        setup(wz, ".wz", wi);
        setup(uz, ".uz", uu);
        setup(bz, ".bz", static_cast<size_t>(hidden));
        setup(wr, ".wr", wi);
        setup(ur, ".ur", uu);
        setup(br, ".br", static_cast<size_t>(hidden));
        setup(wh, ".wh", wi);
        setup(uh, ".uh", uu);
        setup(bh, ".bh", static_cast<size_t>(hidden));
    }

    void init(uint64_t seed, double scale) {
        for_each_block([&](ParamBlock& b) {
            if (b.name.find(".b") == std::string::npos) init_uniform(b, seed, scale);
        });
    }

    // h' = (1-z) .* h + z .* tanh(Wh x + Uh (r .* h) + bh)
    ad::Var step(Binder& bind, ad::Var x, ad::Var h) const {
        ad::Tape& t = bind.tape();
        ad::Var z = t.sigmoid(t.add(t.add(t.matvec(bind(wz), x, hidden, in),
                                          t.matvec(bind(uz), h, hidden, hidden)),
                                    bind(bz)));
        ad::Var r = t.sigmoid(t.add(t.add(t.matvec(bind(wr), x, hidden, in),
                                          t.matvec(bind(ur), h, hidden, hidden)),
                                    bind(br)));
        ad::Var cand = t.tanh(t.add(t.add(t.matvec(bind(wh), x, hidden, in),
                                          t.matvec(bind(uh), t.mul(r, h), hidden, hidden)),
                                    bind(bh)));
        ad::Var keep = t.mul(t.offset(t.scale(z, -1.0), 1.0), h);
        return t.add(keep, t.mul(z, cand));
    }

    template <class F>
    void for_each_block(F&& f) {
        f(wz); f(uz); f(bz);
        f(wr); f(ur); f(br);
        f(wh); f(uh); f(bh);
    }
    template <class F>
    void for_each_block(F&& f) const {
        f(wz); f(uz); f(bz);
        f(wr); f(ur); f(br);
        f(wh); f(uh); f(bh);
    }
};

} // namespace flexicrime
