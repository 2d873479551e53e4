#pragma once

#include <vector>

#include "flexicrime/params.hpp"
#include "flexicrime/tape.hpp"

namespace flexicrime {

// Continuous-time encoder: v[0] = w0*t + a0, v[j] = sin(wj*t + aj) for j > 0.
// Frequencies are initialized log-uniform over [0.1, 100] per unit day so the
// bank spans multi-day down to sub-hour periods; phases start at zero.
struct TemporalEncoderParams {
    ParamBlock omega, alpha;
    int dim = 0;

    void configure(const std::string& name, int d) {
        dim = d;
        omega.name = name + ".omega";
        omega.resize(static_cast<size_t>(d));
        alpha.name = name + ".alpha";
        alpha.resize(static_cast<size_t>(d));
    }
    void init(uint64_t seed) {
        Rng rng(mix_seed(seed, hash_str(omega.name.c_str())));
        for (double& w : omega.w) w = rng.log_uniform(0.1, 100.0);
        // alpha stays zero
    }
};

ad::Var temporal_encode(Binder& bind, const TemporalEncoderParams& p, ad::Var t_scalar);
ad::Var temporal_encode(Binder& bind, const TemporalEncoderParams& p, double t);
std::vector<double> temporal_encode_value(const TemporalEncoderParams& p, double t);

// Fixed sinusoidal positional encoding from the Transformer.
std::vector<double> positional_encode(double pos, int half_dim);

// v_s = phi(x) || phi(y) with half_dim = dim / 2; coordinates must already be
// standardized.
std::vector<double> spatial_encode(double x, double y, int dim);

// Target-aware event encoding: v_loc = W_loc (g* || g), v_type = W_type (c* || c),
// v_r = v_loc || v_type. Each half has out_half rows.
struct TargetAwareParams {
    ParamBlock w_loc, w_type;
    int out_half = 0;  // rows per half, v_r has 2 * out_half dims
    int embed_dim = 0; // g dimension
    int n_types = 0;

    void configure(const std::string& name, int target_dim, int grid_embed_dim, int types) {
        out_half = target_dim / 2;
        embed_dim = grid_embed_dim;
        n_types = types;
        w_loc.name = name + ".w_loc";
        w_loc.resize(static_cast<size_t>(out_half) * (2 * embed_dim));
        w_type.name = name + ".w_type";
        w_type.resize(static_cast<size_t>(out_half) * (2 * n_types));
    }
    void init(uint64_t seed, double scale) {
        init_uniform(w_loc, seed, scale);
        init_uniform(w_type, seed, scale);
    }
};

ad::Var target_aware_encode(Binder& bind, const TargetAwareParams& p, ad::Var g_star,
                            ad::Var g_event, int c_star, int c_event);

// The type half alone; it conditions the hidden-state jumps.
ad::Var type_encode(Binder& bind, const TargetAwareParams& p, int c_star, int c_event);

} // namespace flexicrime
