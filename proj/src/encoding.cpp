#include "flexicrime/encoding.hpp"

#include <cmath>
#include <stdexcept>

namespace flexicrime {

ad::Var temporal_encode(Binder& bind, const TemporalEncoderParams& p, ad::Var t_scalar) {
    ad::Tape& t = bind.tape();
    ad::Var phase = t.add(t.mul_scalar(bind(p.omega), t_scalar), bind(p.alpha));
    if (p.dim == 1) return phase;
    ad::Var head = t.slice(phase, 0, 1);
    ad::Var rest = t.sin(t.slice(phase, 1, p.dim - 1));
    return t.concat(head, rest);
}

ad::Var temporal_encode(Binder& bind, const TemporalEncoderParams& p, double t) {
    return temporal_encode(bind, p, bind.tape().constant_scalar(t));
}

std::vector<double> temporal_encode_value(const TemporalEncoderParams& p, double t) {
    std::vector<double> v(static_cast<size_t>(p.dim));
    v[0] = p.omega.w[0] * t + p.alpha.w[0];
    for (int j = 1; j < p.dim; ++j) v[static_cast<size_t>(j)] = std::sin(p.omega.w[j] * t + p.alpha.w[j]);
    return v;
}

std::vector<double> positional_encode(double pos, int half_dim) {
    std::vector<double> v(static_cast<size_t>(half_dim));
    for (int j = 0; j < half_dim; ++j) {
        int k = j / 2;
        double freq = std::pow(10000.0, 2.0 * k / half_dim);
        v[static_cast<size_t>(j)] = (j % 2 == 0) ? std::sin(pos / freq) : std::cos(pos / freq);
    }
    return v;
}

std::vector<double> spatial_encode(double x, double y, int dim) {
    int half = dim / 2;
    std::vector<double> v = positional_encode(x, half);
    std::vector<double> vy = positional_encode(y, half);
    v.insert(v.end(), vy.begin(), vy.end());
    return v;
}

ad::Var target_aware_encode(Binder& bind, const TargetAwareParams& p, ad::Var g_star,
                            ad::Var g_event, int c_star, int c_event) {
    ad::Tape& t = bind.tape();
    if (g_star.size != p.embed_dim || g_event.size != p.embed_dim)
        throw std::invalid_argument("target_aware_encode: grid embedding dimension mismatch");
    if (c_star < 0 || c_star >= p.n_types || c_event < 0 || c_event >= p.n_types)
        throw std::invalid_argument("target_aware_encode: type id out of range");
    ad::Var v_loc =
        t.matvec(bind(p.w_loc), t.concat(g_star, g_event), p.out_half, 2 * p.embed_dim);
    return t.concat(v_loc, type_encode(bind, p, c_star, c_event));
}

ad::Var type_encode(Binder& bind, const TargetAwareParams& p, int c_star, int c_event) {
    ad::Tape& t = bind.tape();
    std::vector<double> onehot(static_cast<size_t>(2 * p.n_types), 0.0);
    onehot[static_cast<size_t>(c_star)] = 1.0;
    onehot[static_cast<size_t>(p.n_types + c_event)] = 1.0;
    return t.matvec(bind(p.w_type), t.constant(onehot), p.out_half, 2 * p.n_types);
}

} // namespace flexicrime
