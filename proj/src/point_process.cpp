#include "flexicrime/point_process.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "flexicrime/errors.hpp"
#include "flexicrime/numeric.hpp"

namespace flexicrime {

namespace {

constexpr double kLogScaleCap = 2.0;   // bounds the coupling log-scales
constexpr double kMinJumpDet = 1e-12;

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

ad::Var f_t_eval(Binder& b1, const ProcessParams& proc, double tau, ad::Var h, ad::Var dayfeat) {
    ad::Tape& t = b1.tape();
    return proc.f_t.forward(b1, t.concat(t.constant_scalar(tau), h, dayfeat));
}

// forward value of f_s plus the exact trace of its Jacobian w.r.t. the two
// spatial inputs, sharing the hidden activations between the two JVP passes
std::pair<ad::Var, ad::Var> f_s_with_trace(Binder& b1, const ProcessParams& proc, double tau,
                                           ad::Var s, ad::Var h) {
    ad::Tape& t = b1.tape();
    const Mlp& m = proc.f_s;
    ad::Var x = t.concat(t.constant_scalar(tau), s, h);
    std::vector<double> ex(static_cast<size_t>(m.in), 0.0), ey(static_cast<size_t>(m.in), 0.0);
    ex[1] = 1.0; // layout: [tau, x, y, h...]
    ey[2] = 1.0;
    ad::Var dx = t.constant(ex);
    ad::Var dy = t.constant(ey);
    if (m.hidden > 0) {
        ad::Var pre = t.add(t.matvec(b1(m.w1), x, m.hidden, m.in), b1(m.b1));
        ad::Var act = t.tanh(pre);
        ad::Var y = t.add(t.matvec(b1(m.w2), act, m.out, m.hidden), b1(m.b2));
        ad::Var dact = t.offset(t.scale(t.mul(act, act), -1.0), 1.0);
        ad::Var jx = t.matvec(b1(m.w2), t.mul(dact, t.matvec(b1(m.w1), dx, m.hidden, m.in)), m.out,
                              m.hidden);
        ad::Var jy = t.matvec(b1(m.w2), t.mul(dact, t.matvec(b1(m.w1), dy, m.hidden, m.in)), m.out,
                              m.hidden);
        ad::Var tr = t.add(t.slice(jx, 0, 1), t.slice(jy, 1, 1));
        return {y, tr};
    }
    ad::Var y = t.add(t.matvec(b1(m.w1), x, m.out, m.in), b1(m.b1));
    ad::Var jx = t.matvec(b1(m.w1), dx, m.out, m.in);
    ad::Var jy = t.matvec(b1(m.w1), dy, m.out, m.in);
    ad::Var tr = t.add(t.slice(jx, 0, 1), t.slice(jy, 1, 1));
    return {y, tr};
}

} // namespace

double seg_lo(const PackedSequence& seq, int segment) {
    return segment == 0 ? 0.0 : seq.events[static_cast<size_t>(segment) - 1].tod;
}

double seg_hi(const PackedSequence& seq, int segment) {
    return segment < static_cast<int>(seq.events.size())
               ? seq.events[static_cast<size_t>(segment)].tod
               : 1.0;
}

int seg_day(const PackedSequence& seq, int segment) {
    if (seq.events.empty()) return 0;
    if (segment < static_cast<int>(seq.events.size()))
        return seq.events[static_cast<size_t>(segment)].day;
    return seq.events.back().day;
}

ad::Var temporal_intensity(Binder& b1, const ProcessParams& proc, ad::Var h) {
    ad::Tape& t = b1.tape();
    return t.softplus(t.add(t.matvec(b1(proc.lam_w), h, 1, proc.hidden_dim), b1(proc.lam_b)));
}

double temporal_intensity_value(const ProcessParams& proc, std::span<const double> h) {
    double acc = proc.lam_b.w[0];
    for (int i = 0; i < proc.hidden_dim; ++i) acc += proc.lam_w.w[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
    return stable_softplus(acc);
}

SegmentEvolveResult evolve_hidden(Binder& b1, const ProcessParams& proc, ad::Var h,
                                  double tau_from, double tau_to,
                                  std::span<const double> day_features, int steps,
                                  std::optional<ad::Var> lambda_acc) {
    if (tau_to < tau_from)
        throw std::invalid_argument("evolve_hidden: tau_to must not precede tau_from");
    ad::Tape& t = b1.tape();
    SegmentEvolveResult res;
    res.nodes.push_back(h);
    if (lambda_acc) res.lambda_integral = *lambda_acc;

    double width = tau_to - tau_from;
    if (width > 0.0) {
        ad::Var dayf = t.constant(day_features);
        double dt = width / steps;
        for (int m = 0; m < steps; ++m) {
            double tau0 = tau_from + m * dt;
            double taum = tau0 + 0.5 * dt;
            double tau1 = tau0 + dt;
            ad::Var k1 = f_t_eval(b1, proc, tau0, h, dayf);
            ad::Var h2 = [&] {
                double c[] = {1.0, 0.5 * dt};
                ad::Var v[] = {h, k1};
                return t.lincomb(c, v);
            }();
            ad::Var k2 = f_t_eval(b1, proc, taum, h2, dayf);
            ad::Var h3 = [&] {
                double c[] = {1.0, 0.5 * dt};
                ad::Var v[] = {h, k2};
                return t.lincomb(c, v);
            }();
            ad::Var k3 = f_t_eval(b1, proc, taum, h3, dayf);
            ad::Var h4 = [&] {
                double c[] = {1.0, dt};
                ad::Var v[] = {h, k3};
                return t.lincomb(c, v);
            }();
            ad::Var k4 = f_t_eval(b1, proc, tau1, h4, dayf);
            {
                double c[] = {1.0, dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};
                ad::Var v[] = {h, k1, k2, k3, k4};
                h = t.lincomb(c, v);
            }
            if (lambda_acc) {
                ad::Var l1 = temporal_intensity(b1, proc, res.nodes.back());
                ad::Var l2 = temporal_intensity(b1, proc, h2);
                ad::Var l3 = temporal_intensity(b1, proc, h3);
                ad::Var l4 = temporal_intensity(b1, proc, h4);
                double c[] = {1.0, dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};
                ad::Var v[] = {res.lambda_integral, l1, l2, l3, l4};
                res.lambda_integral = t.lincomb(c, v);
            }
            res.nodes.push_back(h);
        }
    }
    res.h_end = h;
    if (!all_finite(t.value(res.h_end)))
        throw NumericError("evolve_hidden: hidden state diverged on [" + std::to_string(tau_from) +
                           ", " + std::to_string(tau_to) + "]");
    return res;
}

ad::Var jump_hidden(Binder& b0, Binder& b1, const Model& model, const ProcessParams& proc,
                    const PackedEvent& event, ad::Var h_pre) {
    ad::Tape& t = b1.tape();
    ad::Var v_type = type_encode(b0, model.theta0.target, proc.self_type, event.type);
    auto dayf = model.day_features(event.day);
    ad::Var x = t.concat(t.constant_scalar(event.tod), v_type, t.constant(dayf));
    return proc.psi_t.step(b1, x, h_pre);
}

PathBuildResult build_hidden_path(Binder& b0, Binder& b1, const Model& model,
                                  const ProcessParams& proc, const PackedSequence& seq, int i0,
                                  int i1, ad::Var h_start, double tau_start, double tau_end,
                                  int steps) {
    ad::Tape& t = b1.tape();
    PathBuildResult res;
    res.first_event = i0;
    ad::Var h = h_start;
    ad::Var lam = t.constant_scalar(0.0);
    double cur = tau_start;

    for (int j = i0; j < i1; ++j) {
        const PackedEvent& ev = seq.events[static_cast<size_t>(j)];
        auto dayf = model.day_features(ev.day);
        SegmentEvolveResult leg = evolve_hidden(b1, proc, h, cur, ev.tod, dayf, steps, lam);
        lam = leg.lambda_integral;
        res.segments.push_back({j, cur, ev.tod, std::move(leg.nodes)});
        res.h_pre.push_back(leg.h_end);
        h = jump_hidden(b0, b1, model, proc, ev, leg.h_end);
        res.h_post.push_back(h);
        cur = ev.tod;
    }
    // trailing continuous leg to tau_end
    {
        auto dayf = model.day_features(seg_day(seq, i1));
        SegmentEvolveResult leg = evolve_hidden(b1, proc, h, cur, tau_end, dayf, steps, lam);
        lam = leg.lambda_integral;
        res.segments.push_back({i1, cur, tau_end, std::move(leg.nodes)});
        h = leg.h_end;
    }
    res.h_end = h;
    res.lambda_integral = lam;
    return res;
}

HiddenAccess::HiddenAccess(ad::Tape& tape, const PackedSequence& seq, int steps)
    : tape_(tape), seq_(seq), steps_(steps) {}

void HiddenAccess::attach_live(const PathBuildResult& built) { live_ = &built; }

const std::vector<ad::Var>* HiddenAccess::live_segment(int segment) const {
    if (!live_) return nullptr;
    int rel = segment - live_->first_event;
    if (rel < 0 || rel >= static_cast<int>(live_->segments.size())) return nullptr;
    return &live_->segments[static_cast<size_t>(rel)].nodes;
}

ad::Var HiddenAccess::h_at(int segment, double tau) {
    const std::vector<ad::Var>* nodes = live_segment(segment);
    if (!nodes) {
        auto it = stored_nodes_.find(segment);
        if (it == stored_nodes_.end()) {
            if (!stored_ || stored_->seg_nodes[static_cast<size_t>(segment)].empty())
                throw NumericError("hidden path: segment " + std::to_string(segment) +
                                   " not available");
            const auto& flat = stored_->seg_nodes[static_cast<size_t>(segment)];
            int dh = stored_->hidden_dim;
            std::vector<ad::Var> consts;
            for (size_t off = 0; off + static_cast<size_t>(dh) <= flat.size(); off += static_cast<size_t>(dh))
                consts.push_back(tape_.constant({flat.data() + off, static_cast<size_t>(dh)}));
            it = stored_nodes_.emplace(segment, std::move(consts)).first;
        }
        nodes = &it->second;
    }
    double lo = seg_lo(seq_, segment), hi = seg_hi(seq_, segment);
    if (nodes->size() == 1 || hi - lo <= 0.0) return nodes->front();
    int grid_steps = static_cast<int>(nodes->size()) - 1;
    double u = (tau - lo) / (hi - lo) * grid_steps;
    u = std::clamp(u, 0.0, static_cast<double>(grid_steps));
    int i = static_cast<int>(u);
    if (i >= grid_steps) return nodes->back();
    double frac = u - i;
    if (frac < 1e-9) return (*nodes)[static_cast<size_t>(i)];
    if (frac > 1.0 - 1e-9) return (*nodes)[static_cast<size_t>(i) + 1];
    uint64_t bits;
    std::memcpy(&bits, &tau, sizeof(bits));
    uint64_t key = mix_seed(static_cast<uint64_t>(segment), bits);
    auto mit = interp_.find(key);
    if (mit != interp_.end()) return mit->second;
    double c[] = {1.0 - frac, frac};
    ad::Var v[] = {(*nodes)[static_cast<size_t>(i)], (*nodes)[static_cast<size_t>(i) + 1]};
    ad::Var out = tape_.lincomb(c, v);
    interp_.emplace(key, out);
    return out;
}

ad::Var HiddenAccess::h_pre_event(int pos) {
    if (live_) {
        int rel = pos - live_->first_event;
        if (rel >= 0 && rel < static_cast<int>(live_->h_pre.size()))
            return live_->h_pre[static_cast<size_t>(rel)];
    }
    auto it = stored_pre_.find(pos);
    if (it != stored_pre_.end()) return it->second;
    if (!stored_ || stored_->h_pre[static_cast<size_t>(pos)].empty())
        throw NumericError("hidden path: event state " + std::to_string(pos) + " not available");
    ad::Var v = tape_.constant(stored_->h_pre[static_cast<size_t>(pos)]);
    stored_pre_.emplace(pos, v);
    return v;
}

ad::Var coupling_forward(Binder& b1, const ProcessParams& proc, ad::Var s, ad::Var cond) {
    ad::Tape& t = b1.tape();
    ad::Var out_c = proc.couple_cond.forward(b1, cond);
    ad::Var a2 = t.scale(t.tanh(t.slice(out_c, 0, 1)), kLogScaleCap);
    ad::Var b2v = t.slice(out_c, 1, 1);
    ad::Var s2 = t.slice(s, 1, 1);
    ad::Var s2p = t.add(t.mul(s2, t.exp(a2)), b2v);
    ad::Var out_s = proc.couple_coord.forward(b1, t.concat(cond, s2p));
    ad::Var a1 = t.scale(t.tanh(t.slice(out_s, 0, 1)), kLogScaleCap);
    ad::Var b1v = t.slice(out_s, 1, 1);
    ad::Var s1p = t.add(t.mul(t.slice(s, 0, 1), t.exp(a1)), b1v);
    return t.concat(s1p, s2p);
}

std::pair<ad::Var, ad::Var> coupling_inverse(Binder& b1, const ProcessParams& proc, ad::Var s_post,
                                             ad::Var cond) {
    ad::Tape& t = b1.tape();
    ad::Var out_c = proc.couple_cond.forward(b1, cond);
    ad::Var a2 = t.scale(t.tanh(t.slice(out_c, 0, 1)), kLogScaleCap);
    ad::Var b2v = t.slice(out_c, 1, 1);
    ad::Var s2p = t.slice(s_post, 1, 1);
    ad::Var s2 = t.mul(t.sub(s2p, b2v), t.exp(t.scale(a2, -1.0)));
    ad::Var out_s = proc.couple_coord.forward(b1, t.concat(cond, s2p));
    ad::Var a1 = t.scale(t.tanh(t.slice(out_s, 0, 1)), kLogScaleCap);
    ad::Var b1v = t.slice(out_s, 1, 1);
    ad::Var s1 = t.mul(t.sub(t.slice(s_post, 0, 1), b1v), t.exp(t.scale(a1, -1.0)));
    ad::Var logdet = t.add(a1, a2);
    if (t.value0(logdet) < std::log(kMinJumpDet))
        throw NumericError("coupling_inverse: jump determinant below invertibility floor");
    return {t.concat(s1, s2), logdet};
}

namespace {

// Locates the segment containing tau (segment s spans (tod[s-1], tod[s]]).
int segment_of(const PackedSequence& seq, double tau) {
    return static_cast<int>(std::lower_bound(seq.events.begin(), seq.events.end(), tau,
                                             [](const PackedEvent& e, double v) {
                                                 return e.tod < v;
                                             }) -
                            seq.events.begin());
}

// Backward RK4 over [hi -> lo], accumulating the forward trace term
// -int_lo^hi Tr dtau directly. `segment` >= 0 pins the hidden-state lookups
// to one segment grid; -1 resolves the segment per stage time, which lets a
// single jump-free leg span many old segments.
std::pair<ad::Var, ad::Var> spatial_backward_leg(Binder& b1, const ProcessParams& proc,
                                                 const PackedSequence& seq, HiddenAccess& hidden,
                                                 int segment, double hi, double lo, ad::Var s,
                                                 int steps) {
    ad::Tape& t = b1.tape();
    ad::Var T = t.constant_scalar(0.0);
    double width = hi - lo;
    if (width <= 0.0) return {s, T};
    auto h_at = [&](double tau) {
        return hidden.h_at(segment >= 0 ? segment : segment_of(seq, tau), tau);
    };
    double dt = -width / steps;
    for (int m = 0; m < steps; ++m) {
        double tau0 = hi + m * dt;
        double taum = tau0 + 0.5 * dt;
        double tau1 = tau0 + dt;
        auto [k1, tr1] = f_s_with_trace(b1, proc, tau0, s, h_at(tau0));
        ad::Var s2 = [&] {
            double c[] = {1.0, 0.5 * dt};
            ad::Var v[] = {s, k1};
            return t.lincomb(c, v);
        }();
        ad::Var hm = h_at(taum);
        auto [k2, tr2] = f_s_with_trace(b1, proc, taum, s2, hm);
        ad::Var s3 = [&] {
            double c[] = {1.0, 0.5 * dt};
            ad::Var v[] = {s, k2};
            return t.lincomb(c, v);
        }();
        auto [k3, tr3] = f_s_with_trace(b1, proc, taum, s3, hm);
        ad::Var s4 = [&] {
            double c[] = {1.0, dt};
            ad::Var v[] = {s, k3};
            return t.lincomb(c, v);
        }();
        auto [k4, tr4] = f_s_with_trace(b1, proc, tau1, s4, h_at(tau1));
        {
            double c[] = {1.0, dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};
            ad::Var v[] = {s, k1, k2, k3, k4};
            s = t.lincomb(c, v);
        }
        {
            double c[] = {1.0, dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};
            ad::Var v[] = {T, tr1, tr2, tr3, tr4};
            T = t.lincomb(c, v);
        }
    }
    return {s, T};
}

} // namespace

ad::Var spatial_log_density_var(Binder& b1, const ProcessParams& proc,
                                const PackedSequence& seq, HiddenAccess& hidden,
                                std::span<const std::vector<double>> event_cc, double tau_bar,
                                double x, double y, int steps, int max_jumps) {
    ad::Tape& t = b1.tape();
    // events strictly before tau_bar
    int k = static_cast<int>(std::lower_bound(seq.events.begin(), seq.events.end(), tau_bar,
                                              [](const PackedEvent& e, double v) {
                                                  return e.tod < v;
                                              }) -
                             seq.events.begin());
    int jstop = (max_jumps <= 0) ? 0 : std::max(0, k - max_jumps);

    double init[2] = {x, y};
    ad::Var s = t.constant(init);
    std::vector<ad::Var> terms;
    double cur_hi = tau_bar;

    for (int j = k - 1; j >= jstop; --j) {
        const PackedEvent& ev = seq.events[static_cast<size_t>(j)];
        auto [s_next, T] =
            spatial_backward_leg(b1, proc, seq, hidden, j + 1, cur_hi, ev.tod, s, steps);
        s = s_next;
        terms.push_back(T);
        ad::Var cond = t.concat(t.constant_scalar(ev.tod), hidden.h_pre_event(j),
                                t.constant(event_cc[static_cast<size_t>(j)]));
        auto [s_pre, logdet] = coupling_inverse(b1, proc, s, cond);
        s = s_pre;
        terms.push_back(t.scale(logdet, -1.0));
        cur_hi = ev.tod;
    }
    if (jstop == 0) {
        // remaining continuous stretch down to tau = 0 within segment 0
        auto [s_next, T] =
            spatial_backward_leg(b1, proc, seq, hidden, jstop, cur_hi, 0.0, s, steps);
        s = s_next;
        terms.push_back(T);
    } else {
        // jumps older than the window are dropped, but the continuous flow
        // still runs back to the origin: one coarse jump-free leg across the
        // old segments, with per-stage hidden-state lookups
        auto [s_next, T] =
            spatial_backward_leg(b1, proc, seq, hidden, -1, cur_hi, 0.0, s, 4 * steps);
        s = s_next;
        terms.push_back(T);
    }

    ad::Var base = t.offset(t.scale(t.dot(s, s), -0.5), -std::log(2.0 * std::numbers::pi));
    ad::Var total = base;
    for (ad::Var term : terms) total = t.add(total, term);
    if (!std::isfinite(t.value0(total)))
        throw NumericError("spatial_log_density: non-finite log density at tau=" +
                           std::to_string(tau_bar));
    return total;
}

LikelihoodParts log_likelihood_var(Binder& b0, Binder& b1, const Model& model,
                                   const ProcessParams& proc, const PackedSequence& seq,
                                   std::span<const std::vector<double>> event_cc, int steps,
                                   int max_jumps) {
    ad::Tape& t = b1.tape();
    ad::Var h0 = t.constant(proc.h0.w);
    PathBuildResult path = build_hidden_path(b0, b1, model, proc, seq, 0,
                                             static_cast<int>(seq.events.size()), h0, 0.0, 1.0,
                                             steps);
    HiddenAccess hidden(t, seq, steps);
    hidden.attach_live(path);

    LikelihoodParts parts;
    parts.survival = t.scale(path.lambda_integral, static_cast<double>(seq.day_span));
    if (seq.target_positions.empty()) {
        parts.event_sum = t.constant_scalar(0.0);
        parts.spatial_sum = t.constant_scalar(0.0);
    } else {
        std::vector<ad::Var> logs, spats;
        for (int pos : seq.target_positions) {
            const PackedEvent& ev = seq.events[static_cast<size_t>(pos)];
            logs.push_back(t.log(temporal_intensity(b1, proc, path.h_pre[static_cast<size_t>(pos)])));
            spats.push_back(spatial_log_density_var(b1, proc, seq, hidden, event_cc, ev.tod,
                                                    ev.x, ev.y, steps, max_jumps));
        }
        parts.event_sum = t.sum(t.concat(logs));
        parts.spatial_sum = t.sum(t.concat(spats));
    }
    parts.total = t.add(t.sub(parts.event_sum, parts.survival), parts.spatial_sum);
    return parts;
}

double log_likelihood_value(const Model& model, int type, const PackedSequence& seq,
                            std::span<const std::vector<double>> event_cc) {
    ad::Tape tape;
    Binder b0(tape, false), b1(tape, false);
    LikelihoodParts parts =
        log_likelihood_var(b0, b1, model, model.theta1[static_cast<size_t>(type)], seq, event_cc,
                           model.cfg.point_process.solver_steps,
                           model.cfg.point_process.max_spatial_jumps);
    return tape.value0(parts.total);
}

namespace {

void store_chunk(PathValues& stored, const ad::Tape& tape, const PathBuildResult& path) {
    for (const HiddenSegment& seg : path.segments) {
        auto& flat = stored.seg_nodes[static_cast<size_t>(seg.index)];
        flat.clear();
        for (ad::Var v : seg.nodes) {
            auto sp = tape.value(v);
            flat.insert(flat.end(), sp.begin(), sp.end());
        }
    }
    for (size_t j = 0; j < path.h_pre.size(); ++j) {
        auto pre = tape.value(path.h_pre[j]);
        auto post = tape.value(path.h_post[j]);
        size_t pos = static_cast<size_t>(path.first_event) + j;
        stored.h_pre[pos].assign(pre.begin(), pre.end());
        stored.h_post[pos].assign(post.begin(), post.end());
    }
}

} // namespace

std::vector<double> train_mle(Model& model, int type, const PackedSequence& seq,
                              const std::vector<std::vector<double>>& event_cc,
                              const MleOptions& opt,
                              const std::function<std::vector<std::vector<double>>(int)>&
                                  refresh_cc) {
    if (seq.target_positions.empty())
        throw DataError("train_mle: packed sequence has no target-type events");
    ProcessParams& proc = model.theta1[static_cast<size_t>(type)];
    BlockSet set = model.blocks_theta1(type);
    int n = static_cast<int>(seq.events.size());

    if (opt.init_rate_bias) {
        double rate = static_cast<double>(seq.target_positions.size()) /
                      std::max(1, seq.day_span);
        rate = std::max(rate, 1e-3);
        // softplus^-1(r) = r + log(1 - exp(-r))
        proc.lam_b.w[0] = rate > 30.0 ? rate : rate + std::log1p(-std::exp(-rate));
    }

    PathValues stored;
    stored.resize(n);
    stored.steps = opt.steps;
    stored.hidden_dim = proc.hidden_dim;

    std::vector<double> grad(set.total, 0.0);
    std::vector<double> adam_m, adam_v;
    if (opt.adam) {
        adam_m.assign(set.total, 0.0);
        adam_v.assign(set.total, 0.0);
    }
    long step_count = 0;
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(opt.epochs));
    ad::Tape tape;

    std::vector<std::vector<double>> cc_epoch;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        const std::vector<std::vector<double>>* cc = &event_cc;
        if (refresh_cc) {
            cc_epoch = refresh_cc(epoch);
            cc = &cc_epoch;
        }
        double total_ll = 0.0;
        std::vector<double> h_carry = proc.h0.w;
        double tau_carry = 0.0;
        for (int i0 = 0; i0 < n; i0 += opt.chunk_events) {
            int i1 = std::min(n, i0 + opt.chunk_events);
            double tau_end = (i1 == n) ? 1.0 : seq.events[static_cast<size_t>(i1) - 1].tod;

            tape.reset();
            Binder b0(tape, false), b1(tape, true);
            ad::Var h_start = tape.constant(h_carry);
            PathBuildResult path = build_hidden_path(b0, b1, model, proc, seq, i0, i1, h_start,
                                                     tau_carry, tau_end, opt.steps);
            store_chunk(stored, tape, path);
            HiddenAccess hidden(tape, seq, opt.steps);
            hidden.attach_live(path);
            hidden.attach_stored(&stored);

            std::vector<ad::Var> logs, spats;
            for (int pos : seq.target_positions) {
                if (pos < i0 || pos >= i1) continue;
                const PackedEvent& ev = seq.events[static_cast<size_t>(pos)];
                logs.push_back(tape.log(
                    temporal_intensity(b1, proc, path.h_pre[static_cast<size_t>(pos - i0)])));
                spats.push_back(spatial_log_density_var(b1, proc, seq, hidden, *cc, ev.tod,
                                                        ev.x, ev.y, opt.steps, opt.max_jumps));
            }
            ad::Var ll = tape.scale(
                tape.scale(path.lambda_integral, static_cast<double>(seq.day_span)), -1.0);
            if (!logs.empty()) {
                ll = tape.add(ll, tape.sum(tape.concat(logs)));
                ll = tape.add(ll, tape.sum(tape.concat(spats)));
            }
            double ll_val = tape.value0(ll);
            if (!std::isfinite(ll_val))
                throw NumericError("train_mle: non-finite likelihood (type " +
                                   model.types[static_cast<size_t>(type)] + ", epoch " +
                                   std::to_string(epoch) + ", chunk at " + std::to_string(i0) +
                                   ")");
            total_ll += ll_val;

            ad::Var loss = tape.scale(ll, -1.0 / (static_cast<double>(logs.size()) + 1.0));
            tape.backward(loss);
            std::fill(grad.begin(), grad.end(), 0.0);
            b1.collect(set.offsets, grad);
            double norm = 0.0;
            for (double g : grad) norm += g * g;
            norm = std::sqrt(norm);
            if (norm > opt.clip_norm)
                for (double& g : grad) g *= opt.clip_norm / norm;
            if (opt.adam) {
                ++step_count;
                double c1 = 1.0 - std::pow(opt.adam_beta1, static_cast<double>(step_count));
                double c2 = 1.0 - std::pow(opt.adam_beta2, static_cast<double>(step_count));
                for (size_t k = 0; k < set.total; ++k) {
                    adam_m[k] = opt.adam_beta1 * adam_m[k] + (1.0 - opt.adam_beta1) * grad[k];
                    adam_v[k] = opt.adam_beta2 * adam_v[k] +
                                (1.0 - opt.adam_beta2) * grad[k] * grad[k];
                    grad[k] = (adam_m[k] / c1) / (std::sqrt(adam_v[k] / c2) + opt.adam_eps);
                }
            }
            set.sgd_step(grad, opt.lr, opt.weight_decay);

            auto hv = tape.value(path.h_end);
            h_carry.assign(hv.begin(), hv.end());
            tau_carry = tau_end;
        }
        trace.push_back(-total_ll);
    }
    return trace;
}

FrozenProcess::FrozenProcess(const Model& model, int type, const PackedSequence& seq,
                             const std::vector<std::vector<double>>& event_cc)
    : model_(&model), proc_(&model.theta1[static_cast<size_t>(type)]), seq_(&seq),
      event_cc_(&event_cc) {
    int n = static_cast<int>(seq.events.size());
    int steps = model.cfg.point_process.solver_steps;
    values_.resize(n);
    values_.steps = steps;
    values_.hidden_dim = proc_->hidden_dim;

    ad::Tape tape;
    std::vector<double> h_carry = proc_->h0.w;
    double tau_carry = 0.0;
    int chunk = std::max(1, model.cfg.point_process.chunk_events);
    int i0 = 0;
    do {
        int i1 = std::min(n, i0 + chunk);
        double tau_end = (i1 == n) ? 1.0 : seq.events[static_cast<size_t>(i1) - 1].tod;
        tape.reset();
        Binder b0(tape, false), b1(tape, false);
        PathBuildResult path = build_hidden_path(b0, b1, model, *proc_, seq, i0, i1,
                                                 tape.constant(h_carry), tau_carry, tau_end, steps);
        store_chunk(values_, tape, path);
        lambda_integral_ += tape.value0(path.lambda_integral);
        auto hv = tape.value(path.h_end);
        h_carry.assign(hv.begin(), hv.end());
        tau_carry = tau_end;
        i0 = i1;
    } while (i0 < n);
}

std::vector<double> FrozenProcess::h_at(double tau) const {
    const auto& ev = seq_->events;
    int segment = static_cast<int>(
        std::lower_bound(ev.begin(), ev.end(), tau,
                         [](const PackedEvent& e, double v) { return e.tod < v; }) -
        ev.begin());
    const auto& flat = values_.seg_nodes[static_cast<size_t>(segment)];
    int dh = values_.hidden_dim;
    int count = static_cast<int>(flat.size()) / dh;
    double lo = seg_lo(*seq_, segment), hi = seg_hi(*seq_, segment);
    if (count <= 1 || hi - lo <= 0.0)
        return {flat.begin(), flat.begin() + dh};
    double u = std::clamp((tau - lo) / (hi - lo), 0.0, 1.0) * (count - 1);
    int i = std::min(static_cast<int>(u), count - 2);
    double frac = u - i;
    std::vector<double> out(static_cast<size_t>(dh));
    for (int d = 0; d < dh; ++d)
        out[static_cast<size_t>(d)] = (1.0 - frac) * flat[static_cast<size_t>(i) * dh + d] +
                                      frac * flat[(static_cast<size_t>(i) + 1) * dh + d];
    return out;
}

double FrozenProcess::lambda_at(double tau) const {
    auto h = h_at(tau);
    return temporal_intensity_value(*proc_, h);
}

double FrozenProcess::spatial_log_density(double tau, double x, double y) const {
    thread_local ad::Tape tape;
    tape.reset();
    Binder b1(tape, false);
    HiddenAccess hidden(tape, *seq_, values_.steps);
    hidden.attach_stored(&values_);
    ad::Var lp = spatial_log_density_var(b1, *proc_, *seq_, hidden,
                                         std::span<const std::vector<double>>(*event_cc_), tau, x,
                                         y, values_.steps,
                                         model_->cfg.point_process.max_spatial_jumps);
    return tape.value0(lp);
}

double FrozenProcess::log_risk(double tau, double x, double y) const {
    return std::log(lambda_at(tau)) + spatial_log_density(tau, x, y);
}

EvolvingInputs evolving_inputs(const FrozenProcess& frozen, const Model& model, int grid,
                               double t_abs) {
    EvolvingInputs in;
    double day_floor = std::floor(t_abs);
    in.day = static_cast<int>(day_floor);
    double tau = t_abs - day_floor;
    in.h = frozen.h_at(tau);
    auto [cx, cy] = model.grid.center_std(grid, model.scaler);
    in.log_risk = frozen.log_risk(tau, cx, cy);
    return in;
}

ad::Var evolving_feature_var(Binder& b2, const Model& model, const EvolvingInputs& in,
                             double gap_days, double cell_area) {
    ad::Tape& t = b2.tape();
    auto dayf = model.day_features(in.day);
    double head[1] = {in.log_risk};
    double tail[2] = {gap_days, cell_area};
    ad::Var parts[4] = {t.constant(head), t.constant(in.h), t.constant(dayf), t.constant(tail)};
    ad::Var x = t.concat(std::span<const ad::Var>(parts, 4));
    return model.theta2.evolve.forward(b2, x);
}

} // namespace flexicrime
