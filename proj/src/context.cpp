#include "flexicrime/context.hpp"

#include <cmath>
#include <stdexcept>

#include "flexicrime/errors.hpp"
#include "flexicrime/parallel.hpp"

namespace flexicrime {

void sampling_probs(const History& hist, int n_candidates, double t, double sx, double sy,
                    std::vector<double>& prob_time, std::vector<double>& prob_space) {
    if (n_candidates <= 0) throw EmptyHistoryError("sampling_probs: no events before query time");
    prob_time.resize(static_cast<size_t>(n_candidates));
    prob_space.resize(static_cast<size_t>(n_candidates));
    double zt = 0.0, zs = 0.0;
    for (int i = 0; i < n_candidates; ++i) {
        double dt = std::abs(t - hist.abs_t[static_cast<size_t>(i)]);
        double dx = sx - hist.x[static_cast<size_t>(i)];
        double dy = sy - hist.y[static_cast<size_t>(i)];
        double wt = std::exp(-dt);
        double ws = std::exp(-std::sqrt(dx * dx + dy * dy));
        prob_time[static_cast<size_t>(i)] = wt;
        prob_space[static_cast<size_t>(i)] = ws;
        zt += wt;
        zs += ws;
    }
    for (int i = 0; i < n_candidates; ++i) {
        prob_time[static_cast<size_t>(i)] /= zt;
        prob_space[static_cast<size_t>(i)] /= zs;
    }
}

namespace {

std::vector<int> draw(const std::vector<double>& probs, int count, bool replacement, Rng& rng) {
    std::vector<int> picked;
    picked.reserve(static_cast<size_t>(count));
    if (replacement) {
        for (int k = 0; k < count; ++k) {
            double u = rng.uniform();
            double acc = 0.0;
            int chosen = static_cast<int>(probs.size()) - 1;
            for (size_t i = 0; i < probs.size(); ++i) {
                acc += probs[i];
                if (u < acc) {
                    chosen = static_cast<int>(i);
                    break;
                }
            }
            picked.push_back(chosen);
        }
        return picked;
    }
    std::vector<double> w = probs;
    double total = 1.0;
    for (int k = 0; k < count; ++k) {
        double u = rng.uniform() * total;
        double acc = 0.0;
        int chosen = -1;
        for (size_t i = 0; i < w.size(); ++i) {
            if (w[i] <= 0.0) continue;
            acc += w[i];
            chosen = static_cast<int>(i);
            if (u < acc) break;
        }
        picked.push_back(chosen);
        total -= w[static_cast<size_t>(chosen)];
        w[static_cast<size_t>(chosen)] = 0.0;
    }
    return picked;
}

} // namespace

SampledSets sample_relevant_events(const History& hist, int n_candidates, double t, double sx,
                                   double sy, const SamplerConfig& cfg, Rng& rng) {
    if (!cfg.replacement &&
        (cfg.time_samples > n_candidates || cfg.space_samples > n_candidates))
        throw std::invalid_argument(
            "sample_relevant_events: without-replacement request exceeds history size");
    std::vector<double> pt, ps;
    sampling_probs(hist, n_candidates, t, sx, sy, pt, ps);
    SampledSets sets;
    sets.time_set = draw(pt, cfg.time_samples, cfg.replacement, rng);
    sets.space_set = draw(ps, cfg.space_samples, cfg.replacement, rng);
    return sets;
}

ContextBuilder::ContextBuilder(Binder& bind, const Model& model, const History& hist,
                               int target_grid, int target_type)
    : bind_(bind), model_(model), hist_(hist), target_grid_(target_grid),
      target_type_(target_type) {
    target_embed_ = grid_embedding(target_grid);
}

ad::Var ContextBuilder::grid_embedding(int cell) {
    auto it = grid_embed_.find(cell);
    if (it != grid_embed_.end()) return it->second;
    ad::Tape& t = bind_.tape();
    const ContextParams& p = model_.theta0;
    int k = std::max(model_.grid.poi_categories, 1);
    ad::Var feat = t.constant({model_.grid.count_features.data() + static_cast<size_t>(cell) * k,
                               static_cast<size_t>(k)});
    ad::Var emb = t.add(t.matvec(bind_(p.region_w), feat, p.dim, k), bind_(p.region_b));
    grid_embed_.emplace(cell, emb);
    return emb;
}

ad::Var ContextBuilder::event_value(int rec) {
    auto it = event_vr_.find(rec);
    if (it != event_vr_.end()) return it->second;
    const CrimeRecord& r = hist_.ds->records[static_cast<size_t>(rec)];
    ad::Var vr = target_aware_encode(bind_, model_.theta0.target, target_embed_,
                                     grid_embedding(r.grid_id), target_type_, r.type);
    event_vr_.emplace(rec, vr);
    return vr;
}

ad::Var ContextBuilder::event_temporal(int rec) {
    auto it = event_vt_.find(rec);
    if (it != event_vt_.end()) return it->second;
    ad::Var vt =
        temporal_encode(bind_, model_.theta0.temporal, hist_.abs_t[static_cast<size_t>(rec)]);
    event_vt_.emplace(rec, vt);
    return vt;
}

ad::Var ContextBuilder::temporal_key(int head, int rec) {
    int64_t key = static_cast<int64_t>(head) * (1ll << 32) + rec;
    auto it = tkey_.find(key);
    if (it != tkey_.end()) return it->second;
    const ContextParams& p = model_.theta0;
    ad::Var k = bind_.tape().matvec(bind_(p.heads[static_cast<size_t>(head)].k),
                                    event_temporal(rec), p.head_dim, p.dim);
    tkey_.emplace(key, k);
    return k;
}

ad::Var ContextBuilder::spatial_key(int head, int rec) {
    int64_t key = static_cast<int64_t>(head) * (1ll << 32) + rec;
    auto it = skey_.find(key);
    if (it != skey_.end()) return it->second;
    const ContextParams& p = model_.theta0;
    ad::Tape& t = bind_.tape();
    ad::Var vs = t.constant(hist_.event_spatial[static_cast<size_t>(rec)]);
    ad::Var k = t.matvec(bind_(p.heads[static_cast<size_t>(head)].k), vs, p.head_dim, p.dim);
    skey_.emplace(key, k);
    return k;
}

ContextBuilder::HeadResult ContextBuilder::attention_head(int head, const SampledSets& sets,
                                                          double t, int grid) {
    if (sets.time_set.empty() && sets.space_set.empty())
        throw EmptyHistoryError("attention_head: both sampled sets are empty");
    const ContextParams& p = model_.theta0;
    ad::Tape& tape = bind_.tape();
    double inv_temp = 1.0 / std::sqrt(static_cast<double>(p.dim) / p.n_heads);
    const auto& hp = p.heads[static_cast<size_t>(head)];

    HeadResult res;
    std::vector<ad::Var> scores, values;
    if (!sets.time_set.empty()) {
        ad::Var vt_query = temporal_encode(bind_, p.temporal, t);
        ad::Var q_t = tape.matvec(bind_(hp.q), vt_query, p.head_dim, p.dim);
        scores.reserve(sets.time_set.size());
        for (int rec : sets.time_set)
            scores.push_back(tape.scale(tape.dot(q_t, temporal_key(head, rec)), inv_temp));
        res.mu = tape.softmax(tape.concat(scores));
        values.reserve(sets.time_set.size());
        for (int rec : sets.time_set) values.push_back(event_value(rec));
        res.output = tape.weighted_sum(res.mu, values);
    }
    if (!sets.space_set.empty()) {
        ad::Var vg = tape.constant(hist_.cell_spatial[static_cast<size_t>(grid)]);
        ad::Var q_s = tape.matvec(bind_(hp.q), vg, p.head_dim, p.dim);
        scores.clear();
        for (int rec : sets.space_set)
            scores.push_back(tape.scale(tape.dot(q_s, spatial_key(head, rec)), inv_temp));
        res.eta = tape.softmax(tape.concat(scores));
        values.clear();
        for (int rec : sets.space_set) values.push_back(event_value(rec));
        ad::Var spatial_term = tape.weighted_sum(res.eta, values);
        res.output = res.output.valid() ? tape.add(res.output, spatial_term) : spatial_term;
    }
    return res;
}

ad::Var ContextBuilder::context(int grid, double t, double cutoff, Rng& rng,
                                const SamplerConfig* sampler_override) {
    const ContextParams& p = model_.theta0;
    int n_cand = hist_.count_before(cutoff);
    const SamplerConfig& sc = sampler_override ? *sampler_override : model_.cfg.sampler;
    SampledSets sets =
        sample_relevant_events(hist_, n_cand, t, hist_.cell_x[static_cast<size_t>(grid)],
                               hist_.cell_y[static_cast<size_t>(grid)], sc, rng);
    std::vector<ad::Var> heads;
    heads.reserve(static_cast<size_t>(p.n_heads));
    for (int h = 0; h < p.n_heads; ++h)
        heads.push_back(attention_head(h, sets, t, grid).output);
    ad::Tape& tape = bind_.tape();
    return tape.matvec(bind_(p.w_msa), tape.concat(heads), p.dim, p.n_heads * p.target_dim);
}

ad::Var ContextBuilder::extrapolated_context(int grid, double t, double gap_days, double cutoff,
                                             Rng& rng) {
    const ContextParams& p = model_.theta0;
    ad::Tape& tape = bind_.tape();
    int L = model_.cfg.prediction.lags;
    if (t - L * gap_days < hist_.ds->day_first())
        throw std::out_of_range("extrapolated_context: lag window precedes the history span");
    ad::Var h = tape.zeros(p.dim);
    for (int k = L; k >= 1; --k) { // oldest first
        ad::Var cc = context(grid, t - k * gap_days, cutoff, rng);
        h = p.extrap.step(bind_, cc, h);
    }
    return h;
}

std::vector<double> context_value(const Model& model, const History& hist, int grid,
                                  int target_type, double t, double cutoff, Rng& rng,
                                  const SamplerConfig* sampler_override) {
    thread_local ad::Tape tape;
    tape.reset();
    Binder bind(tape, false);
    ContextBuilder builder(bind, model, hist, grid, target_type);
    ad::Var cc = builder.context(grid, t, cutoff, rng, sampler_override);
    auto v = tape.value(cc);
    return {v.begin(), v.end()};
}

std::vector<std::vector<double>> event_conditioning_contexts(const Model& model,
                                                             const History& hist,
                                                             const PackedSequence& seq,
                                                             uint64_t seed) {
    std::vector<std::vector<double>> out(seq.events.size(),
                                         std::vector<double>(model.cfg.encoding.dim, 0.0));
    const SamplerConfig& sc = model.cfg.sampler;
    par::parallel_for(seq.events.size(), [&](size_t i) {
        const PackedEvent& ev = seq.events[i];
        double t_abs = ev.day + ev.tod;
        int n_cand = hist.count_before(t_abs);
        if (n_cand <= 0) return; // no history yet: zero conditioning
        SamplerConfig local = sc;
        if (!sc.replacement) {
            local.time_samples = std::min(sc.time_samples, n_cand);
            local.space_samples = std::min(sc.space_samples, n_cand);
        }
        Rng rng(mix_seed(seed, 0x9cc, i));
        out[i] = context_value(model, hist, ev.grid_id, seq.target_type, t_abs, t_abs, rng, &local);
    });
    return out;
}

} // namespace flexicrime
