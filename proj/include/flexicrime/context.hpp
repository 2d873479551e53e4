#pragma once

#include <unordered_map>
#include <vector>

#include "flexicrime/model.hpp"
#include "flexicrime/rng.hpp"

namespace flexicrime {

// Selection probabilities over the first n_candidates records of the history:
// Pr(r|t) ~ exp(-|t - t_r|), Pr(r|s) ~ exp(-dist(s, s_r)), both normalized.
// Throws EmptyHistoryError when n_candidates == 0.
void sampling_probs(const History& hist, int n_candidates, double t, double sx, double sy,
                    std::vector<double>& prob_time, std::vector<double>& prob_space);

struct SampledSets {
    std::vector<int> time_set;  // R_0, record indices
    std::vector<int> space_set; // R_1
};

// Draws |R_0| and |R_1| per the two distributions. Without replacement the
// counts must not exceed the candidate pool (std::invalid_argument).
SampledSets sample_relevant_events(const History& hist, int n_candidates, double t, double sx,
                                   double sy, const SamplerConfig& cfg, Rng& rng);

// Builds attention graphs for one prediction item. The target (g*, c*) is
// fixed at construction; event encodings, grid embeddings, and per-head key
// projections are shared across every context the item needs.
class ContextBuilder {
public:
    ContextBuilder(Binder& bind, const Model& model, const History& hist, int target_grid,
                   int target_type);

    ad::Var grid_embedding(int cell);
    ad::Var event_value(int rec);    // target-aware v_r
    ad::Var event_temporal(int rec); // v_t_r

    struct HeadResult {
        ad::Var output;
        ad::Var mu;  // temporal attention weights (invalid when R_0 empty)
        ad::Var eta; // spatial attention weights (invalid when R_1 empty)
    };
    // One attention head over sampled sets. Either set may be empty (its
    // term drops out); both empty raises EmptyHistoryError.
    HeadResult attention_head(int head, const SampledSets& sets, double t, int grid);

    // cc_g(t) attending over records strictly before `cutoff`.
    ad::Var context(int grid, double t, double cutoff, Rng& rng,
                    const SamplerConfig* sampler_override = nullptr);
    // GRU extrapolation from the L contexts at t - L*gap .. t - gap.
    ad::Var extrapolated_context(int grid, double t, double gap_days, double cutoff, Rng& rng);

    // lowest absolute time the extrapolation lags may reach
    double min_lag_time(double t, double gap_days) const {
        return t - model_.cfg.prediction.lags * gap_days;
    }

private:
    ad::Var temporal_key(int head, int rec);
    ad::Var spatial_key(int head, int rec);

    Binder& bind_;
    const Model& model_;
    const History& hist_;
    int target_grid_, target_type_;
    ad::Var target_embed_;

    std::unordered_map<int, ad::Var> grid_embed_, event_vr_, event_vt_;
    std::unordered_map<int64_t, ad::Var> tkey_, skey_; // (head, record) -> projected key
};

// Convenience: numeric cc_g(t) with frozen parameters (no gradients), used
// for the point-process jump conditioning and inspection.
std::vector<double> context_value(const Model& model, const History& hist, int grid,
                                  int target_type, double t, double cutoff, Rng& rng,
                                  const SamplerConfig* sampler_override = nullptr);

// cc at each packed event for the type-c process, computed with the event's
// own cell as target grid and the process type as target type; events with no
// prior history condition on a zero vector. Seeded per event index.
std::vector<std::vector<double>> event_conditioning_contexts(const Model& model,
                                                             const History& hist,
                                                             const PackedSequence& seq,
                                                             uint64_t seed);

} // namespace flexicrime
