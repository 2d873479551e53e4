#pragma once

#include <memory>
#include <vector>

#include "flexicrime/context.hpp"
#include "flexicrime/point_process.hpp"

namespace flexicrime {

// Inclusive uniform grid over the interval: t_i = start + (i-1) * len/(l-1).
std::vector<double> sample_interval_points(const Interval& iv, int l);

struct HotspotQuery {
    Interval iv;
    int grid = 0;
    int type = 0;
};

// Per-type packed history, jump conditioning contexts, and the frozen process
// view used for evolving features at prediction time.
class ProcessBank {
public:
    // Builds packed sequences and conditioning contexts for every type; types
    // without events are left empty (their evolving features read as zero).
    static ProcessBank build(const Model& model, const History& hist, uint64_t seed);

    const FrozenProcess* frozen(int type) const {
        const auto& p = per_type_[static_cast<size_t>(type)];
        return p ? p->frozen.get() : nullptr;
    }
    const PackedSequence* packed(int type) const {
        const auto& p = per_type_[static_cast<size_t>(type)];
        return p ? &p->packed : nullptr;
    }
    const std::vector<std::vector<double>>* contexts(int type) const {
        const auto& p = per_type_[static_cast<size_t>(type)];
        return p ? &p->event_cc : nullptr;
    }
    // Rebuilds the frozen value caches (after stage-2 parameter updates).
    void refreeze(const Model& model);

private:
    struct TypeData {
        PackedSequence packed;
        std::vector<std::vector<double>> event_cc;
        std::unique_ptr<FrozenProcess> frozen;
    };
    std::vector<std::unique_ptr<TypeData>> per_type_;
};

// Interval feature cc~(t_1) || V~(t_1) || cc~(t_2) || ... || cc~(t_l) on the
// tape behind `bind`. A null bank (or a type with no process) zeroes the
// evolving-feature slots, which is exactly the stage-1 configuration.
ad::Var interval_feature_var(Binder& bind, ContextBuilder& cb, const Model& model,
                             const ProcessBank* bank, const HotspotQuery& q, Rng& rng);

ad::Var predict_logit_var(Binder& bind, ContextBuilder& cb, const Model& model,
                          const ProcessBank* bank, const HotspotQuery& q, Rng& rng);

// sigma(logit); value-only evaluation for one query, seeded deterministically.
double predict_probability(const Model& model, const History& hist, const ProcessBank* bank,
                           const HotspotQuery& q, uint64_t seed);

// Whole-city variant: every cell against shared read-only state, parallel
// across cells with per-cell seeds.
std::vector<double> predict_city(const Model& model, const History& hist, const ProcessBank* bank,
                                 const Interval& iv, int type, uint64_t seed);

// Stable binary cross-entropy from the logit, used by the training graphs.
ad::Var bce_from_logit(ad::Tape& t, ad::Var logit, bool label);

// Reporting loss: mean over types of mean over intervals of per-cell-mean
// BCE, plus xi * |theta|^2. Predictions are clamped to [1e-7, 1-1e-7].
double hotspot_loss(const std::vector<std::vector<std::vector<double>>>& preds,
                    const std::vector<std::vector<std::vector<uint8_t>>>& labels, double xi,
                    double theta_squared_norm);

} // namespace flexicrime
