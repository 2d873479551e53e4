#include "flexicrime/prediction.hpp"

#include <cmath>
#include <stdexcept>

#include "flexicrime/errors.hpp"
#include "flexicrime/numeric.hpp"
#include "flexicrime/parallel.hpp"

namespace flexicrime {

std::vector<double> sample_interval_points(const Interval& iv, int l) {
    if (l < 2) throw std::invalid_argument("sample_interval_points: need at least 2 points");
    if (!(iv.hours > 0.0)) throw std::invalid_argument("sample_interval_points: empty interval");
    std::vector<double> pts(static_cast<size_t>(l));
    double len = iv.hours / 24.0;
    for (int i = 0; i < l; ++i)
        pts[static_cast<size_t>(i)] = iv.start + len * i / (l - 1);
    return pts;
}

ProcessBank ProcessBank::build(const Model& model, const History& hist, uint64_t seed) {
    ProcessBank bank;
    bank.per_type_.resize(model.types.size());
    for (size_t c = 0; c < model.types.size(); ++c) {
        if (hist.ds->by_type[c].empty()) continue;
        auto data = std::make_unique<TypeData>();
        data->packed = pack_events(*hist.ds, static_cast<int>(c), model.scaler);
        data->event_cc =
            event_conditioning_contexts(model, hist, data->packed, mix_seed(seed, 0xcc, c));
        data->frozen = std::make_unique<FrozenProcess>(model, static_cast<int>(c), data->packed,
                                                       data->event_cc);
        bank.per_type_[c] = std::move(data);
    }
    return bank;
}

void ProcessBank::refreeze(const Model& model) {
    for (size_t c = 0; c < per_type_.size(); ++c) {
        if (!per_type_[c]) continue;
        per_type_[c]->frozen = std::make_unique<FrozenProcess>(
            model, static_cast<int>(c), per_type_[c]->packed, per_type_[c]->event_cc);
    }
}

ad::Var interval_feature_var(Binder& bind, ContextBuilder& cb, const Model& model,
                             const ProcessBank* bank, const HotspotQuery& q, Rng& rng) {
    ad::Tape& t = bind.tape();
    int l = model.cfg.prediction.sample_points;
    std::vector<double> pts = sample_interval_points(q.iv, l);
    double gap = (q.iv.hours / 24.0) / (l - 1);
    double cutoff = q.iv.start; // contexts only see events before the prediction time

    const FrozenProcess* frozen = bank ? bank->frozen(q.type) : nullptr;
    double cell_area = model.cell_area_std();

    std::vector<ad::Var> parts;
    parts.reserve(static_cast<size_t>(2 * l - 1));
    for (int i = 0; i < l; ++i) {
        parts.push_back(cb.extrapolated_context(q.grid, pts[static_cast<size_t>(i)], gap, cutoff, rng));
        if (i + 1 < l) {
            if (frozen) {
                EvolvingInputs in = evolving_inputs(*frozen, model, q.grid, pts[static_cast<size_t>(i)]);
                parts.push_back(evolving_feature_var(bind, model, in, gap, cell_area));
            } else {
                parts.push_back(t.zeros(model.cfg.encoding.dim));
            }
        }
    }
    return t.concat(parts);
}

ad::Var predict_logit_var(Binder& bind, ContextBuilder& cb, const Model& model,
                          const ProcessBank* bank, const HotspotQuery& q, Rng& rng) {
    ad::Var feat = interval_feature_var(bind, cb, model, bank, q, rng);
    return model.theta2.head.forward(bind, feat);
}

double predict_probability(const Model& model, const History& hist, const ProcessBank* bank,
                           const HotspotQuery& q, uint64_t seed) {
    thread_local ad::Tape tape;
    tape.reset();
    Binder bind(tape, false);
    ContextBuilder cb(bind, model, hist, q.grid, q.type);
    Rng rng(seed);
    ad::Var logit = predict_logit_var(bind, cb, model, bank, q, rng);
    return stable_sigmoid(tape.value0(logit));
}

std::vector<double> predict_city(const Model& model, const History& hist, const ProcessBank* bank,
                                 const Interval& iv, int type, uint64_t seed) {
    int cells = model.grid.cell_count();
    std::vector<double> out(static_cast<size_t>(cells), 0.0);
    par::parallel_for(static_cast<size_t>(cells), [&](size_t g) {
        HotspotQuery q{iv, static_cast<int>(g), type};
        out[g] = predict_probability(model, hist, bank, q, mix_seed(seed, 0x9d1c, g));
    });
    return out;
}

ad::Var bce_from_logit(ad::Tape& t, ad::Var logit, bool label) {
    // -log sigma(z) = softplus(-z); -log(1 - sigma(z)) = z + softplus(-z)
    ad::Var sp = t.softplus(t.scale(logit, -1.0));
    return label ? sp : t.add(logit, sp);
}

double hotspot_loss(const std::vector<std::vector<std::vector<double>>>& preds,
                    const std::vector<std::vector<std::vector<uint8_t>>>& labels, double xi,
                    double theta_squared_norm) {
    if (preds.size() != labels.size() || preds.empty())
        throw std::invalid_argument("hotspot_loss: type dimension mismatch");
    double type_acc = 0.0;
    for (size_t c = 0; c < preds.size(); ++c) {
        if (preds[c].size() != labels[c].size() || preds[c].empty())
            throw std::invalid_argument("hotspot_loss: interval dimension mismatch");
        double interval_acc = 0.0;
        for (size_t i = 0; i < preds[c].size(); ++i) {
            const auto& p = preds[c][i];
            const auto& y = labels[c][i];
            if (p.size() != y.size() || p.empty())
                throw std::invalid_argument("hotspot_loss: cell dimension mismatch");
            double cell_acc = 0.0;
            for (size_t g = 0; g < p.size(); ++g) {
                double pc = std::min(1.0 - 1e-7, std::max(1e-7, p[g]));
                cell_acc += y[g] ? -std::log(pc) : -std::log1p(-pc);
            }
            interval_acc += cell_acc / static_cast<double>(p.size());
        }
        type_acc += interval_acc / static_cast<double>(preds[c].size());
    }
    return type_acc / static_cast<double>(preds.size()) + xi * theta_squared_norm;
}

} // namespace flexicrime
