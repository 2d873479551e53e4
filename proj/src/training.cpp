#include "flexicrime/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

#include "flexicrime/errors.hpp"
#include "flexicrime/parallel.hpp"

namespace flexicrime {

namespace {

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

} // namespace

void TrainLogger::log(int stage, int epoch, double loss, double wall_ms) {
    if (!out_) return;
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["loss"] = loss;
    j["wall_ms"] = wall_ms;
    (*out_) << j.dump() << "\n";
    out_->flush();
}

IntervalPlan generate_training_intervals(const Model& model, const History& hist,
                                         const CrimeDataset& ds, uint64_t seed) {
    IntervalPlan plan;
    const TrainingConfig& tc = model.cfg.training;
    int l = model.cfg.prediction.sample_points;
    int L = model.cfg.prediction.lags;
    int need = model.cfg.sampler.replacement
                   ? 1
                   : std::max(model.cfg.sampler.time_samples, model.cfg.sampler.space_samples);
    double span_begin = ds.day_first();
    double span_end = ds.day_last() + 1.0;

    std::vector<Interval> intervals;
    for (int day = ds.day_first(); day <= ds.day_last(); ++day) {
        Rng rng(mix_seed(seed, 0x1d7e, static_cast<uint64_t>(day)));
        for (int i = 0; i < tc.intervals_per_day; ++i) {
            int hours = tc.interval_hours[static_cast<size_t>(i) % tc.interval_hours.size()];
            double start = day + static_cast<double>(rng.below(24)) / 24.0;
            Interval iv{start, static_cast<double>(hours)};
            double gap = iv.hours / 24.0 / (l - 1);
            if (iv.start < span_begin || iv.end() > span_end) continue;
            if (iv.start - L * gap < span_begin) continue;
            if (hist.count_before(iv.start) < need) continue;
            intervals.push_back(iv);
        }
    }
    for (const Interval& iv : intervals) {
        for (size_t c = 0; c < model.types.size(); ++c) {
            plan.queries.push_back({iv, static_cast<int>(c)});
            plan.labels.push_back(label_interval(ds, model.grid, iv, static_cast<int>(c)));
        }
    }
    return plan;
}

namespace {

// Shared by stages 1 and 3; `bank` selects whether evolving features enter.
StageResult run_prediction_stage(Model& model, const History& hist, const IntervalPlan& plan,
                                 const ProcessBank* bank, int stage_id, int epochs,
                                 TrainLogger& log) {
    if (plan.queries.empty())
        throw DataError("training: no feasible training intervals were generated");

    BlockSet set;
    model.theta0.for_each_block([&](ParamBlock& b) { set.add(b); });
    model.theta2.for_each_block([&](ParamBlock& b) { set.add(b); });

    const TrainingConfig& tc = model.cfg.training;
    int cells = model.grid.cell_count();
    size_t n_items = plan.queries.size() * static_cast<size_t>(cells);

    std::vector<size_t> order(n_items);
    for (size_t i = 0; i < n_items; ++i) order[i] = i;

    size_t batch = static_cast<size_t>(tc.batch);
    std::vector<std::vector<double>> item_grads(batch, std::vector<double>(set.total, 0.0));
    std::vector<double> item_loss(batch, 0.0);
    std::vector<double> grad(set.total, 0.0);
    std::vector<double> last_good;
    set.snapshot(last_good);

    StageResult res;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double t0 = now_ms();
        Rng shuffle_rng(mix_seed(model.cfg.seed, static_cast<uint64_t>(stage_id), 0x5u,
                                 static_cast<uint64_t>(epoch)));
        for (size_t i = n_items; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        for (size_t b0 = 0; b0 < n_items; b0 += batch) {
            size_t bn = std::min(batch, n_items - b0);
            par::parallel_for(bn, [&](size_t bi) {
                size_t item = order[b0 + bi];
                size_t qi = item / static_cast<size_t>(cells);
                int grid = static_cast<int>(item % static_cast<size_t>(cells));
                const TrainQuery& q = plan.queries[qi];
                bool label = plan.labels[qi][static_cast<size_t>(grid)] != 0;

                thread_local ad::Tape tape;
                tape.reset();
                Binder bind(tape, true);
                ContextBuilder cb(bind, model, hist, grid, q.type);
                Rng rng(mix_seed(model.cfg.seed, static_cast<uint64_t>(stage_id),
                                 static_cast<uint64_t>(epoch), item));
                HotspotQuery hq{q.iv, grid, q.type};
                ad::Var logit = predict_logit_var(bind, cb, model, bank, hq, rng);
                ad::Var loss = bce_from_logit(tape, logit, label);
                tape.backward(loss);
                std::fill(item_grads[bi].begin(), item_grads[bi].end(), 0.0);
                bind.collect(set.offsets, item_grads[bi]);
                item_loss[bi] = tape.value0(loss);
            });
            std::fill(grad.begin(), grad.end(), 0.0);
            for (size_t bi = 0; bi < bn; ++bi) {
                epoch_loss += item_loss[bi];
                const auto& gi = item_grads[bi];
                for (size_t k = 0; k < set.total; ++k) grad[k] += gi[k];
            }
            double inv = 1.0 / static_cast<double>(bn);
            for (double& g : grad) g *= inv;
            set.sgd_step(grad, tc.lr, tc.weight_decay);
        }
        epoch_loss /= static_cast<double>(n_items);
        if (!std::isfinite(epoch_loss)) {
            set.restore(last_good);
            throw NumericError("training stage " + std::to_string(stage_id) +
                               " diverged at epoch " + std::to_string(epoch) +
                               "; parameters restored to the last finite epoch");
        }
        set.snapshot(last_good);
        res.loss_trace.push_back(epoch_loss);
        log.log(stage_id, epoch, epoch_loss, now_ms() - t0);
    }
    return res;
}

} // namespace

StageResult train_stage1(Model& model, const History& hist, const IntervalPlan& plan,
                         TrainLogger& log) {
    StageResult r = run_prediction_stage(model, hist, plan, nullptr, 1,
                                         model.cfg.training.epochs_stage1, log);
    model.stage = TrainStage::stage1;
    return r;
}

Stage2Result train_stage2(Model& model, const History& hist, TrainLogger& log) {
    Stage2Result res;
    size_t n_types = model.types.size();
    res.nll_traces.resize(n_types);
    res.errors.assign(n_types, "");

    double t0 = now_ms();
    par::parallel_for(n_types, [&](size_t c) {
        try {
            PackedSequence packed = pack_events(*hist.ds, static_cast<int>(c), model.scaler);
            auto event_cc = event_conditioning_contexts(model, hist, packed,
                                                        mix_seed(model.cfg.seed, 0x52, c));
            MleOptions opt;
            opt.epochs = model.cfg.training.epochs_stage2;
            opt.lr = model.cfg.training.lr_mle;
            opt.adam = model.cfg.training.mle_optimizer == "adam";
            opt.weight_decay = 0.0;
            opt.chunk_events = model.cfg.point_process.chunk_events;
            opt.steps = model.cfg.point_process.solver_steps;
            opt.max_jumps = model.cfg.point_process.max_spatial_jumps;
            auto refresh = [&](int epoch) {
                return event_conditioning_contexts(
                    model, hist, packed, mix_seed(model.cfg.seed, 0x52E, c, epoch));
            };
            res.nll_traces[c] = train_mle(model, static_cast<int>(c), packed, event_cc, opt,
                                          refresh);
        } catch (const std::exception& e) {
            res.errors[c] = e.what();
        }
    });
    double wall = now_ms() - t0;
    for (size_t c = 0; c < n_types; ++c)
        for (size_t e = 0; e < res.nll_traces[c].size(); ++e)
            log.log(2, static_cast<int>(e), res.nll_traces[c][e], wall / n_types);
    model.stage = TrainStage::stage2;
    return res;
}

StageResult train_stage3(Model& model, const History& hist, const IntervalPlan& plan,
                         const ProcessBank& bank, TrainLogger& log) {
    StageResult r = run_prediction_stage(model, hist, plan, &bank, 3,
                                         model.cfg.training.epochs_stage3, log);
    model.stage = TrainStage::stage3;
    return r;
}

FullTrainResult train_full(Model& model, const History& hist, const CrimeDataset& train_ds,
                           TrainLogger& log,
                           const std::function<void(const Model&, TrainStage)>& emit) {
    FullTrainResult out;
    IntervalPlan plan = generate_training_intervals(model, hist, train_ds,
                                                    mix_seed(model.cfg.seed, 0x17));

    out.stage1 = train_stage1(model, hist, plan, log);
    if (emit) emit(model, TrainStage::stage1);

    uint64_t theta0_before = model.hash_theta0();
    uint64_t theta2_before = model.hash_theta2();
    out.stage2 = train_stage2(model, hist, log);
    if (model.hash_theta0() != theta0_before || model.hash_theta2() != theta2_before)
        throw NumericError("train_full: stage 2 broke the theta_0/theta_2 freeze contract");
    if (emit) emit(model, TrainStage::stage2);

    std::vector<uint64_t> theta1_before(model.types.size());
    for (size_t c = 0; c < model.types.size(); ++c)
        theta1_before[c] = model.hash_theta1(static_cast<int>(c));

    ProcessBank bank = ProcessBank::build(model, hist, mix_seed(model.cfg.seed, 0xBA));
    out.stage3 = train_stage3(model, hist, plan, bank, log);
    for (size_t c = 0; c < model.types.size(); ++c)
        if (model.hash_theta1(static_cast<int>(c)) != theta1_before[c])
            throw NumericError("train_full: stage 3 broke the theta_1 freeze contract");
    if (emit) emit(model, TrainStage::stage3);
    return out;
}

} // namespace flexicrime
