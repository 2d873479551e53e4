#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "flexicrime/prediction.hpp"

namespace flexicrime {

struct TrainQuery {
    Interval iv;
    int type = 0;
};

// Whole-city training queries with precomputed labels.
struct IntervalPlan {
    std::vector<TrainQuery> queries;
    std::vector<std::vector<uint8_t>> labels; // per query, one byte per cell
};

// Per training day: one interval per configured length at a seeded start hour
// on the 1-hour lattice, capped at intervals_per_day, crossed with every
// type. Intervals without enough pre-start history are dropped.
IntervalPlan generate_training_intervals(const Model& model, const History& hist,
                                         const CrimeDataset& ds, uint64_t seed);

// Line-JSON training log sink; null stream disables logging.
class TrainLogger {
public:
    explicit TrainLogger(std::ostream* out = nullptr) : out_(out) {}
    void log(int stage, int epoch, double loss, double wall_ms);

private:
    std::ostream* out_;
};

struct StageResult {
    std::vector<double> loss_trace;
};

// stage 1: hotspot loss with evolving features pinned to zero; trains
// theta_0 and theta_2.
StageResult train_stage1(Model& model, const History& hist, const IntervalPlan& plan,
                         TrainLogger& log);

// stage 2: per-type maximum likelihood with theta_0 frozen. Failures are
// isolated per type and reported in `errors` (empty string = trained).
struct Stage2Result {
    std::vector<std::vector<double>> nll_traces; // per type
    std::vector<std::string> errors;             // per type
};
Stage2Result train_stage2(Model& model, const History& hist, TrainLogger& log);

// stage 3: hotspot loss with both feature families, theta_1 frozen.
StageResult train_stage3(Model& model, const History& hist, const IntervalPlan& plan,
                         const ProcessBank& bank, TrainLogger& log);

struct FullTrainResult {
    StageResult stage1;
    Stage2Result stage2;
    StageResult stage3;
};

// Runs the three stages in order, invoking `emit` after each stage completes
// (checkpointing hook). Throws NumericError with a stage tag on divergence.
FullTrainResult train_full(Model& model, const History& hist, const CrimeDataset& train_ds,
                           TrainLogger& log,
                           const std::function<void(const Model&, TrainStage)>& emit = {});

} // namespace flexicrime
