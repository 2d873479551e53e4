#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexicrime/geo.hpp"

namespace flexicrime {

struct GridConfig {
    BoundingBox bbox{40.70, 40.88, -74.02, -73.90}; // default: Manhattan-ish box
    double cell_km = 1.0;
};

struct EncodingConfig {
    int dim = 64;        // temporal/spatial encoding and context width d
    int target_dim = 64; // target-aware encoding width d*
};

struct SamplerConfig {
    int time_samples = 32;  // |R_0|
    int space_samples = 32; // |R_1|
    bool replacement = false;
};

struct AttentionConfig {
    int heads = 4;
};

struct PointProcessConfig {
    int hidden_dim = 64;      // d_h
    int dynamics_hidden = 64; // hidden width of f_t / f_s (0 = affine dynamics)
    int coupling_hidden = 32; // hidden width of the jump conditioners
    int solver_steps = 20;    // RK4 steps per inter-event segment
    int max_spatial_jumps = 0; // 0 = unlimited (exact change-of-variables history)
    int chunk_events = 128;   // events per truncated-BPTT chunk in MLE training
    double init_scale = 0.1;
};

struct PredictionConfig {
    int sample_points = 4; // l
    int lags = 7;          // L, extrapolator history length
};

struct TrainingConfig {
    double lr = 0.0005;
    double weight_decay = 0.00005;
    double lr_mle = 0.005;          // stage-2 step size (per-event-normalized chunks)
    std::string mle_optimizer = "adam"; // "adam" or "sgd" for the likelihood stage
    int batch = 48;
    int epochs_stage1 = 30;
    int epochs_stage2 = 50;
    int epochs_stage3 = 30;
    int intervals_per_day = 4;
    std::vector<int> interval_hours = {6, 12, 24};
};

struct EvaluationConfig {
    double threshold = 0.5;
    int hr_k = 10;
};

struct RunConfig {
    uint64_t seed = 1;
    GridConfig grid;
    EncodingConfig encoding;
    SamplerConfig sampler;
    AttentionConfig attention;
    PointProcessConfig point_process;
    PredictionConfig prediction;
    TrainingConfig training;
    EvaluationConfig evaluation;

    void validate() const; // throws ConfigError
};

// Strict JSON loader: unknown keys anywhere in the document are rejected.
RunConfig load_config(const std::string& path);
RunConfig parse_config_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);

// Dotted-path override, e.g. "training.batch=16"; flag wins over file.
void apply_override(RunConfig& cfg, const std::string& assignment);

} // namespace flexicrime
