#pragma once

#include <array>
#include <string>
#include <vector>

#include "flexicrime/config.hpp"
#include "flexicrime/dataset.hpp"
#include "flexicrime/encoding.hpp"
#include "flexicrime/geo.hpp"
#include "flexicrime/params.hpp"

namespace flexicrime {

// Theta_0: region projection, encoders, attention, and the context
// extrapolator GRU.
struct ContextParams {
    ParamBlock region_w, region_b; // PoI count features -> grid embedding
    TemporalEncoderParams temporal;
    TargetAwareParams target;
    struct Head {
        ParamBlock q, k;
    };
    std::vector<Head> heads;
    ParamBlock w_msa;
    GruParams extrap;

    int dim = 0, target_dim = 0, head_dim = 0, n_heads = 0;

    void configure(const EncodingConfig& enc, const AttentionConfig& att, int poi_categories,
                   int n_types);
    void init(uint64_t seed);
    template <class F>
    void for_each_block(F&& f) {
        f(region_w); f(region_b);
        f(temporal.omega); f(temporal.alpha);
        f(target.w_loc); f(target.w_type);
        for (auto& h : heads) { f(h.q); f(h.k); }
        f(w_msa);
        extrap.for_each_block(f);
    }
    template <class F>
    void for_each_block(F&& f) const {
        f(region_w); f(region_b);
        f(temporal.omega); f(temporal.alpha);
        f(target.w_loc); f(target.w_type);
        for (const auto& h : heads) { f(h.q); f(h.k); }
        f(w_msa);
        extrap.for_each_block(f);
    }
};

// Theta_1^c: one type-aware spatiotemporal point process.
struct ProcessParams {
    Mlp f_t;          // [tau, h, day features] -> dh/dtau
    GruParams psi_t;  // jump at events, input [tau, v_type, day features]
    ParamBlock lam_w, lam_b; // softplus intensity head
    Mlp f_s;          // [tau, s, h] -> ds/dtau
    Mlp couple_cond;  // [tau, h, cc] -> (raw scale, shift) for coordinate 2
    Mlp couple_coord; // [tau, h, cc, s2'] -> (raw scale, shift) for coordinate 1
    ParamBlock h0;    // per-run Gaussian initial state, frozen after init

    int hidden_dim = 0;
    int type_dim = 0;   // v_type width
    int cc_dim = 0;
    int self_type = -1; // the crime type this process models

    void configure(const std::string& name, const PointProcessConfig& pp, int target_dim,
                   int context_dim);
    void init(uint64_t seed, double scale);
    template <class F>
    void for_each_trainable(F&& f) {
        f_t.for_each_block(f);
        psi_t.for_each_block(f);
        f(lam_w); f(lam_b);
        f_s.for_each_block(f);
        couple_cond.for_each_block(f);
        couple_coord.for_each_block(f);
    }
    template <class F>
    void for_each_block(F&& f) { // trainables + frozen h0, for serialization
        for_each_trainable(f);
        f(h0);
    }
    template <class F>
    void for_each_block(F&& f) const {
        const_cast<ProcessParams*>(this)->for_each_block(
            [&](ParamBlock& b) { f(static_cast<const ParamBlock&>(b)); });
    }
};

// Theta_2: evolving-feature encoder and the hotspot prediction head.
struct PredictionParams {
    Mlp evolve; // [log risk, h, day features, dt, ds] -> d
    Mlp head;   // (2l-1)*d -> 1

    void configure(const EncodingConfig& enc, const PointProcessConfig& pp,
                   const PredictionConfig& pred);
    void init(uint64_t seed, double scale);
    template <class F>
    void for_each_block(F&& f) {
        evolve.for_each_block(f);
        head.for_each_block(f);
    }
    template <class F>
    void for_each_block(F&& f) const {
        evolve.for_each_block(f);
        head.for_each_block(f);
    }
};

enum class TrainStage { fresh = 0, stage1 = 1, stage2 = 2, stage3 = 3 };

struct Model {
    RunConfig cfg;
    CityGrid grid;
    CoordScaler scaler;
    std::vector<std::string> types;
    int day_span = 1; // of the training data; normalizes the day-index feature
    TrainStage stage = TrainStage::fresh;

    ContextParams theta0;
    std::vector<ProcessParams> theta1; // one per type
    PredictionParams theta2;

    void configure_params();           // sizes from cfg/grid/types
    void init_params();                // seeded from cfg.seed
    double cell_area_std() const { return scaler.cell_area_std(grid.lat_step, grid.lon_step); }

    BlockSet blocks_theta0();
    BlockSet blocks_theta1(int type);
    BlockSet blocks_theta2();
    uint64_t hash_theta0() const;
    uint64_t hash_theta1(int type) const;
    uint64_t hash_theta2() const;
    double all_squared_norm(); // over every trainable group

    // day-of-week one-hot plus normalized day index
    static constexpr int kDayFeatures = 8;
    std::array<double, kDayFeatures> day_features(int day) const;
};

// Per-dataset caches: absolute times, standardized coordinates, and the
// parameter-free spatial encodings of events and cell centers.
struct History {
    const CrimeDataset* ds = nullptr;
    std::vector<double> abs_t, x, y;
    std::vector<std::vector<double>> event_spatial; // v_s per record
    std::vector<std::vector<double>> cell_spatial;  // v_g per cell
    std::vector<double> cell_x, cell_y;

    // records strictly before t (records are sorted by time)
    int count_before(double t) const;
};

History build_history(const Model& model, const CrimeDataset& ds);

} // namespace flexicrime
