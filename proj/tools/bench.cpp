// Benchmark comparing the serial reference path against the OpenMP kernels:
// whole-city prediction, one stage-1 training epoch, and density quadrature.

#include <chrono>
#include <cstdio>

#include "flexicrime/parallel.hpp"
#include "flexicrime/prediction.hpp"
#include "flexicrime/synth.hpp"
#include "flexicrime/training.hpp"

using namespace flexicrime;

namespace {

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

struct World {
    Model model;
    CrimeDataset ds;
    History hist;
};

World make_world() {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.grid.bbox = {40.70, 40.76, -74.02, -73.96};
    cfg.encoding.dim = 32;
    cfg.encoding.target_dim = 32;
    cfg.attention.heads = 4;
    cfg.sampler.time_samples = 16;
    cfg.sampler.space_samples = 16;
    cfg.point_process.hidden_dim = 16;
    cfg.point_process.dynamics_hidden = 16;
    cfg.point_process.coupling_hidden = 16;
    cfg.point_process.solver_steps = 6;
    cfg.point_process.max_spatial_jumps = 6;
    cfg.prediction.sample_points = 4;
    cfg.prediction.lags = 3;
    cfg.training.batch = 48;
    cfg.training.epochs_stage1 = 1;
    cfg.training.intervals_per_day = 2;
    cfg.training.interval_hours = {12, 24};

    GeneratorSpec spec;
    spec.kind = GeneratorSpec::Kind::planted;
    spec.days = 24;
    spec.seed = 3;
    spec.bbox = cfg.grid.bbox;
    spec.rate_per_day = 2.0;
    spec.types = {"theft", "assault"};
    ClusterSpec c1{40.715, -74.012, 0.5, 0.0, 24.0, "theft", 12.0};
    ClusterSpec c2{40.745, -73.985, 0.5, 0.0, 24.0, "assault", 12.0};
    spec.clusters = {c1, c2};
    spec.poi_total = 150;
    spec.poi_cluster_boost = 40;

    World w;
    w.model.cfg = cfg;
    w.ds = generate(spec);
    w.model.grid = build_grid(cfg.grid.bbox, cfg.grid.cell_km, cfg.encoding.dim);
    assign_grids(w.ds, w.model.grid);
    attach_poi_counts(w.model.grid, generate_pois(spec));
    w.model.scaler = fit_scaler(w.ds);
    w.model.types = w.ds.types;
    w.model.day_span = w.ds.day_span();
    w.model.configure_params();
    w.model.init_params();
    w.hist = build_history(w.model, w.ds);
    return w;
}

template <class F>
double time_ms(F&& f) {
    double t0 = now_ms();
    f();
    return now_ms() - t0;
}

} // namespace

int main() {
    World w = make_world();
    std::printf("grid %dx%d, %zu events, %d threads available\n", w.model.grid.rows,
                w.model.grid.cols, w.ds.records.size(), par::max_threads());
    std::printf("%-28s %12s %12s %8s\n", "kernel", "serial ms", "openmp ms", "speedup");

    auto report = [&](const char* name, auto&& fn) {
        par::mode() = par::Mode::serial;
        double serial = time_ms(fn);
        par::mode() = par::Mode::openmp;
        double omp = time_ms(fn);
        std::printf("%-28s %12.1f %12.1f %7.2fx\n", name, serial, omp, serial / omp);
    };

    Interval iv{static_cast<double>(w.ds.day_first() + 20) + 0.5, 24.0};
    report("whole-city prediction", [&] {
        for (int c = 0; c < 2; ++c) predict_city(w.model, w.hist, nullptr, iv, c, 11);
    });

    IntervalPlan plan = generate_training_intervals(w.model, w.hist, w.ds, 5);
    report("stage-1 training epoch", [&] {
        Model m = w.model; // fresh copy so both modes start identically
        TrainLogger quiet(nullptr);
        train_stage1(m, w.hist, plan, quiet);
    });

    PackedSequence seq = pack_events(w.ds, 0, w.model.scaler);
    auto cc = event_conditioning_contexts(w.model, w.hist, seq, 5);
    FrozenProcess frozen(w.model, 0, seq, cc);
    report("density quadrature 120x120", [&] {
        quadrature_integral(
            [&](double x, double y) { return std::exp(frozen.spatial_log_density(0.5, x, y)); },
            -5, 5, -5, 5, 120);
    });

    report("conditioning contexts", [&] {
        event_conditioning_contexts(w.model, w.hist, seq, 5);
    });
    return 0;
}
