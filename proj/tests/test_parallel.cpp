#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexicrime/parallel.hpp"
#include "flexicrime/prediction.hpp"
#include "flexicrime/training.hpp"
#include "test_helpers.hpp"

using namespace flexicrime;
using testutil::make_fixture;

namespace {

struct ModeGuard {
    par::Mode saved;
    explicit ModeGuard(par::Mode m) : saved(par::mode()) { par::mode() = m; }
    ~ModeGuard() { par::mode() = saved; }
};

} // namespace

TEST_CASE("parallel_for covers every index exactly once in both modes") {
    for (par::Mode m : {par::Mode::serial, par::Mode::openmp}) {
        ModeGuard guard(m);
        std::vector<int> hits(1000, 0);
        par::parallel_for(hits.size(), [&](size_t i) { hits[i] += 1; });
        for (int h : hits) CHECK(h == 1);
    }
}

TEST_CASE("whole-city prediction is bit-identical between serial and OpenMP") {
    auto fx = make_fixture();
    Interval iv{8.0, 24.0};

    std::vector<double> serial_probs, omp_probs;
    {
        ModeGuard guard(par::Mode::serial);
        serial_probs = predict_city(fx.model, fx.hist, nullptr, iv, 0, 31);
    }
    {
        ModeGuard guard(par::Mode::openmp);
        omp_probs = predict_city(fx.model, fx.hist, nullptr, iv, 0, 31);
    }
    REQUIRE(serial_probs.size() == omp_probs.size());
    for (size_t i = 0; i < serial_probs.size(); ++i) CHECK(serial_probs[i] == omp_probs[i]);
}

TEST_CASE("a full training run is bit-identical between serial and OpenMP") {
    auto run = [](par::Mode m) {
        ModeGuard guard(m);
        auto fx = make_fixture();
        fx.model.cfg.point_process.solver_steps = 4;
        fx.model.cfg.point_process.max_spatial_jumps = 4;
        fx.model.cfg.training.epochs_stage1 = 1;
        fx.model.cfg.training.epochs_stage2 = 1;
        fx.model.cfg.training.epochs_stage3 = 1;
        TrainLogger quiet(nullptr);
        train_full(fx.model, fx.hist, fx.ds, quiet, {});
        std::vector<uint64_t> hashes = {fx.model.hash_theta0(), fx.model.hash_theta2()};
        for (size_t c = 0; c < fx.model.types.size(); ++c)
            hashes.push_back(fx.model.hash_theta1(static_cast<int>(c)));
        return hashes;
    };
    auto serial_hashes = run(par::Mode::serial);
    auto omp_hashes = run(par::Mode::openmp);
    REQUIRE(serial_hashes.size() == omp_hashes.size());
    for (size_t i = 0; i < serial_hashes.size(); ++i) CHECK(serial_hashes[i] == omp_hashes[i]);
}
