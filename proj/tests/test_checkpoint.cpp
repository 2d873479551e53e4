#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "flexicrime/checkpoint.hpp"
#include "flexicrime/config.hpp"
#include "flexicrime/errors.hpp"
#include "test_helpers.hpp"

using namespace flexicrime;
using testutil::make_fixture;

TEST_CASE("checkpoint round trip is bit-exact") {
    auto fx = make_fixture();
    Model& m = fx.model;
    // make the values less tidy than raw initialization
    Rng rng(9);
    m.theta0.for_each_block([&](ParamBlock& b) {
        for (double& w : b.w) w += rng.normal(0.0, 0.371);
    });
    m.stage = TrainStage::stage2;

    std::string text = checkpoint_to_json(m);
    Model back = checkpoint_from_json(text);
    CHECK(back.hash_theta0() == m.hash_theta0());
    CHECK(back.hash_theta2() == m.hash_theta2());
    for (size_t c = 0; c < m.types.size(); ++c)
        CHECK(back.hash_theta1(static_cast<int>(c)) == m.hash_theta1(static_cast<int>(c)));
    CHECK(back.stage == TrainStage::stage2);
    CHECK(back.types == m.types);
    CHECK(back.day_span == m.day_span);
    CHECK(back.grid.rows == m.grid.rows);
    CHECK(back.grid.count_features == m.grid.count_features);
    CHECK(back.scaler.mean_lat == m.scaler.mean_lat);

    SUBCASE("file round trip") {
        save_checkpoint(m, "ckpt_test.json");
        Model loaded = load_checkpoint("ckpt_test.json");
        CHECK(loaded.hash_theta0() == m.hash_theta0());
        CHECK(checkpoint_to_json(loaded) == text);
        std::remove("ckpt_test.json");
    }
}

TEST_CASE("checkpoint refuses foreign, corrupt, and mismatched documents") {
    CHECK_THROWS_AS(checkpoint_from_json("{\"format\":\"something-else\"}"), CheckpointError);
    CHECK_THROWS_AS(checkpoint_from_json("{ not json"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint("missing_file.json"), CheckpointError);

    auto fx = make_fixture();
    std::string text = checkpoint_to_json(fx.model);

    SUBCASE("version bump is refused") {
        std::string bumped = text;
        auto pos = bumped.find("\"version\":1");
        REQUIRE(pos != std::string::npos);
        bumped.replace(pos, 11, "\"version\":9");
        CHECK_THROWS_AS(checkpoint_from_json(bumped), CheckpointError);
    }

    SUBCASE("missing parameter block is refused") {
        auto pos = text.find("theta0.w_msa");
        REQUIRE(pos != std::string::npos);
        std::string renamed = text;
        renamed.replace(pos, 12, "theta0.w_xxx");
        CHECK_THROWS_AS(checkpoint_from_json(renamed), CheckpointError);
    }
}

TEST_CASE("run config: defaults, strict keys, overrides") {
    RunConfig def = parse_config_json("{}");
    CHECK(def.encoding.dim == 64);
    CHECK(def.attention.heads == 4);
    CHECK(def.prediction.sample_points == 4);
    CHECK(def.sampler.time_samples == 32);
    CHECK(def.training.batch == 48);
    CHECK(def.training.lr == doctest::Approx(0.0005));
    CHECK(def.training.weight_decay == doctest::Approx(0.00005));

    RunConfig cfg = parse_config_json(R"({"encoding":{"dim":32},"attention":{"heads":2}})");
    CHECK(cfg.encoding.dim == 32);

    CHECK_THROWS_AS(parse_config_json(R"({"encodig":{"dim":32}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"({"encoding":{"dmi":32}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"({"encoding":{"dim":33}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"({"attention":{"heads":3},"encoding":{"dim":64}})"),
                    ConfigError); // dim not divisible by heads
    CHECK_THROWS_AS(parse_config_json(R"({"training":{"batch":0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_json("[1,2]"), ConfigError);

    SUBCASE("dotted overrides win and are validated") {
        RunConfig c = parse_config_json("{}");
        apply_override(c, "training.batch=16");
        CHECK(c.training.batch == 16);
        apply_override(c, "grid.cell_km=0.5");
        CHECK(c.grid.cell_km == doctest::Approx(0.5));
        CHECK_THROWS_AS(apply_override(c, "training.nope=1"), ConfigError);
        CHECK_THROWS_AS(apply_override(c, "training.batch=-2"), ConfigError);
        CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);
    }

    SUBCASE("config survives a json round trip") {
        RunConfig c = parse_config_json(R"({"seed":42,"training":{"lr":0.001}})");
        RunConfig c2 = parse_config_json(config_to_json(c));
        CHECK(c2.seed == 42);
        CHECK(c2.training.lr == doctest::Approx(0.001));
    }
}
