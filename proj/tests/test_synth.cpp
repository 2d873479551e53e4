#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "flexicrime/errors.hpp"

#include "flexicrime/synth.hpp"
#include "test_helpers.hpp"

using namespace flexicrime;

TEST_CASE("homogeneous poisson: count concentrates around rate * days") {
    GeneratorSpec spec;
    spec.kind = GeneratorSpec::Kind::poisson;
    spec.rate_per_day = 50.0;
    spec.days = 100;
    spec.seed = 3;
    spec.bbox = testutil::small_bbox();
    CrimeDataset ds = generate_poisson(spec);
    double mean = 5000.0, sigma = std::sqrt(5000.0);
    CHECK(std::abs(static_cast<double>(ds.records.size()) - mean) < 3.0 * sigma);
    for (const CrimeRecord& r : ds.records) {
        REQUIRE(spec.bbox.contains(r.lat, r.lon));
        REQUIRE(r.tod >= 0.0);
        REQUIRE(r.tod < 1.0);
    }
}

TEST_CASE("poisson: zero rate rejected, seeds reproduce") {
    GeneratorSpec spec;
    spec.rate_per_day = 0.0;
    CHECK_THROWS_AS(generate_poisson(spec), std::invalid_argument);

    spec.rate_per_day = 20.0;
    spec.days = 10;
    spec.seed = 99;
    CrimeDataset a = generate_poisson(spec);
    CrimeDataset b = generate_poisson(spec);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].tod == b.records[i].tod);
        CHECK(a.records[i].lat == b.records[i].lat);
    }
}

TEST_CASE("self-exciting: zero excitation matches plain poisson rate") {
    GeneratorSpec spec;
    spec.kind = GeneratorSpec::Kind::self_exciting;
    spec.rate_per_day = 20.0;
    spec.branching = 0.0;
    spec.days = 300;
    spec.seed = 5;
    CrimeDataset ds = generate_self_exciting(spec);
    double rate = static_cast<double>(ds.records.size()) / spec.days;
    CHECK(rate == doctest::Approx(20.0).epsilon(0.05));
}

TEST_CASE("self-exciting: subcritical mean rate base/(1-branching)") {
    GeneratorSpec spec;
    spec.kind = GeneratorSpec::Kind::self_exciting;
    spec.rate_per_day = 10.0;
    spec.branching = 0.5;
    spec.decay_per_day = 12.0;
    spec.days = 400;
    spec.seed = 8;
    CrimeDataset ds = generate_self_exciting(spec);
    double rate = static_cast<double>(ds.records.size()) / spec.days;
    CHECK(rate == doctest::Approx(20.0).epsilon(0.10));

    SUBCASE("deterministic under seed") {
        CrimeDataset again = generate_self_exciting(spec);
        REQUIRE(again.records.size() == ds.records.size());
        CHECK(again.records[5].tod == ds.records[5].tod);
    }
}

TEST_CASE("self-exciting: supercritical spec rejected") {
    GeneratorSpec spec;
    spec.kind = GeneratorSpec::Kind::self_exciting;
    spec.branching = 1.2;
    CHECK_THROWS_AS(generate_self_exciting(spec), std::invalid_argument);
}

TEST_CASE("planted clusters: cluster types stay inside their regions") {
    GeneratorSpec spec = testutil::small_planted_spec();
    CrimeDataset ds = generate_planted(spec);
    REQUIRE(ds.records.size() > 100);

    for (size_t c = 0; c < spec.clusters.size(); ++c) {
        const ClusterSpec& cl = spec.clusters[c];
        int type = ds.type_id(cl.type);
        REQUIRE(type >= 0);
        long inside = 0, total = 0;
        for (const CrimeRecord& r : ds.records) {
            if (r.type != type) continue;
            ++total;
            double dlat = (r.lat - cl.lat) * kKmPerDegLat;
            double dlon = (r.lon - cl.lon) * kKmPerDegLat *
                          std::cos(cl.lat * std::numbers::pi / 180.0);
            if (dlat * dlat + dlon * dlon <= cl.radius_km * cl.radius_km * 1.0001) ++inside;
        }
        CHECK(static_cast<double>(inside) >= 0.9 * static_cast<double>(total));
    }

    SUBCASE("deterministic under seed") {
        CrimeDataset again = generate_planted(spec);
        CHECK(again.records.size() == ds.records.size());
    }
    SUBCASE("overwhelming background rejected") {
        GeneratorSpec bad = spec;
        bad.rate_per_day = 500.0;
        CHECK_THROWS_AS(generate_planted(bad), ConfigError);
    }
}

TEST_CASE("quadrature: standard gaussian mass and exact constants") {
    auto gauss = [](double x, double y) {
        return std::exp(-0.5 * (x * x + y * y)) / (2.0 * std::numbers::pi);
    };
    double mass = quadrature_integral(gauss, -6, 6, -6, 6, 200);
    CHECK(mass == doctest::Approx(1.0).epsilon(0.005));

    auto unit = [](double, double) { return 1.0; };
    CHECK(quadrature_integral(unit, 0, 1, 0, 1, 50) == doctest::Approx(1.0));

    // trapezoid converges at second order: halving h shrinks error ~4x
    auto f = [](double x, double y) { return std::sin(x) * std::cos(y) + 2.0; };
    double exact = (std::cos(0.0) - std::cos(1.0)) * std::sin(1.0) + 2.0;
    double e_coarse = std::abs(quadrature_integral(f, 0, 1, 0, 1, 51) - exact);
    double e_fine = std::abs(quadrature_integral(f, 0, 1, 0, 1, 101) - exact);
    CHECK(e_coarse < 4.0 * e_fine * 1.5);
    CHECK(e_fine < e_coarse);
}

TEST_CASE("finite differences agree with hand gradients") {
    // quadratic: f = sum x_i^2, grad = 2x
    std::vector<double> x = {0.3, -1.2, 2.0};
    std::vector<double> grad = {0.6, -2.4, 4.0};
    auto quad = [](std::span<const double> v) {
        double acc = 0.0;
        for (double t : v) acc += t * t;
        return acc;
    };
    CHECK(finite_diff_max_rel_error(quad, x, grad, 1e-5) < 1e-8);

    // linear: exact match up to roundoff
    auto lin = [](std::span<const double> v) { return 3.0 * v[0] - 2.0 * v[1] + v[2]; };
    std::vector<double> lin_grad = {3.0, -2.0, 1.0};
    CHECK(finite_diff_max_rel_error(lin, x, lin_grad, 1e-5) < 1e-9);

    // and it must catch wrong gradients
    std::vector<double> wrong = {0.6, -2.4, 3.0};
    CHECK(finite_diff_max_rel_error(quad, x, wrong, 1e-5) > 0.1);
}

TEST_CASE("generator spec files parse strictly") {
    GeneratorSpec s = parse_generator_spec(
        R"({"kind":"self_exciting","days":20,"seed":4,"rate_per_day":10,"branching":0.3})");
    CHECK(s.kind == GeneratorSpec::Kind::self_exciting);
    CHECK(s.days == 20);
    CHECK(s.branching == doctest::Approx(0.3));
    CHECK_THROWS_AS(parse_generator_spec(R"({"kind":"poisson","ratee":5})"), ConfigError);
    CHECK_THROWS_AS(parse_generator_spec(R"({"kind":"warp"})"), ConfigError);
    CHECK_THROWS_AS(parse_generator_spec("not json"), ConfigError);
}

TEST_CASE("synthetic pois cover clusters and write valid csv") {
    GeneratorSpec spec = testutil::small_planted_spec();
    PoiTable pois = generate_pois(spec);
    CHECK(pois.categories.size() == static_cast<size_t>(spec.poi_categories));
    CHECK(pois.rows.size() ==
          static_cast<size_t>(spec.poi_total + spec.poi_cluster_boost * 2));
    std::string path = "synth_pois_test.csv";
    write_poi_csv(pois, path);
    PoiTable back = ingest_pois(path);
    CHECK(back.rows.size() == pois.rows.size());
    CHECK(back.categories.size() == pois.categories.size());
    std::remove(path.c_str());
}
