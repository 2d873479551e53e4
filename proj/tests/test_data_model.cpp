#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "flexicrime/checkpoint.hpp"
#include "flexicrime/errors.hpp"
#include "test_helpers.hpp"

using namespace flexicrime;

namespace {

// bbox whose sides measure the requested kilometers at the given anchor
BoundingBox box_of_km(double lat0, double lon0, double lat_km, double lon_km) {
    BoundingBox b;
    b.lat_min = lat0;
    b.lat_max = lat0 + lat_km / kKmPerDegLat;
    b.lon_min = lon0;
    double mid = lat0 + 0.5 * lat_km / kKmPerDegLat;
    b.lon_max = lon0 + lon_km / (kKmPerDegLat * std::cos(mid * std::numbers::pi / 180.0));
    return b;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p, const std::string& text) : path(std::move(p)) {
        write_file(path, text);
    }
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("build_grid: exact tiling and ceiling rule") {
    CityGrid g = build_grid(box_of_km(40.70, -74.00, 2.0, 2.0), 1.0, 16);
    CHECK(g.rows == 2);
    CHECK(g.cols == 2);
    CHECK(g.cell_count() == 4);

    CityGrid g2 = build_grid(box_of_km(40.70, -74.00, 2.5, 1.0), 1.0, 16);
    CHECK(g2.rows == 3);
    CHECK(g2.cols == 1);

    for (int cell = 0; cell < g2.cell_count(); ++cell) {
        auto [lat, lon] = g2.center(cell);
        CHECK(g2.bbox.contains(lat, lon));
    }
}

TEST_CASE("build_grid rejects bad arguments") {
    BoundingBox degenerate{40.7, 40.7, -74.0, -73.9};
    CHECK_THROWS_AS(build_grid(degenerate, 1.0, 16), ConfigError);
    CHECK_THROWS_AS(build_grid(testutil::small_bbox(), 1.0, 15), ConfigError);
    CHECK_THROWS_AS(build_grid(testutil::small_bbox(), 0.0, 16), ConfigError);
}

TEST_CASE("map_to_grid: centers, boundary rule, brute-force agreement") {
    CityGrid g = build_grid(box_of_km(40.70, -74.00, 4.0, 3.0), 1.0, 16);

    for (int cell = 0; cell < g.cell_count(); ++cell) {
        auto [lat, lon] = g.center(cell);
        CHECK(map_to_grid(g, lat, lon) == cell);
    }
    // a hair inside the max corner lands in the last cell
    CHECK(map_to_grid(g, g.bbox.lat_max - 1e-9, g.bbox.lon_max - 1e-9) == g.cell_count() - 1);
    // the max edge itself belongs to the last cell
    CHECK(map_to_grid(g, g.bbox.lat_max, g.bbox.lon_max) == g.cell_count() - 1);
    CHECK_THROWS_AS(map_to_grid(g, g.bbox.lat_max + 0.01, g.bbox.lon_min), std::out_of_range);

    // exhaustive containment oracle on random points
    Rng rng(123);
    for (int i = 0; i < 1000; ++i) {
        double lat = rng.uniform(g.bbox.lat_min, g.bbox.lat_max);
        double lon = rng.uniform(g.bbox.lon_min, g.bbox.lon_max);
        int got = map_to_grid(g, lat, lon);
        int expect = -1;
        for (int r = 0; r < g.rows && expect < 0; ++r) {
            for (int c = 0; c < g.cols; ++c) {
                double lo_lat = g.bbox.lat_min + r * g.lat_step;
                double hi_lat = (r == g.rows - 1) ? g.bbox.lat_max + 1e-30
                                                  : g.bbox.lat_min + (r + 1) * g.lat_step;
                double lo_lon = g.bbox.lon_min + c * g.lon_step;
                double hi_lon = (c == g.cols - 1) ? g.bbox.lon_max + 1e-30
                                                  : g.bbox.lon_min + (c + 1) * g.lon_step;
                if (lat >= lo_lat && lat < hi_lat + (r == g.rows - 1 ? 1.0 : 0.0) * 1e-30 &&
                    lon >= lo_lon && lon < hi_lon + 1e-30 && lat < hi_lat + 1e-30) {
                    expect = g.cell_of(r, c);
                    break;
                }
            }
        }
        REQUIRE(expect >= 0);
        CHECK(got == expect);
    }
}

TEST_CASE("ingest_events: parsing, sorting, skipping") {
    CityGrid g = build_grid(testutil::small_bbox(), 1.0, 16);

    SUBCASE("three well-formed rows") {
        TempFile f("events_a.csv", "type,datetime,lat,lon\n"
                                   "theft,2024-01-02T10:30,40.71,-74.00\n"
                                   "theft,2024-01-01T09:00,40.72,-74.01\n"
                                   "assault,2024-01-01T23:59,40.73,-73.99\n");
        CrimeDataset ds = ingest_events(f.path, g);
        CHECK(ds.records.size() == 3);
        CHECK(ds.types.size() == 2);
        // sorted ascending by (day, tod)
        CHECK(ds.records[0].tod == doctest::Approx(9.0 / 24.0));
        CHECK(ds.records[1].tod == doctest::Approx(23.0 / 24.0 + 59.0 / 1440.0));
        CHECK(ds.records[2].day == 1);
        // per-type views partition the records
        size_t total = 0;
        for (const auto& v : ds.by_type) total += v.size();
        CHECK(total == ds.records.size());
        // every record maps in-bounds
        for (const CrimeRecord& r : ds.records) CHECK(r.grid_id >= 0);
    }

    SUBCASE("malformed rows are skipped and counted") {
        TempFile f("events_b.csv", "type,datetime,lat,lon\n"
                                   "theft,2024-01-01T10:00,40.71,-74.00\n"
                                   "theft,not-a-date,40.71,-74.00\n"
                                   "theft,2024-01-01T11:00,oops,-74.00\n"
                                   "theft,2024-01-01T12:00,1.0,2.0\n");
        CrimeDataset ds = ingest_events(f.path, g);
        CHECK(ds.records.size() == 1);
        CHECK(ds.skipped_rows == 3);
    }

    SUBCASE("wrong header and empty data fail") {
        TempFile f("events_c.csv", "kind,when,lat,lon\n");
        CHECK_THROWS_AS(ingest_events(f.path, g), DataError);
        TempFile f2("events_d.csv", "type,datetime,lat,lon\n");
        CHECK_THROWS_AS(ingest_events(f2.path, g), DataError);
        CHECK_THROWS_AS(ingest_events("no_such_file.csv", g), DataError);
    }

    SUBCASE("csv round trip preserves records") {
        GeneratorSpec spec = testutil::small_planted_spec();
        CrimeDataset ds = generate(spec);
        write_events_csv(ds, "events_rt.csv");
        CrimeDataset back = ingest_events("events_rt.csv", g);
        CHECK(back.records.size() == ds.records.size());
        std::remove("events_rt.csv");
    }
}

TEST_CASE("ingest_pois: vocabulary, bbox filter, per-cell recount oracle") {
    CityGrid g = build_grid(testutil::small_bbox(), 1.0, 16);
    TempFile f("pois_a.csv", "venue,category,lat,lon\n"
                             "a,food,40.71,-74.00\n"
                             "b,retail,40.71,-74.00\n"
                             "c,food,40.73,-73.99\n"
                             "d,food,0.0,0.0\n");
    PoiTable pois = ingest_pois(f.path, &g.bbox);
    CHECK(pois.categories.size() == 2);
    CHECK(pois.out_of_bbox == 1);
    CHECK(pois.rows.size() == 3);

    attach_poi_counts(g, pois);
    // brute-force recount
    std::vector<double> counts(static_cast<size_t>(g.cell_count()) * 2, 0.0);
    for (const PoiRecord& p : pois.rows) {
        int cell = map_to_grid(g, p.lat, p.lon);
        int cat = p.category == "food" ? 0 : 1;
        counts[static_cast<size_t>(cell) * 2 + cat] += 1.0;
    }
    for (size_t i = 0; i < counts.size(); ++i)
        CHECK(g.count_features[i] == doctest::Approx(std::log1p(counts[i])));
}

TEST_CASE("region embeddings from poi counts") {
    auto fx = testutil::make_fixture();
    Model& m = fx.model;

    SUBCASE("zero-count cell with zero bias gives a zero embedding") {
        CityGrid g = build_grid(testutil::small_bbox(), 1.0, m.cfg.encoding.dim);
        PoiTable empty;
        attach_poi_counts(g, empty);
        Model m2 = m;
        m2.grid = g;
        m2.configure_params();
        m2.init_params(); // biases are zero-initialized
        materialize_region_embeddings(m2);
        for (double v : m2.grid.embeddings) CHECK(v == 0.0);
    }

    SUBCASE("identical count vectors give identical embeddings") {
        // cells with zero PoIs all share the zero feature vector
        std::vector<int> zero_cells;
        int k = m.grid.poi_categories;
        for (int cell = 0; cell < m.grid.cell_count() && zero_cells.size() < 2; ++cell) {
            bool zero = true;
            for (int c = 0; c < k; ++c)
                if (m.grid.count_features[static_cast<size_t>(cell) * k + c] != 0.0) zero = false;
            if (zero) zero_cells.push_back(cell);
        }
        REQUIRE(zero_cells.size() == 2);
        int d = m.grid.embed_dim;
        for (int j = 0; j < d; ++j)
            CHECK(m.grid.embeddings[static_cast<size_t>(zero_cells[0]) * d + j] ==
                  m.grid.embeddings[static_cast<size_t>(zero_cells[1]) * d + j]);
    }

    SUBCASE("log damping keeps huge counts finite") {
        Model m2 = m;
        m2.grid.count_features[0] = std::log1p(1e6);
        materialize_region_embeddings(m2);
        for (double v : m2.grid.embeddings) CHECK(std::isfinite(v));
    }
}

TEST_CASE("pack_events: day folding, tie-break, round trip") {
    auto fx = testutil::make_fixture();
    CrimeDataset ds;
    ds.types = {"theft"};
    ds.epoch_civil_day = 0;
    CrimeRecord a;
    a.day = 0;
    a.tod = 0.9;
    a.lat = 40.71;
    a.lon = -74.0;
    a.type = 0;
    a.grid_id = 0;
    CrimeRecord b = a;
    b.day = 1;
    b.tod = 0.1;
    CrimeRecord c = a;
    c.day = 2;
    c.tod = 0.9; // ties with `a` on time of day; later date loses
    ds.records = {a, b, c};
    ds.by_type = {{0, 1, 2}};

    PackedSequence seq = pack_events(ds, 0, fx.model.scaler);
    REQUIRE(seq.events.size() == 3);
    CHECK(seq.events[0].tod == doctest::Approx(0.1));
    CHECK(seq.events[1].tod == doctest::Approx(0.9));
    CHECK(seq.events[1].day == 0); // earlier date first on ties
    CHECK(seq.events[2].day == 2);
    CHECK(seq.day_span == 3);

    // unpacking recovers the original record multiset
    std::vector<int> seen(3, 0);
    for (const PackedEvent& e : seq.events) seen[static_cast<size_t>(e.orig_index)]++;
    for (int s : seen) CHECK(s == 1);

    CHECK_THROWS_AS(pack_events(ds, 5, fx.model.scaler), std::invalid_argument);
}

TEST_CASE("label_interval: zeros, single hit, brute-force oracle, idempotence") {
    auto fx = testutil::make_fixture();
    const Model& m = fx.model;
    const CrimeDataset& ds = fx.ds;

    Interval empty_iv{ds.day_first() + 0.25, 0.02};
    auto no_events = label_interval(ds, m.grid, empty_iv, 0);

    Interval iv{static_cast<double>(ds.day_first() + 2), 24.0};
    auto lab = label_interval(ds, m.grid, iv, 0);
    // brute-force per-cell scan
    std::vector<uint8_t> expect(static_cast<size_t>(m.grid.cell_count()), 0);
    for (const CrimeRecord& r : ds.records) {
        if (r.type != 0) continue;
        double t = r.abs_time();
        if (t >= iv.start && t < iv.end()) expect[static_cast<size_t>(r.grid_id)] = 1;
    }
    CHECK(lab == expect);
    CHECK(label_interval(ds, m.grid, iv, 0) == lab); // idempotent

    CHECK_THROWS_AS(label_interval(ds, m.grid, Interval{-50.0, 24.0}, 0), std::out_of_range);
    CHECK_THROWS_AS(label_interval(ds, m.grid, Interval{1e6, 24.0}, 0), std::out_of_range);

    // single planted event in one cell
    CrimeDataset tiny;
    tiny.types = {"theft"};
    CrimeRecord r;
    r.day = 0;
    r.tod = 0.5;
    r.lat = 40.71;
    r.lon = -74.0;
    r.type = 0;
    r.grid_id = map_to_grid(m.grid, r.lat, r.lon);
    tiny.records = {r};
    tiny.by_type = {{0}};
    auto one = label_interval(tiny, m.grid, Interval{0.0, 24.0}, 0);
    int hits = 0;
    for (size_t i = 0; i < one.size(); ++i)
        if (one[i]) {
            ++hits;
            CHECK(static_cast<int>(i) == r.grid_id);
        }
    CHECK(hits == 1);
}

TEST_CASE("split_dataset: chronological ratio with no leakage") {
    GeneratorSpec spec = testutil::small_planted_spec();
    spec.days = 16;
    CrimeDataset ds = generate(spec);

    auto [train, test] = split_dataset(ds, 7, 1);
    CHECK(train.records.size() + test.records.size() == ds.records.size());
    CHECK(train.day_last() < test.day_first());
    CHECK(train.day_span() == 14);

    GeneratorSpec spec8 = spec;
    spec8.days = 8;
    CrimeDataset ds8 = generate(spec8);
    auto [tr8, te8] = split_dataset(ds8, 7, 1);
    CHECK(tr8.day_span() == 7);
    CHECK(te8.day_first() == 7);

    GeneratorSpec tiny = spec;
    tiny.days = 5;
    CrimeDataset ds5 = generate(tiny);
    CHECK_THROWS_AS(split_dataset(ds5, 7, 1), std::invalid_argument);
}

TEST_CASE("datetime parse and format") {
    int64_t day;
    double tod;
    REQUIRE(parse_iso_minutes("2024-03-05T07:45", day, tod));
    CHECK(tod == doctest::Approx((7 * 60 + 45) / 1440.0));
    CHECK(format_iso_minutes(day, tod) == "2024-03-05T07:45");
    REQUIRE(parse_iso_minutes("2024-03-05 07:45:30", day, tod));
    CHECK(!parse_iso_minutes("2024-3-05T07:45", day, tod));
    CHECK(!parse_iso_minutes("2024-13-05T07:45", day, tod));
    CHECK(!parse_iso_minutes("garbage", day, tod));
}
