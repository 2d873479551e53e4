#include "flexicrime/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "flexicrime/errors.hpp"
#include "flexicrime/parallel.hpp"
#include "flexicrime/rng.hpp"

namespace flexicrime {

namespace {

int poisson_count(Rng& rng, double lambda) {
    if (lambda <= 0.0) return 0;
    // Knuth's product method; fine for the rates used here
    double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > limit);
    return k - 1;
}

struct RawEvent {
    double t = 0.0; // absolute days
    double lat = 0.0, lon = 0.0;
    int type = 0;
};

CrimeDataset to_dataset(std::vector<RawEvent> events, const std::vector<std::string>& types) {
    std::sort(events.begin(), events.end(),
              [](const RawEvent& a, const RawEvent& b) { return a.t < b.t; });
    CrimeDataset ds;
    ds.types = types;
    ds.epoch_civil_day = civil_day_number(2024, 1, 1);
    ds.records.reserve(events.size());
    for (const RawEvent& e : events) {
        CrimeRecord r;
        r.day = static_cast<int>(std::floor(e.t));
        r.tod = e.t - r.day;
        r.lat = e.lat;
        r.lon = e.lon;
        r.type = e.type;
        ds.records.push_back(r);
    }
    ds.by_type.assign(types.size(), {});
    for (size_t i = 0; i < ds.records.size(); ++i)
        ds.by_type[static_cast<size_t>(ds.records[i].type)].push_back(static_cast<int>(i));
    return ds;
}

void validate_common(const GeneratorSpec& spec) {
    if (spec.days < 1) throw std::invalid_argument("generator: days must be at least 1");
    if (spec.types.empty()) throw std::invalid_argument("generator: need at least one type");
    if (!(spec.bbox.lat_max > spec.bbox.lat_min) || !(spec.bbox.lon_max > spec.bbox.lon_min))
        throw std::invalid_argument("generator: degenerate bbox");
}

double lon_deg_per_km(const BoundingBox& b) {
    return 1.0 / (kKmPerDegLat * std::cos(b.mid_lat() * std::numbers::pi / 180.0));
}

} // namespace

CrimeDataset generate_poisson(const GeneratorSpec& spec) {
    validate_common(spec);
    if (!(spec.rate_per_day > 0.0))
        throw std::invalid_argument("generate_poisson: rate must be positive");
    Rng rng(spec.seed);
    std::vector<RawEvent> events;
    double t = rng.exponential(spec.rate_per_day);
    while (t < spec.days) {
        RawEvent e;
        e.t = t;
        e.lat = rng.uniform(spec.bbox.lat_min, spec.bbox.lat_max);
        e.lon = rng.uniform(spec.bbox.lon_min, spec.bbox.lon_max);
        e.type = static_cast<int>(rng.below(spec.types.size()));
        events.push_back(e);
        t += rng.exponential(spec.rate_per_day);
    }
    return to_dataset(std::move(events), spec.types);
}

CrimeDataset generate_self_exciting(const GeneratorSpec& spec) {
    validate_common(spec);
    if (!(spec.rate_per_day > 0.0))
        throw std::invalid_argument("generate_self_exciting: base rate must be positive");
    if (spec.branching < 0.0 || spec.branching >= 1.0)
        throw std::invalid_argument(
            "generate_self_exciting: branching ratio must lie in [0, 1) (subcritical)");
    if (!(spec.decay_per_day > 0.0))
        throw std::invalid_argument("generate_self_exciting: decay must be positive");

    Rng rng(spec.seed);
    double beta = spec.decay_per_day;
    double ab = spec.branching * beta;
    double lat_sigma = spec.sigma_km / kKmPerDegLat;
    double lon_sigma = spec.sigma_km * lon_deg_per_km(spec.bbox);

    std::vector<RawEvent> events;
    std::vector<double> stamps; // for kernel weights
    double t = 0.0;
    double S = 0.0; // sum of exp(-beta (t - t_i))
    // Ogata thinning with the piecewise upper bound base + ab * S
    while (true) {
        double bound = spec.rate_per_day + ab * S;
        double w = rng.exponential(bound);
        double tn = t + w;
        if (tn >= spec.days) break;
        S *= std::exp(-beta * w);
        double lam = spec.rate_per_day + ab * S;
        t = tn;
        if (rng.uniform() * bound > lam) continue; // thinned

        RawEvent e;
        e.t = t;
        if (rng.uniform() * lam < spec.rate_per_day || events.empty()) {
            if (!spec.hubs.empty() && rng.uniform() < spec.hub_fraction) {
                const ClusterSpec& hub =
                    spec.hubs[static_cast<size_t>(rng.below(spec.hubs.size()))];
                e.lat = hub.lat + rng.normal(0.0, hub.radius_km / kKmPerDegLat);
                e.lon = hub.lon + rng.normal(0.0, hub.radius_km * lon_deg_per_km(spec.bbox));
                e.lat = std::clamp(e.lat, spec.bbox.lat_min, spec.bbox.lat_max);
                e.lon = std::clamp(e.lon, spec.bbox.lon_min, spec.bbox.lon_max);
            } else {
                e.lat = rng.uniform(spec.bbox.lat_min, spec.bbox.lat_max);
                e.lon = rng.uniform(spec.bbox.lon_min, spec.bbox.lon_max);
            }
        } else {
            // offspring: pick a parent by its kernel contribution
            double total = 0.0;
            std::vector<double> wts(events.size());
            for (size_t i = 0; i < events.size(); ++i) {
                wts[i] = std::exp(-beta * (t - stamps[i]));
                total += wts[i];
            }
            double u = rng.uniform() * total;
            size_t parent = events.size() - 1;
            double acc = 0.0;
            for (size_t i = 0; i < events.size(); ++i) {
                acc += wts[i];
                if (u < acc) {
                    parent = i;
                    break;
                }
            }
            e.lat = events[parent].lat + rng.normal(0.0, lat_sigma);
            e.lon = events[parent].lon + rng.normal(0.0, lon_sigma);
            e.lat = std::clamp(e.lat, spec.bbox.lat_min, spec.bbox.lat_max);
            e.lon = std::clamp(e.lon, spec.bbox.lon_min, spec.bbox.lon_max);
        }
        e.type = static_cast<int>(rng.below(spec.types.size()));
        events.push_back(e);
        stamps.push_back(t);
        S += 1.0;
    }
    return to_dataset(std::move(events), spec.types);
}

CrimeDataset generate_planted(const GeneratorSpec& spec) {
    validate_common(spec);
    if (spec.clusters.empty())
        throw std::invalid_argument("generate_planted: no clusters configured");
    if (spec.rate_per_day < 0.0)
        throw std::invalid_argument("generate_planted: background rate must be non-negative");

    // collect the type vocabulary: declared types first, cluster types appended
    std::vector<std::string> types = spec.types;
    auto type_id = [&types](const std::string& name) {
        for (size_t i = 0; i < types.size(); ++i)
            if (types[i] == name) return static_cast<int>(i);
        types.push_back(name);
        return static_cast<int>(types.size()) - 1;
    };
    std::vector<int> cluster_type(spec.clusters.size());
    for (size_t c = 0; c < spec.clusters.size(); ++c)
        cluster_type[c] = type_id(spec.clusters[c].type);

    Rng rng(spec.seed);
    double lon_per_km = lon_deg_per_km(spec.bbox);
    std::vector<RawEvent> events;
    std::vector<long> in_cluster((types.size()), 0), total_of_type(types.size(), 0);

    for (int day = 0; day < spec.days; ++day) {
        int n_bg = poisson_count(rng, spec.rate_per_day);
        for (int i = 0; i < n_bg; ++i) {
            RawEvent e;
            e.t = day + rng.uniform();
            e.lat = rng.uniform(spec.bbox.lat_min, spec.bbox.lat_max);
            e.lon = rng.uniform(spec.bbox.lon_min, spec.bbox.lon_max);
            e.type = static_cast<int>(rng.below(types.size()));
            ++total_of_type[static_cast<size_t>(e.type)];
            events.push_back(e);
        }
        for (size_t c = 0; c < spec.clusters.size(); ++c) {
            const ClusterSpec& cl = spec.clusters[c];
            int n = poisson_count(rng, cl.rate_per_day);
            for (int i = 0; i < n; ++i) {
                RawEvent e;
                double hour = rng.uniform(cl.hour_begin, cl.hour_end);
                e.t = day + hour / 24.0;
                double r_km = cl.radius_km * std::sqrt(rng.uniform());
                double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
                e.lat = cl.lat + (r_km * std::sin(theta)) / kKmPerDegLat;
                e.lon = cl.lon + (r_km * std::cos(theta)) * lon_per_km;
                e.lat = std::clamp(e.lat, spec.bbox.lat_min, spec.bbox.lat_max);
                e.lon = std::clamp(e.lon, spec.bbox.lon_min, spec.bbox.lon_max);
                e.type = cluster_type[c];
                ++in_cluster[static_cast<size_t>(e.type)];
                ++total_of_type[static_cast<size_t>(e.type)];
                events.push_back(e);
            }
        }
    }
    for (size_t c = 0; c < spec.clusters.size(); ++c) {
        size_t ty = static_cast<size_t>(cluster_type[c]);
        if (total_of_type[ty] > 0 &&
            static_cast<double>(in_cluster[ty]) < 0.9 * static_cast<double>(total_of_type[ty]))
            throw ConfigError("generate_planted: background rate too high, cluster type '" +
                              types[ty] + "' has under 90% of events inside its regions");
    }
    return to_dataset(std::move(events), types);
}

CrimeDataset generate(const GeneratorSpec& spec) {
    switch (spec.kind) {
    case GeneratorSpec::Kind::poisson: return generate_poisson(spec);
    case GeneratorSpec::Kind::self_exciting: return generate_self_exciting(spec);
    case GeneratorSpec::Kind::planted: return generate_planted(spec);
    }
    throw std::invalid_argument("generate: unknown kind");
}

PoiTable generate_pois(const GeneratorSpec& spec) {
    PoiTable table;
    for (int c = 0; c < spec.poi_categories; ++c)
        table.categories.push_back("category" + std::to_string(c));
    Rng rng(mix_seed(spec.seed, 0x901));
    double lon_per_km = lon_deg_per_km(spec.bbox);
    int venue_id = 0;
    auto add = [&](double lat, double lon, int cat) {
        PoiRecord p;
        p.venue = "venue" + std::to_string(venue_id++);
        p.category = table.categories[static_cast<size_t>(cat)];
        p.lat = std::clamp(lat, spec.bbox.lat_min, spec.bbox.lat_max);
        p.lon = std::clamp(lon, spec.bbox.lon_min, spec.bbox.lon_max);
        table.rows.push_back(std::move(p));
    };
    for (int i = 0; i < spec.poi_total; ++i)
        add(rng.uniform(spec.bbox.lat_min, spec.bbox.lat_max),
            rng.uniform(spec.bbox.lon_min, spec.bbox.lon_max),
            static_cast<int>(rng.below(static_cast<uint64_t>(spec.poi_categories))));
    for (size_t c = 0; c < spec.clusters.size(); ++c) {
        const ClusterSpec& cl = spec.clusters[c];
        int cat = static_cast<int>(c % static_cast<size_t>(spec.poi_categories));
        for (int i = 0; i < spec.poi_cluster_boost; ++i) {
            double r_km = cl.radius_km * std::sqrt(rng.uniform());
            double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            add(cl.lat + r_km * std::sin(theta) / kKmPerDegLat,
                cl.lon + r_km * std::cos(theta) * lon_per_km, cat);
        }
    }
    return table;
}

void write_poi_csv(const PoiTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("write_poi_csv: cannot open " + path);
    out << "venue,category,lat,lon\n";
    char buf[64];
    for (const PoiRecord& p : table.rows) {
        std::snprintf(buf, sizeof(buf), "%.8f,%.8f\n", p.lat, p.lon);
        out << p.venue << ',' << p.category << ',' << buf;
    }
}

double quadrature_integral(const std::function<double(double, double)>& density, double x0,
                           double x1, double y0, double y1, int resolution) {
    if (resolution < 2) throw std::invalid_argument("quadrature_integral: resolution too small");
    double hx = (x1 - x0) / (resolution - 1);
    double hy = (y1 - y0) / (resolution - 1);
    // rows evaluate in parallel; the reduction stays in row order so the
    // serial and OpenMP paths agree bit-for-bit
    std::vector<double> row_sums(static_cast<size_t>(resolution), 0.0);
    par::parallel_for(static_cast<size_t>(resolution), [&](size_t i) {
        double x = x0 + static_cast<double>(i) * hx;
        double row = 0.0;
        for (int j = 0; j < resolution; ++j) {
            double wy = (j == 0 || j == resolution - 1) ? 0.5 : 1.0;
            row += wy * density(x, y0 + j * hy);
        }
        row_sums[i] = row;
    });
    double acc = 0.0;
    for (int i = 0; i < resolution; ++i) {
        double wx = (i == 0 || i == resolution - 1) ? 0.5 : 1.0;
        acc += wx * row_sums[static_cast<size_t>(i)];
    }
    return acc * hx * hy;
}

double finite_diff_max_rel_error(const std::function<double(std::span<const double>)>& fn,
                                 std::vector<double> params, std::span<const double> analytic,
                                 double eps) {
    if (params.size() != analytic.size())
        throw std::invalid_argument("finite_diff_max_rel_error: size mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        double step = eps * std::max(1.0, std::abs(params[i]));
        double orig = params[i];
        params[i] = orig + step;
        double fp = fn(params);
        params[i] = orig - step;
        double fm = fn(params);
        params[i] = orig;
        double fd = (fp - fm) / (2.0 * step);
        double rel = std::abs(analytic[i] - fd) / (1e-6 + std::max(std::abs(analytic[i]), std::abs(fd)));
        worst = std::max(worst, rel);
    }
    return worst;
}

namespace {

GeneratorSpec::Kind parse_kind(const std::string& s) {
    if (s == "poisson") return GeneratorSpec::Kind::poisson;
    if (s == "self_exciting") return GeneratorSpec::Kind::self_exciting;
    if (s == "planted") return GeneratorSpec::Kind::planted;
    throw ConfigError("generator spec: unknown kind '" + s + "'");
}

} // namespace

GeneratorSpec parse_generator_spec(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator spec: JSON parse failure: ") + e.what());
    }
    static const std::vector<std::string> known = {
        "kind",       "days",       "seed",          "lat_min",        "lat_max",
        "lon_min",    "lon_max",    "rate_per_day",  "types",          "branching",
        "decay_per_day", "sigma_km", "clusters",     "poi_total",      "poi_categories",
        "poi_cluster_boost", "hub_fraction", "hubs"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("generator spec: unknown key " + it.key());

    GeneratorSpec s;
    try {
        if (j.contains("kind")) s.kind = parse_kind(j["kind"].get<std::string>());
        if (j.contains("days")) s.days = j["days"].get<int>();
        if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
        if (j.contains("lat_min")) s.bbox.lat_min = j["lat_min"].get<double>();
        if (j.contains("lat_max")) s.bbox.lat_max = j["lat_max"].get<double>();
        if (j.contains("lon_min")) s.bbox.lon_min = j["lon_min"].get<double>();
        if (j.contains("lon_max")) s.bbox.lon_max = j["lon_max"].get<double>();
        if (j.contains("rate_per_day")) s.rate_per_day = j["rate_per_day"].get<double>();
        if (j.contains("types")) s.types = j["types"].get<std::vector<std::string>>();
        if (j.contains("branching")) s.branching = j["branching"].get<double>();
        if (j.contains("decay_per_day")) s.decay_per_day = j["decay_per_day"].get<double>();
        if (j.contains("sigma_km")) s.sigma_km = j["sigma_km"].get<double>();
        if (j.contains("poi_total")) s.poi_total = j["poi_total"].get<int>();
        if (j.contains("poi_categories")) s.poi_categories = j["poi_categories"].get<int>();
        if (j.contains("poi_cluster_boost"))
            s.poi_cluster_boost = j["poi_cluster_boost"].get<int>();
        if (j.contains("hub_fraction")) s.hub_fraction = j["hub_fraction"].get<double>();
        if (j.contains("hubs")) {
            for (const auto& hj : j["hubs"]) {
                ClusterSpec h;
                h.lat = hj.at("lat").get<double>();
                h.lon = hj.at("lon").get<double>();
                if (hj.contains("radius_km")) h.radius_km = hj["radius_km"].get<double>();
                s.hubs.push_back(std::move(h));
            }
        }
        if (j.contains("clusters")) {
            for (const auto& cj : j["clusters"]) {
                ClusterSpec c;
                c.lat = cj.at("lat").get<double>();
                c.lon = cj.at("lon").get<double>();
                if (cj.contains("radius_km")) c.radius_km = cj["radius_km"].get<double>();
                if (cj.contains("hour_begin")) c.hour_begin = cj["hour_begin"].get<double>();
                if (cj.contains("hour_end")) c.hour_end = cj["hour_end"].get<double>();
                if (cj.contains("type")) c.type = cj["type"].get<std::string>();
                if (cj.contains("rate_per_day")) c.rate_per_day = cj["rate_per_day"].get<double>();
                s.clusters.push_back(std::move(c));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator spec: bad field: ") + e.what());
    }
    return s;
}

GeneratorSpec load_generator_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("generator spec: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_generator_spec(ss.str());
}

} // namespace flexicrime
