#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flexicrime/dataset.hpp"
#include "flexicrime/geo.hpp"

namespace flexicrime {

struct ClusterSpec {
    double lat = 0.0, lon = 0.0;
    double radius_km = 0.5;
    double hour_begin = 0.0, hour_end = 24.0; // active window within the day
    std::string type = "theft";
    double rate_per_day = 10.0;
};

// Synthetic event generator configuration; also the schema of `synth` spec
// files.
struct GeneratorSpec {
    enum class Kind { poisson, self_exciting, planted };
    Kind kind = Kind::poisson;
    int days = 30;
    uint64_t seed = 1;
    BoundingBox bbox{40.70, 40.88, -74.02, -73.90};

    double rate_per_day = 50.0; // base/background rate
    std::vector<std::string> types = {"theft"};

    // self-exciting only
    double branching = 0.5;      // expected offspring per event, must be < 1
    double decay_per_day = 12.0; // exponential kernel rate
    double sigma_km = 0.5;       // offspring spatial spread
    // immigrant structure: this fraction arrives around gaussian hubs
    // (radius_km acts as the spread), the rest uniformly over the bbox
    double hub_fraction = 0.0;
    std::vector<ClusterSpec> hubs;

    // planted clusters only
    std::vector<ClusterSpec> clusters;

    // synthetic PoIs (venues spread uniformly plus extra mass near clusters)
    int poi_total = 200;
    int poi_categories = 5;
    int poi_cluster_boost = 30;
};

GeneratorSpec load_generator_spec(const std::string& path);
GeneratorSpec parse_generator_spec(const std::string& json_text);

CrimeDataset generate_poisson(const GeneratorSpec& spec);
CrimeDataset generate_self_exciting(const GeneratorSpec& spec);
CrimeDataset generate_planted(const GeneratorSpec& spec);
CrimeDataset generate(const GeneratorSpec& spec); // dispatch on kind

PoiTable generate_pois(const GeneratorSpec& spec);
void write_poi_csv(const PoiTable& table, const std::string& path);

// Trapezoidal 2-D integral over [x0,x1] x [y0,y1] on a resolution^2 grid.
double quadrature_integral(const std::function<double(double, double)>& density, double x0,
                           double x1, double y0, double y1, int resolution);

// Central-difference check of an analytic gradient; returns the worst
// per-coordinate relative error |a - f| / (1e-6 + max(|a|, |f|)).
double finite_diff_max_rel_error(const std::function<double(std::span<const double>)>& fn,
                                 std::vector<double> params, std::span<const double> analytic,
                                 double eps = 1e-5);

} // namespace flexicrime
