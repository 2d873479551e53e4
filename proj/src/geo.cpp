#include "flexicrime/geo.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "flexicrime/errors.hpp"

namespace flexicrime {

double BoundingBox::lon_span_km() const {
    double km_per_deg = kKmPerDegLat * std::cos(mid_lat() * std::numbers::pi / 180.0);
    return (lon_max - lon_min) * km_per_deg;
}

CityGrid build_grid(const BoundingBox& bbox, double cell_km, int embed_dim) {
    if (!(bbox.lat_max > bbox.lat_min) || !(bbox.lon_max > bbox.lon_min))
        throw ConfigError("build_grid: degenerate bounding box");
    if (!(cell_km > 0.0)) throw ConfigError("build_grid: cell size must be positive");
    if (embed_dim <= 0 || embed_dim % 2 != 0)
        throw ConfigError("build_grid: embedding dimension must be positive and even");

    CityGrid g;
    g.bbox = bbox;
    g.cell_km = cell_km;
    g.embed_dim = embed_dim;
    g.rows = static_cast<int>(std::ceil(bbox.lat_span_km() / cell_km - 1e-9));
    g.cols = static_cast<int>(std::ceil(bbox.lon_span_km() / cell_km - 1e-9));
    g.rows = std::max(g.rows, 1);
    g.cols = std::max(g.cols, 1);
    g.lat_step = (bbox.lat_max - bbox.lat_min) / g.rows;
    g.lon_step = (bbox.lon_max - bbox.lon_min) / g.cols;
    g.embeddings.assign(static_cast<size_t>(g.cell_count()) * embed_dim, 0.0);
    return g;
}

int map_to_grid(const CityGrid& grid, double lat, double lon) {
    if (!grid.bbox.contains(lat, lon))
        throw std::out_of_range("map_to_grid: location outside bounding box");
    int r = static_cast<int>((lat - grid.bbox.lat_min) / grid.lat_step);
    int c = static_cast<int>((lon - grid.bbox.lon_min) / grid.lon_step);
    if (r >= grid.rows) r = grid.rows - 1;
    if (c >= grid.cols) c = grid.cols - 1;
    return grid.cell_of(r, c);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

PoiTable ingest_pois(const std::string& path, const BoundingBox* filter) {
    std::ifstream in(path);
    if (!in) throw DataError("ingest_pois: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("ingest_pois: empty file " + path);
    auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "venue" || header[1] != "category" ||
        header[2] != "lat" || header[3] != "lon")
        throw DataError("ingest_pois: expected header venue,category,lat,lon in " + path);

    PoiTable table;
    std::unordered_map<std::string, int> vocab;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() < 4) {
            ++table.skipped_rows;
            continue;
        }
        PoiRecord rec;
        rec.venue = f[0];
        rec.category = f[1];
        try {
            rec.lat = std::stod(f[2]);
            rec.lon = std::stod(f[3]);
        } catch (const std::exception&) {
            ++table.skipped_rows;
            continue;
        }
        if (filter && !filter->contains(rec.lat, rec.lon)) {
            ++table.out_of_bbox;
            continue;
        }
        if (vocab.emplace(rec.category, static_cast<int>(table.categories.size())).second)
            table.categories.push_back(rec.category);
        table.rows.push_back(std::move(rec));
    }
    return table;
}

void attach_poi_counts(CityGrid& grid, const PoiTable& pois) {
    grid.poi_categories = static_cast<int>(pois.categories.size());
    grid.poi_category_names = pois.categories;
    if (grid.poi_categories == 0) {
        // valid but uninformative: every cell gets an empty feature vector
        grid.poi_categories = 1;
        grid.poi_category_names = {"(none)"};
        grid.count_features.assign(static_cast<size_t>(grid.cell_count()), 0.0);
        return;
    }
    std::unordered_map<std::string, int> vocab;
    for (size_t i = 0; i < pois.categories.size(); ++i)
        vocab[pois.categories[i]] = static_cast<int>(i);

    std::vector<double> counts(static_cast<size_t>(grid.cell_count()) * grid.poi_categories, 0.0);
    for (const PoiRecord& p : pois.rows) {
        if (!grid.bbox.contains(p.lat, p.lon)) continue;
        int cell = map_to_grid(grid, p.lat, p.lon);
        counts[static_cast<size_t>(cell) * grid.poi_categories + vocab.at(p.category)] += 1.0;
    }
    grid.count_features.resize(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) grid.count_features[i] = std::log1p(counts[i]);
}

} // namespace flexicrime
