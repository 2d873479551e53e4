#pragma once

#include <string>
#include <utility>
#include <vector>

namespace flexicrime {

inline constexpr double kKmPerDegLat = 111.32;

struct BoundingBox {
    double lat_min = 0.0, lat_max = 0.0;
    double lon_min = 0.0, lon_max = 0.0;

    bool contains(double lat, double lon) const {
        return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
    }
    double lat_span_km() const { return (lat_max - lat_min) * kKmPerDegLat; }
    double lon_span_km() const;
    double mid_lat() const { return 0.5 * (lat_min + lat_max); }
};

// Affine standardization of (lon, lat) into model coordinates (x, y) with
// zero mean and unit variance over the training records. The spatial encoder
// and the point-process flow both operate in this space.
struct CoordScaler {
    double mean_lon = 0.0, mean_lat = 0.0;
    double std_lon = 1.0, std_lat = 1.0;

    // returns (x, y) = standardized (lon, lat)
    std::pair<double, double> to_std(double lat, double lon) const {
        return {(lon - mean_lon) / std_lon, (lat - mean_lat) / std_lat};
    }
    double cell_area_std(double lat_step_deg, double lon_step_deg) const {
        return (lon_step_deg / std_lon) * (lat_step_deg / std_lat);
    }
};

// m x n equal-sized cells tiling a bounding box. Cells are indexed row-major
// with row 0 at lat_min and col 0 at lon_min. Embeddings carry the learned
// projection of per-cell PoI count features.
struct CityGrid {
    int rows = 0, cols = 0;
    BoundingBox bbox;
    double cell_km = 1.0;
    double lat_step = 0.0, lon_step = 0.0; // degrees per cell
    int embed_dim = 0;

    int poi_categories = 0;
    std::vector<std::string> poi_category_names;
    std::vector<double> count_features; // cells x poi_categories, log1p counts
    std::vector<double> embeddings;     // cells x embed_dim, materialized

    int cell_count() const { return rows * cols; }
    int cell_of(int row, int col) const { return row * cols + col; }
    // (lat, lon) of the cell center
    std::pair<double, double> center(int cell) const {
        int r = cell / cols, c = cell % cols;
        return {bbox.lat_min + (r + 0.5) * lat_step, bbox.lon_min + (c + 0.5) * lon_step};
    }
    std::pair<double, double> center_std(int cell, const CoordScaler& s) const {
        auto [lat, lon] = center(cell);
        return s.to_std(lat, lon);
    }
};

// Ceil-divided rows/cols so the equal-sized cells exactly tile the bbox with
// cell edges no larger than cell_km. Throws ConfigError on a degenerate bbox
// or an odd embedding dimension.
CityGrid build_grid(const BoundingBox& bbox, double cell_km, int embed_dim);

// Cell containing (lat, lon); the max edge of the bbox belongs to the last
// cell in that direction. Throws std::out_of_range outside the bbox.
int map_to_grid(const CityGrid& grid, double lat, double lon);

struct PoiRecord {
    std::string venue;
    std::string category;
    double lat = 0.0, lon = 0.0;
};

struct PoiTable {
    std::vector<PoiRecord> rows;
    std::vector<std::string> categories; // vocabulary, in first-seen order
    int skipped_rows = 0;
    int out_of_bbox = 0;
};

// CSV `venue,category,lat,lon`. When a bbox filter is given, rows outside it
// are dropped and counted in out_of_bbox.
PoiTable ingest_pois(const std::string& path, const BoundingBox* filter = nullptr);

// Fills grid.count_features with log1p per-cell per-category PoI counts and
// grid.poi_categories/names from the table vocabulary. An empty table yields
// all-zero features (callers may warn).
void attach_poi_counts(CityGrid& grid, const PoiTable& pois);

} // namespace flexicrime
