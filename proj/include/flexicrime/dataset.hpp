#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexicrime/geo.hpp"

namespace flexicrime {

// A crime record (t, s, c) with the datetime split into a day index and a
// time-of-day fraction in [0, 1).
struct CrimeRecord {
    int day = 0;       // days since the dataset epoch (midnight of first record)
    double tod = 0.0;  // fraction of the day
    double lat = 0.0, lon = 0.0;
    int type = 0;      // id into CrimeDataset::types
    int grid_id = -1;

    double abs_time() const { return day + tod; }
};

struct CrimeDataset {
    std::vector<CrimeRecord> records;         // sorted by (day, tod, input order)
    std::vector<std::string> types;           // type vocabulary
    std::vector<std::vector<int>> by_type;    // record indices per type
    int64_t epoch_civil_day = 0;              // civil day number of day index 0
    int skipped_rows = 0;

    int day_first() const { return records.empty() ? 0 : records.front().day; }
    int day_last() const { return records.empty() ? 0 : records.back().day; }
    // number of whole days covered, counting first and last
    int day_span() const { return records.empty() ? 0 : day_last() - day_first() + 1; }
    int type_id(const std::string& name) const;
};

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
int64_t civil_day_number(int year, int month, int day);
void civil_from_day_number(int64_t z, int& year, int& month, int& day);

// Parses "YYYY-MM-DDTHH:MM" (optional trailing ":SS"). Returns false on
// malformed input.
bool parse_iso_minutes(const std::string& s, int64_t& civil_day, double& tod);
std::string format_iso_minutes(int64_t civil_day, double tod);

// CSV `type,datetime,lat,lon`. Rows with unparseable timestamps or
// coordinates, or locations outside the grid bbox, are skipped and counted.
// Throws DataError when the header is wrong or no rows survive.
CrimeDataset ingest_events(const std::string& path, const CityGrid& grid);

void write_events_csv(const CrimeDataset& ds, const std::string& path);

// Recomputes grid_id for every record (generators emit records without one).
void assign_grids(CrimeDataset& ds, const CityGrid& grid);

// Chronological split: the first train_parts/(train_parts+test_parts) of the
// day span goes to train. Throws std::invalid_argument when the dataset
// covers fewer days than train_parts + test_parts.
std::pair<CrimeDataset, CrimeDataset> split_dataset(const CrimeDataset& ds,
                                                    int train_parts = 7,
                                                    int test_parts = 1);

// Prediction interval [start, start + hours), start in absolute days.
struct Interval {
    double start = 0.0;
    double hours = 24.0;
    double end() const { return start + hours / 24.0; }
};

// Binary hotspot label matrix for (interval, type): X[g] = 1 iff at least one
// type-c event falls in cell g within the half-open interval.
std::vector<uint8_t> label_interval(const CrimeDataset& ds, const CityGrid& grid,
                                    const Interval& iv, int type);

// One event of the packed one-day sequence: time-of-day only, date retained
// as a conditioning feature, location standardized.
struct PackedEvent {
    double tod = 0.0;
    int day = 0;
    int type = 0;
    int grid_id = -1;
    double x = 0.0, y = 0.0; // standardized (lon, lat)
    int orig_index = -1;
};

struct PackedSequence {
    std::vector<PackedEvent> events;   // sorted by (tod, day, orig_index)
    std::vector<int> target_positions; // positions of target-type events
    int target_type = -1;
    int day_span = 1;   // days the source data covers; scales the survival term
    int day_first = 0;
};

// Packs all records (every type; cross-type events drive the jumps) onto the
// one-day axis for the type-c point process. Throws DataError when the
// dataset holds no type-c records.
PackedSequence pack_events(const CrimeDataset& ds, int type, const CoordScaler& scaler);

CoordScaler fit_scaler(const CrimeDataset& ds);

} // namespace flexicrime
