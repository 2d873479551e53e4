#include "flexicrime/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "flexicrime/errors.hpp"

namespace flexicrime {

int CrimeDataset::type_id(const std::string& name) const {
    for (size_t i = 0; i < types.size(); ++i)
        if (types[i] == name) return static_cast<int>(i);
    return -1;
}

// Howard Hinnant's civil-days algorithm.
int64_t civil_day_number(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

void civil_from_day_number(int64_t z, int& year, int& month, int& day) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t y = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    month = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    year = static_cast<int>(y + (month <= 2));
}

bool parse_iso_minutes(const std::string& s, int64_t& civil_day, double& tod) {
    int y, mo, d, h, mi;
    // strict layout: YYYY-MM-DDTHH:MM
    if (s.size() < 16) return false;
    if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':')
        return false;
    auto num = [&](size_t pos, size_t len, int& out) {
        out = 0;
        for (size_t i = pos; i < pos + len; ++i) {
            if (s[i] < '0' || s[i] > '9') return false;
            out = out * 10 + (s[i] - '0');
        }
        return true;
    };
    if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d) || !num(11, 2, h) || !num(14, 2, mi))
        return false;
    int sec = 0;
    if (s.size() >= 19 && s[16] == ':') {
        if (!num(17, 2, sec)) return false;
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 59) return false;
    civil_day = civil_day_number(y, mo, d);
    tod = (h * 3600.0 + mi * 60.0 + sec) / 86400.0;
    return true;
}

std::string format_iso_minutes(int64_t civil_day, double tod) {
    int y, mo, d;
    civil_from_day_number(civil_day, y, mo, d);
    int minutes = static_cast<int>(std::lround(tod * 1440.0));
    if (minutes > 1439) minutes = 1439;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d", y, mo, d, minutes / 60,
                  minutes % 60);
    return buf;
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

void finalize(CrimeDataset& ds) {
    std::stable_sort(ds.records.begin(), ds.records.end(),
                     [](const CrimeRecord& a, const CrimeRecord& b) {
                         if (a.day != b.day) return a.day < b.day;
                         return a.tod < b.tod;
                     });
    ds.by_type.assign(ds.types.size(), {});
    for (size_t i = 0; i < ds.records.size(); ++i)
        ds.by_type[static_cast<size_t>(ds.records[i].type)].push_back(static_cast<int>(i));
}

} // namespace

CrimeDataset ingest_events(const std::string& path, const CityGrid& grid) {
    std::ifstream in(path);
    if (!in) throw DataError("ingest_events: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("ingest_events: empty file " + path);
    auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "type" || header[1] != "datetime" ||
        header[2] != "lat" || header[3] != "lon")
        throw DataError("ingest_events: expected header type,datetime,lat,lon in " + path);

    struct RawRow {
        std::string type;
        int64_t civil_day;
        double tod, lat, lon;
    };
    std::vector<RawRow> raw;
    int skipped = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() < 4) {
            ++skipped;
            continue;
        }
        RawRow r;
        r.type = f[0];
        if (!parse_iso_minutes(f[1], r.civil_day, r.tod)) {
            ++skipped;
            continue;
        }
        try {
            r.lat = std::stod(f[2]);
            r.lon = std::stod(f[3]);
        } catch (const std::exception&) {
            ++skipped;
            continue;
        }
        if (!grid.bbox.contains(r.lat, r.lon)) {
            ++skipped;
            continue;
        }
        raw.push_back(std::move(r));
    }
    if (raw.empty()) throw DataError("ingest_events: no usable rows in " + path);

    int64_t epoch = raw.front().civil_day;
    for (const RawRow& r : raw) epoch = std::min(epoch, r.civil_day);

    CrimeDataset ds;
    ds.epoch_civil_day = epoch;
    ds.skipped_rows = skipped;
    std::unordered_map<std::string, int> vocab;
    for (const RawRow& r : raw) {
        CrimeRecord rec;
        rec.day = static_cast<int>(r.civil_day - epoch);
        rec.tod = r.tod;
        rec.lat = r.lat;
        rec.lon = r.lon;
        auto [it, inserted] = vocab.emplace(r.type, static_cast<int>(ds.types.size()));
        if (inserted) ds.types.push_back(r.type);
        rec.type = it->second;
        rec.grid_id = map_to_grid(grid, rec.lat, rec.lon);
        ds.records.push_back(rec);
    }
    finalize(ds);
    return ds;
}

void write_events_csv(const CrimeDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("write_events_csv: cannot open " + path);
    out << "type,datetime,lat,lon\n";
    char buf[64];
    for (const CrimeRecord& r : ds.records) {
        std::snprintf(buf, sizeof(buf), ",%.8f,%.8f\n", r.lat, r.lon);
        out << ds.types[static_cast<size_t>(r.type)] << ','
            << format_iso_minutes(ds.epoch_civil_day + r.day, r.tod) << buf;
    }
}

void assign_grids(CrimeDataset& ds, const CityGrid& grid) {
    for (CrimeRecord& r : ds.records) r.grid_id = map_to_grid(grid, r.lat, r.lon);
}

std::pair<CrimeDataset, CrimeDataset> split_dataset(const CrimeDataset& ds, int train_parts,
                                                    int test_parts) {
    if (train_parts <= 0 || test_parts <= 0)
        throw std::invalid_argument("split_dataset: ratio parts must be positive");
    int span = ds.day_span();
    if (span < train_parts + test_parts)
        throw std::invalid_argument("split_dataset: dataset spans fewer days than the ratio");
    int train_days = span * train_parts / (train_parts + test_parts);
    int cutoff = ds.day_first() + train_days; // first test day

    CrimeDataset train, test;
    train.types = test.types = ds.types;
    train.epoch_civil_day = test.epoch_civil_day = ds.epoch_civil_day;
    for (const CrimeRecord& r : ds.records)
        (r.day < cutoff ? train : test).records.push_back(r);
    finalize(train);
    finalize(test);
    return {std::move(train), std::move(test)};
}

std::vector<uint8_t> label_interval(const CrimeDataset& ds, const CityGrid& grid,
                                    const Interval& iv, int type) {
    double span_begin = ds.day_first();
    double span_end = ds.day_last() + 1.0;
    if (iv.start < span_begin - 1e-9 || iv.end() > span_end + 1e-9)
        throw std::out_of_range("label_interval: interval outside dataset span");

    std::vector<uint8_t> label(static_cast<size_t>(grid.cell_count()), 0);
    for (const CrimeRecord& r : ds.records) {
        if (r.type != type) continue;
        double t = r.abs_time();
        if (t >= iv.start && t < iv.end()) label[static_cast<size_t>(r.grid_id)] = 1;
    }
    return label;
}

PackedSequence pack_events(const CrimeDataset& ds, int type, const CoordScaler& scaler) {
    if (type < 0 || static_cast<size_t>(type) >= ds.types.size())
        throw std::invalid_argument("pack_events: unknown type id");
    if (ds.by_type[static_cast<size_t>(type)].empty())
        throw DataError("pack_events: dataset has no records of type " +
                        ds.types[static_cast<size_t>(type)]);

    PackedSequence seq;
    seq.target_type = type;
    seq.day_span = ds.day_span();
    seq.day_first = ds.day_first();
    seq.events.reserve(ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
        const CrimeRecord& r = ds.records[i];
        PackedEvent e;
        e.tod = r.tod;
        e.day = r.day;
        e.type = r.type;
        e.grid_id = r.grid_id;
        auto [x, y] = scaler.to_std(r.lat, r.lon);
        e.x = x;
        e.y = y;
        e.orig_index = static_cast<int>(i);
        seq.events.push_back(e);
    }
    // records are already sorted by (day, tod, input order), so a stable sort
    // on tod alone realizes the (tod, day, input order) tie-break
    std::stable_sort(seq.events.begin(), seq.events.end(),
                     [](const PackedEvent& a, const PackedEvent& b) { return a.tod < b.tod; });
    for (size_t i = 0; i < seq.events.size(); ++i)
        if (seq.events[i].type == type) seq.target_positions.push_back(static_cast<int>(i));
    return seq;
}

CoordScaler fit_scaler(const CrimeDataset& ds) {
    CoordScaler s;
    if (ds.records.empty()) return s;
    double n = static_cast<double>(ds.records.size());
    double mlat = 0.0, mlon = 0.0;
    for (const CrimeRecord& r : ds.records) {
        mlat += r.lat;
        mlon += r.lon;
    }
    mlat /= n;
    mlon /= n;
    double vlat = 0.0, vlon = 0.0;
    for (const CrimeRecord& r : ds.records) {
        vlat += (r.lat - mlat) * (r.lat - mlat);
        vlon += (r.lon - mlon) * (r.lon - mlon);
    }
    s.mean_lat = mlat;
    s.mean_lon = mlon;
    s.std_lat = std::sqrt(vlat / n);
    s.std_lon = std::sqrt(vlon / n);
    if (s.std_lat < 1e-12) s.std_lat = 1.0;
    if (s.std_lon < 1e-12) s.std_lon = 1.0;
    return s;
}

} // namespace flexicrime
