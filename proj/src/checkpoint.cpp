#include "flexicrime/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flexicrime/config.hpp"
#include "flexicrime/errors.hpp"

namespace flexicrime {

using nlohmann::ordered_json;

namespace {

ordered_json grid_to_json(const CityGrid& g) {
    ordered_json j;
    j["rows"] = g.rows;
    j["cols"] = g.cols;
    j["lat_min"] = g.bbox.lat_min;
    j["lat_max"] = g.bbox.lat_max;
    j["lon_min"] = g.bbox.lon_min;
    j["lon_max"] = g.bbox.lon_max;
    j["cell_km"] = g.cell_km;
    j["lat_step"] = g.lat_step;
    j["lon_step"] = g.lon_step;
    j["embed_dim"] = g.embed_dim;
    j["poi_categories"] = g.poi_categories;
    j["poi_category_names"] = g.poi_category_names;
    j["count_features"] = g.count_features;
    j["embeddings"] = g.embeddings;
    return j;
}

CityGrid grid_from_json(const ordered_json& j) {
    CityGrid g;
    g.rows = j.at("rows").get<int>();
    g.cols = j.at("cols").get<int>();
    g.bbox.lat_min = j.at("lat_min").get<double>();
    g.bbox.lat_max = j.at("lat_max").get<double>();
    g.bbox.lon_min = j.at("lon_min").get<double>();
    g.bbox.lon_max = j.at("lon_max").get<double>();
    g.cell_km = j.at("cell_km").get<double>();
    g.lat_step = j.at("lat_step").get<double>();
    g.lon_step = j.at("lon_step").get<double>();
    g.embed_dim = j.at("embed_dim").get<int>();
    g.poi_categories = j.at("poi_categories").get<int>();
    g.poi_category_names = j.at("poi_category_names").get<std::vector<std::string>>();
    g.count_features = j.at("count_features").get<std::vector<double>>();
    g.embeddings = j.at("embeddings").get<std::vector<double>>();
    return g;
}

} // namespace

std::string checkpoint_to_json(const Model& model) {
    ordered_json j;
    j["format"] = "flexicrime-checkpoint";
    j["version"] = kCheckpointVersion;
    j["stage"] = static_cast<int>(model.stage);
    j["config"] = ordered_json::parse(config_to_json(model.cfg));
    j["types"] = model.types;
    j["day_span"] = model.day_span;
    j["grid"] = grid_to_json(model.grid);
    j["scaler"] = {{"mean_lat", model.scaler.mean_lat},
                   {"mean_lon", model.scaler.mean_lon},
                   {"std_lat", model.scaler.std_lat},
                   {"std_lon", model.scaler.std_lon}};
    ordered_json params = ordered_json::object();
    auto dump_block = [&params](const ParamBlock& b) { params[b.name] = b.w; };
    model.theta0.for_each_block(dump_block);
    for (const auto& p : model.theta1) p.for_each_block(dump_block);
    model.theta2.for_each_block(dump_block);
    j["params"] = std::move(params);
    return j.dump();
}

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("save_checkpoint: cannot open " + path);
    out << checkpoint_to_json(model);
}

Model checkpoint_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: JSON parse failure: ") + e.what());
    }
    try {
        if (!j.contains("format") || j["format"] != "flexicrime-checkpoint")
            throw CheckpointError("checkpoint: not a flexicrime checkpoint");
        int version = j.at("version").get<int>();
        if (version != kCheckpointVersion)
            throw CheckpointError("checkpoint: version " + std::to_string(version) +
                                  " unsupported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
        Model m;
        m.cfg = parse_config_json(j.at("config").dump());
        m.types = j.at("types").get<std::vector<std::string>>();
        m.day_span = j.at("day_span").get<int>();
        m.stage = static_cast<TrainStage>(j.at("stage").get<int>());
        m.grid = grid_from_json(j.at("grid"));
        m.scaler.mean_lat = j.at("scaler").at("mean_lat").get<double>();
        m.scaler.mean_lon = j.at("scaler").at("mean_lon").get<double>();
        m.scaler.std_lat = j.at("scaler").at("std_lat").get<double>();
        m.scaler.std_lon = j.at("scaler").at("std_lon").get<double>();
        m.configure_params();

        const ordered_json& params = j.at("params");
        auto load_block = [&params](ParamBlock& b) {
            auto it = params.find(b.name);
            if (it == params.end())
                throw CheckpointError("checkpoint: missing parameter block " + b.name);
            std::vector<double> w = it->get<std::vector<double>>();
            if (w.size() != b.w.size())
                throw CheckpointError("checkpoint: size mismatch for block " + b.name);
            b.w = std::move(w);
        };
        m.theta0.for_each_block(load_block);
        for (auto& p : m.theta1) p.for_each_block(load_block);
        m.theta2.for_each_block(load_block);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: malformed document: ") + e.what());
    }
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("load_checkpoint: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_json(ss.str());
}

void materialize_region_embeddings(Model& model) {
    CityGrid& g = model.grid;
    const ParamBlock& w = model.theta0.region_w;
    const ParamBlock& b = model.theta0.region_b;
    int k = std::max(g.poi_categories, 1);
    int d = g.embed_dim;
    g.embeddings.assign(static_cast<size_t>(g.cell_count()) * d, 0.0);
    for (int cell = 0; cell < g.cell_count(); ++cell) {
        const double* feat = g.count_features.data() + static_cast<size_t>(cell) * k;
        double* out = g.embeddings.data() + static_cast<size_t>(cell) * d;
        for (int r = 0; r < d; ++r) {
            double acc = b.w[static_cast<size_t>(r)];
            const double* row = w.w.data() + static_cast<size_t>(r) * k;
            for (int c = 0; c < k; ++c) acc += row[c] * feat[c];
            out[r] = acc;
        }
    }
}

} // namespace flexicrime
