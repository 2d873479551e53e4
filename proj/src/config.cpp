#include "flexicrime/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "flexicrime/errors.hpp"

namespace flexicrime {

using nlohmann::ordered_json;

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (!(grid.bbox.lat_max > grid.bbox.lat_min) || !(grid.bbox.lon_max > grid.bbox.lon_min))
        fail("grid.bbox is degenerate");
    if (grid.cell_km <= 0.0) fail("grid.cell_km must be positive");
    if (encoding.dim <= 0 || encoding.dim % 2 != 0) fail("encoding.dim must be positive and even");
    if (encoding.target_dim <= 0 || encoding.target_dim % 2 != 0)
        fail("encoding.target_dim must be positive and even");
    if (attention.heads <= 0) fail("attention.heads must be positive");
    if (encoding.dim % attention.heads != 0) fail("encoding.dim must be divisible by attention.heads");
    if (sampler.time_samples < 1 || sampler.space_samples < 1)
        fail("sampler sample counts must be at least 1");
    if (point_process.hidden_dim <= 0) fail("point_process.hidden_dim must be positive");
    if (point_process.solver_steps < 1) fail("point_process.solver_steps must be at least 1");
    if (point_process.max_spatial_jumps < 0) fail("point_process.max_spatial_jumps must be >= 0");
    if (point_process.chunk_events < 1) fail("point_process.chunk_events must be at least 1");
    if (prediction.sample_points < 2) fail("prediction.sample_points must be at least 2");
    if (prediction.lags < 1) fail("prediction.lags must be at least 1");
    if (training.lr <= 0.0) fail("training.lr must be positive");
    if (training.lr_mle <= 0.0) fail("training.lr_mle must be positive");
    if (training.mle_optimizer != "adam" && training.mle_optimizer != "sgd")
        fail("training.mle_optimizer must be \"adam\" or \"sgd\"");
    if (training.weight_decay < 0.0) fail("training.weight_decay must be non-negative");
    if (training.batch < 1) fail("training.batch must be at least 1");
    if (training.epochs_stage1 < 1 || training.epochs_stage2 < 1 || training.epochs_stage3 < 1)
        fail("training epochs must be at least 1");
    if (training.intervals_per_day < 1) fail("training.intervals_per_day must be at least 1");
    if (training.interval_hours.empty()) fail("training.interval_hours must not be empty");
    for (int h : training.interval_hours)
        if (h < 1) fail("training.interval_hours entries must be at least 1");
    if (evaluation.threshold <= 0.0 || evaluation.threshold >= 1.0)
        fail("evaluation.threshold must lie in (0,1)");
    if (evaluation.hr_k < 1) fail("evaluation.hr_k must be at least 1");
}

namespace {

// Pulls a field out of `j`, checking off consumed keys so leftovers can be
// rejected.
class StrictObject {
public:
    StrictObject(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config: bad value for " + path_ + "." + key);
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    const ordered_json* object(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key()))
                throw ConfigError("config: unknown key " + path_ + "." + it.key());
        }
    }

private:
    const ordered_json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void parse_grid(const ordered_json& j, GridConfig& g) {
    StrictObject o(j, "grid");
    o.get("lat_min", g.bbox.lat_min);
    o.get("lat_max", g.bbox.lat_max);
    o.get("lon_min", g.bbox.lon_min);
    o.get("lon_max", g.bbox.lon_max);
    o.get("cell_km", g.cell_km);
    o.finish();
}

} // namespace

RunConfig parse_config_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: JSON parse failure: ") + e.what());
    }

    RunConfig cfg;
    StrictObject root(j, "");
    root.get("seed", cfg.seed);
    if (const auto* g = root.object("grid")) parse_grid(*g, cfg.grid);
    if (const auto* e = root.object("encoding")) {
        StrictObject o(*e, "encoding");
        o.get("dim", cfg.encoding.dim);
        o.get("target_dim", cfg.encoding.target_dim);
        o.finish();
    }
    if (const auto* s = root.object("sampler")) {
        StrictObject o(*s, "sampler");
        o.get("time_samples", cfg.sampler.time_samples);
        o.get("space_samples", cfg.sampler.space_samples);
        o.get("replacement", cfg.sampler.replacement);
        o.finish();
    }
    if (const auto* a = root.object("attention")) {
        StrictObject o(*a, "attention");
        o.get("heads", cfg.attention.heads);
        o.finish();
    }
    if (const auto* p = root.object("point_process")) {
        StrictObject o(*p, "point_process");
        o.get("hidden_dim", cfg.point_process.hidden_dim);
        o.get("dynamics_hidden", cfg.point_process.dynamics_hidden);
        o.get("coupling_hidden", cfg.point_process.coupling_hidden);
        o.get("solver_steps", cfg.point_process.solver_steps);
        o.get("max_spatial_jumps", cfg.point_process.max_spatial_jumps);
        o.get("chunk_events", cfg.point_process.chunk_events);
        o.get("init_scale", cfg.point_process.init_scale);
        o.finish();
    }
    if (const auto* p = root.object("prediction")) {
        StrictObject o(*p, "prediction");
        o.get("sample_points", cfg.prediction.sample_points);
        o.get("lags", cfg.prediction.lags);
        o.finish();
    }
    if (const auto* t = root.object("training")) {
        StrictObject o(*t, "training");
        o.get("lr", cfg.training.lr);
        o.get("weight_decay", cfg.training.weight_decay);
        o.get("lr_mle", cfg.training.lr_mle);
        o.get("mle_optimizer", cfg.training.mle_optimizer);
        o.get("batch", cfg.training.batch);
        o.get("epochs_stage1", cfg.training.epochs_stage1);
        o.get("epochs_stage2", cfg.training.epochs_stage2);
        o.get("epochs_stage3", cfg.training.epochs_stage3);
        o.get("intervals_per_day", cfg.training.intervals_per_day);
        o.get("interval_hours", cfg.training.interval_hours);
        o.finish();
    }
    if (const auto* e = root.object("evaluation")) {
        StrictObject o(*e, "evaluation");
        o.get("threshold", cfg.evaluation.threshold);
        o.get("hr_k", cfg.evaluation.hr_k);
        o.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_json(ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    j["grid"] = {{"lat_min", cfg.grid.bbox.lat_min}, {"lat_max", cfg.grid.bbox.lat_max},
                 {"lon_min", cfg.grid.bbox.lon_min}, {"lon_max", cfg.grid.bbox.lon_max},
                 {"cell_km", cfg.grid.cell_km}};
    j["encoding"] = {{"dim", cfg.encoding.dim}, {"target_dim", cfg.encoding.target_dim}};
    j["sampler"] = {{"time_samples", cfg.sampler.time_samples},
                    {"space_samples", cfg.sampler.space_samples},
                    {"replacement", cfg.sampler.replacement}};
    j["attention"] = {{"heads", cfg.attention.heads}};
    j["point_process"] = {{"hidden_dim", cfg.point_process.hidden_dim},
                          {"dynamics_hidden", cfg.point_process.dynamics_hidden},
                          {"coupling_hidden", cfg.point_process.coupling_hidden},
                          {"solver_steps", cfg.point_process.solver_steps},
                          {"max_spatial_jumps", cfg.point_process.max_spatial_jumps},
                          {"chunk_events", cfg.point_process.chunk_events},
                          {"init_scale", cfg.point_process.init_scale}};
    j["prediction"] = {{"sample_points", cfg.prediction.sample_points},
                       {"lags", cfg.prediction.lags}};
    j["training"] = {{"lr", cfg.training.lr},
                     {"weight_decay", cfg.training.weight_decay},
                     {"lr_mle", cfg.training.lr_mle},
                     {"mle_optimizer", cfg.training.mle_optimizer},
                     {"batch", cfg.training.batch},
                     {"epochs_stage1", cfg.training.epochs_stage1},
                     {"epochs_stage2", cfg.training.epochs_stage2},
                     {"epochs_stage3", cfg.training.epochs_stage3},
                     {"intervals_per_day", cfg.training.intervals_per_day},
                     {"interval_hours", cfg.training.interval_hours}};
    j["evaluation"] = {{"threshold", cfg.evaluation.threshold}, {"hr_k", cfg.evaluation.hr_k}};
    return j.dump(2);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config override must look like section.key=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    // Round-trips through JSON so overrides share the strict parser.
    ordered_json j = ordered_json::parse(config_to_json(cfg));
    ordered_json* cur = &j;
    size_t pos = 0;
    while (true) {
        size_t dotp = path.find('.', pos);
        std::string key = path.substr(pos, dotp == std::string::npos ? std::string::npos : dotp - pos);
        if (!cur->contains(key)) throw ConfigError("config override: unknown key " + path);
        cur = &(*cur)[key];
        if (dotp == std::string::npos) break;
        pos = dotp + 1;
    }
    try {
        *cur = ordered_json::parse(value);
    } catch (const nlohmann::json::exception&) {
        *cur = value; // bare strings are allowed unquoted
    }
    cfg = parse_config_json(j.dump());
}

} // namespace flexicrime
