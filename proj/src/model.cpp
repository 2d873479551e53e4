#include "flexicrime/model.hpp"

#include <algorithm>

#include "flexicrime/errors.hpp"

namespace flexicrime {

void ContextParams::configure(const EncodingConfig& enc, const AttentionConfig& att,
                              int poi_categories, int n_types) {
    dim = enc.dim;
    target_dim = enc.target_dim;
    n_heads = att.heads;
    head_dim = dim / att.heads;

    region_w.name = "theta0.region_w";
    region_w.resize(static_cast<size_t>(dim) * std::max(poi_categories, 1));
    region_b.name = "theta0.region_b";
    region_b.resize(static_cast<size_t>(dim));
    temporal.configure("theta0.temporal", dim);
    target.configure("theta0.target", target_dim, dim, n_types);
    heads.resize(static_cast<size_t>(att.heads));
    for (int h = 0; h < att.heads; ++h) {
        heads[static_cast<size_t>(h)].q.name = "theta0.head" + std::to_string(h) + ".q";
        heads[static_cast<size_t>(h)].q.resize(static_cast<size_t>(head_dim) * dim);
        heads[static_cast<size_t>(h)].k.name = "theta0.head" + std::to_string(h) + ".k";
        heads[static_cast<size_t>(h)].k.resize(static_cast<size_t>(head_dim) * dim);
    }
    w_msa.name = "theta0.w_msa";
    w_msa.resize(static_cast<size_t>(dim) * (att.heads * target_dim));
    extrap.configure("theta0.extrap", dim, dim);
}

void ContextParams::init(uint64_t seed) {
    double s_enc = 0.1;
    init_uniform(region_w, seed, s_enc);
    temporal.init(seed);
    target.init(seed, s_enc);
    for (auto& h : heads) {
        init_uniform(h.q, seed, s_enc);
        init_uniform(h.k, seed, s_enc);
    }
    init_uniform(w_msa, seed, s_enc);
    extrap.init(seed, s_enc);
}

void ProcessParams::configure(const std::string& name, const PointProcessConfig& pp,
                              int target_dim, int context_dim) {
    hidden_dim = pp.hidden_dim;
    type_dim = target_dim / 2;
    cc_dim = context_dim;

    f_t.configure(name + ".f_t", 1 + hidden_dim + Model::kDayFeatures, pp.dynamics_hidden,
                  hidden_dim);
    psi_t.configure(name + ".psi_t", 1 + type_dim + Model::kDayFeatures, hidden_dim);
    lam_w.name = name + ".lam_w";
    lam_w.resize(static_cast<size_t>(hidden_dim));
    lam_b.name = name + ".lam_b";
    lam_b.resize(1);
    f_s.configure(name + ".f_s", 1 + 2 + hidden_dim, pp.dynamics_hidden, 2);
    int cond = 1 + hidden_dim + cc_dim;
    couple_cond.configure(name + ".couple_cond", cond, pp.coupling_hidden, 2);
    couple_coord.configure(name + ".couple_coord", cond + 1, pp.coupling_hidden, 2);
    h0.name = name + ".h0";
    h0.resize(static_cast<size_t>(hidden_dim));
}

void ProcessParams::init(uint64_t seed, double scale) {
    f_t.init(seed, scale);
    psi_t.init(seed, scale);
    init_uniform(lam_w, seed, scale);
    f_s.init(seed, scale);
    couple_cond.init(seed, scale);
    couple_coord.init(seed, scale);
    Rng rng(mix_seed(seed, hash_str(h0.name.c_str())));
    for (double& v : h0.w) v = rng.normal();
}

void PredictionParams::configure(const EncodingConfig& enc, const PointProcessConfig& pp,
                                 const PredictionConfig& pred) {
    evolve.configure("theta2.evolve", 1 + pp.hidden_dim + Model::kDayFeatures + 2, enc.dim,
                     enc.dim);
    head.configure("theta2.head", (2 * pred.sample_points - 1) * enc.dim, enc.dim, 1);
}

void PredictionParams::init(uint64_t seed, double scale) {
    evolve.init(seed, scale);
    head.init(seed, scale);
}

void Model::configure_params() {
    if (types.empty()) throw ConfigError("model: no crime types configured");
    theta0.configure(cfg.encoding, cfg.attention, grid.poi_categories,
                     static_cast<int>(types.size()));
    theta1.clear();
    theta1.resize(types.size());
    for (size_t c = 0; c < types.size(); ++c) {
        theta1[c].configure("theta1." + types[c], cfg.point_process, cfg.encoding.target_dim,
                            cfg.encoding.dim);
        theta1[c].self_type = static_cast<int>(c);
    }
    theta2.configure(cfg.encoding, cfg.point_process, cfg.prediction);
}

void Model::init_params() {
    theta0.init(cfg.seed);
    for (auto& p : theta1) p.init(cfg.seed, cfg.point_process.init_scale);
    theta2.init(cfg.seed, 0.1);
}

BlockSet Model::blocks_theta0() {
    BlockSet s;
    theta0.for_each_block([&](ParamBlock& b) { s.add(b); });
    return s;
}

BlockSet Model::blocks_theta1(int type) {
    BlockSet s;
    theta1[static_cast<size_t>(type)].for_each_trainable([&](ParamBlock& b) { s.add(b); });
    return s;
}

BlockSet Model::blocks_theta2() {
    BlockSet s;
    theta2.for_each_block([&](ParamBlock& b) { s.add(b); });
    return s;
}

namespace {
uint64_t hash_of(const std::vector<const ParamBlock*>& blocks) {
    return hash_blocks(std::span<const ParamBlock* const>(blocks.data(), blocks.size()));
}
} // namespace

uint64_t Model::hash_theta0() const {
    std::vector<const ParamBlock*> v;
    theta0.for_each_block([&](const ParamBlock& b) { v.push_back(&b); });
    return hash_of(v);
}

uint64_t Model::hash_theta1(int type) const {
    std::vector<const ParamBlock*> v;
    theta1[static_cast<size_t>(type)].for_each_block(
        [&](const ParamBlock& b) { v.push_back(&b); });
    return hash_of(v);
}

uint64_t Model::hash_theta2() const {
    std::vector<const ParamBlock*> v;
    theta2.for_each_block([&](const ParamBlock& b) { v.push_back(&b); });
    return hash_of(v);
}

double Model::all_squared_norm() {
    double acc = blocks_theta0().squared_norm() + blocks_theta2().squared_norm();
    for (size_t c = 0; c < theta1.size(); ++c) acc += blocks_theta1(static_cast<int>(c)).squared_norm();
    return acc;
}

std::array<double, Model::kDayFeatures> Model::day_features(int day) const {
    std::array<double, kDayFeatures> f{};
    int dow = ((day % 7) + 7) % 7;
    f[static_cast<size_t>(dow)] = 1.0;
    f[7] = static_cast<double>(day) / std::max(1, day_span);
    return f;
}

int History::count_before(double t) const {
    auto it = std::lower_bound(abs_t.begin(), abs_t.end(), t);
    return static_cast<int>(it - abs_t.begin());
}

History build_history(const Model& model, const CrimeDataset& ds) {
    History h;
    h.ds = &ds;
    size_t n = ds.records.size();
    h.abs_t.resize(n);
    h.x.resize(n);
    h.y.resize(n);
    h.event_spatial.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const CrimeRecord& r = ds.records[i];
        h.abs_t[i] = r.abs_time();
        auto [sx, sy] = model.scaler.to_std(r.lat, r.lon);
        h.x[i] = sx;
        h.y[i] = sy;
        h.event_spatial[i] = spatial_encode(sx, sy, model.cfg.encoding.dim);
    }
    int cells = model.grid.cell_count();
    h.cell_spatial.resize(static_cast<size_t>(cells));
    h.cell_x.resize(static_cast<size_t>(cells));
    h.cell_y.resize(static_cast<size_t>(cells));
    for (int g = 0; g < cells; ++g) {
        auto [cx, cy] = model.grid.center_std(g, model.scaler);
        h.cell_x[static_cast<size_t>(g)] = cx;
        h.cell_y[static_cast<size_t>(g)] = cy;
        h.cell_spatial[static_cast<size_t>(g)] = spatial_encode(cx, cy, model.cfg.encoding.dim);
    }
    return h;
}

} // namespace flexicrime
