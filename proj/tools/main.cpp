// flexicrime command-line interface: synth, ingest, train, predict, evaluate,
// inspect. Commands are independent processes; all randomness flows from the
// config seed, so identical inputs reproduce identical outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flexicrime/checkpoint.hpp"
#include "flexicrime/errors.hpp"
#include "flexicrime/evaluation.hpp"
#include "flexicrime/parallel.hpp"
#include "flexicrime/prediction.hpp"
#include "flexicrime/synth.hpp"
#include "flexicrime/training.hpp"

namespace fs = std::filesystem;
using namespace flexicrime;
using nlohmann::ordered_json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    int threads = -1; // -1: leave defaults; 1: serial reference path
};

void apply_threads(int threads) {
    if (threads == 1) {
        par::mode() = par::Mode::serial;
    }
#ifdef _OPENMP
    else if (threads > 1) {
        par::mode() = par::Mode::openmp;
        omp_set_num_threads(threads);
    }
#endif
}

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config(opts.config_path);
    for (const std::string& o : opts.overrides) apply_override(cfg, o);
    cfg.validate();
    apply_threads(opts.threads);
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "run configuration JSON");
    cmd->add_option("--set", opts.overrides, "override config values, e.g. training.batch=16");
    cmd->add_option("--threads", opts.threads, "worker threads (1 = serial reference path)");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << text;
}

// Remaps an ingested dataset onto the model's type vocabulary; records of
// unknown types are dropped (they cannot condition the typed processes).
int align_types(CrimeDataset& ds, const std::vector<std::string>& model_types) {
    std::vector<int> remap(ds.types.size(), -1);
    for (size_t i = 0; i < ds.types.size(); ++i)
        for (size_t j = 0; j < model_types.size(); ++j)
            if (ds.types[i] == model_types[j]) remap[i] = static_cast<int>(j);
    std::vector<CrimeRecord> kept;
    int dropped = 0;
    for (CrimeRecord r : ds.records) {
        int t = remap[static_cast<size_t>(r.type)];
        if (t < 0) {
            ++dropped;
            continue;
        }
        r.type = t;
        kept.push_back(r);
    }
    ds.records = std::move(kept);
    ds.types = model_types;
    ds.by_type.assign(model_types.size(), {});
    for (size_t i = 0; i < ds.records.size(); ++i)
        ds.by_type[static_cast<size_t>(ds.records[i].type)].push_back(static_cast<int>(i));
    return dropped;
}

Interval parse_interval(const std::string& start, double hours, const CrimeDataset& ds) {
    int64_t civil_day;
    double tod;
    if (!parse_iso_minutes(start, civil_day, tod))
        throw ConfigError("bad --start value (expect YYYY-MM-DDTHH:MM): " + start);
    double abs_start = static_cast<double>(civil_day - ds.epoch_civil_day) + tod;
    if (hours <= 0.0) throw ConfigError("--hours must be positive");
    return Interval{abs_start, hours};
}

// Test-period evaluation intervals under the training policy.
std::vector<Interval> evaluation_intervals(const Model& model, const History& hist,
                                           int first_day, int last_day, uint64_t seed) {
    std::vector<Interval> out;
    const TrainingConfig& tc = model.cfg.training;
    int l = model.cfg.prediction.sample_points;
    int L = model.cfg.prediction.lags;
    int need = model.cfg.sampler.replacement
                   ? 1
                   : std::max(model.cfg.sampler.time_samples, model.cfg.sampler.space_samples);
    for (int day = first_day; day <= last_day; ++day) {
        Rng rng(mix_seed(seed, 0xE7, static_cast<uint64_t>(day)));
        for (int i = 0; i < tc.intervals_per_day; ++i) {
            int hours = tc.interval_hours[static_cast<size_t>(i) % tc.interval_hours.size()];
            Interval iv{day + static_cast<double>(rng.below(24)) / 24.0,
                        static_cast<double>(hours)};
            double gap = iv.hours / 24.0 / (l - 1);
            if (iv.end() > last_day + 1.0) continue;
            if (iv.start - L * gap < hist.ds->day_first()) continue;
            if (hist.count_before(iv.start) < need) continue;
            out.push_back(iv);
        }
    }
    return out;
}

int cmd_synth(const std::string& spec_path, const std::string& out_path,
              const std::string& poi_out) {
    GeneratorSpec spec = load_generator_spec(spec_path);
    CrimeDataset ds = generate(spec);
    write_events_csv(ds, out_path);
    if (!poi_out.empty()) write_poi_csv(generate_pois(spec), poi_out);
    ordered_json j;
    j["events"] = ds.records.size();
    j["types"] = ds.types;
    j["days"] = ds.day_span();
    j["out"] = out_path;
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct LoadedWorld {
    Model model;
    CrimeDataset ds;
};

// Shared by ingest and train: grid + PoI features + dataset.
LoadedWorld load_world(const RunConfig& cfg, const std::string& events_path,
                       const std::string& poi_path) {
    LoadedWorld w;
    w.model.cfg = cfg;
    w.model.grid = build_grid(cfg.grid.bbox, cfg.grid.cell_km, cfg.encoding.dim);
    PoiTable pois;
    if (!poi_path.empty()) {
        pois = ingest_pois(poi_path, &w.model.grid.bbox);
        if (pois.out_of_bbox > 0)
            std::cerr << "warning: " << pois.out_of_bbox << " PoIs outside the grid bbox\n";
    } else {
        std::cerr << "warning: no PoI file given; region features fall back to zeros\n";
    }
    attach_poi_counts(w.model.grid, pois);
    w.ds = ingest_events(events_path, w.model.grid);
    if (w.ds.skipped_rows > 0)
        std::cerr << "warning: skipped " << w.ds.skipped_rows << " malformed/out-of-bbox rows\n";
    w.model.types = w.ds.types;
    return w;
}

int cmd_ingest(const CommonOpts& common, const std::string& events_path,
               const std::string& poi_path, const std::string& out_dir) {
    RunConfig cfg = resolve_config(common);
    LoadedWorld w = load_world(cfg, events_path, poi_path);
    w.model.scaler = fit_scaler(w.ds);
    w.model.day_span = w.ds.day_span();
    w.model.configure_params();
    w.model.init_params();
    materialize_region_embeddings(w.model);

    fs::create_directories(out_dir);
    write_events_csv(w.ds, out_dir + "/events_normalized.csv");
    // per-cell event counts as a grid artifact
    std::vector<double> counts(static_cast<size_t>(w.model.grid.cell_count()), 0.0);
    for (const CrimeRecord& r : w.ds.records) counts[static_cast<size_t>(r.grid_id)] += 1.0;
    export_heatmap(counts, w.model.grid.rows, w.model.grid.cols, out_dir + "/event_counts.csv");

    ordered_json j;
    j["records"] = w.ds.records.size();
    j["skipped_rows"] = w.ds.skipped_rows;
    j["types"] = w.ds.types;
    j["days"] = w.ds.day_span();
    j["grid"] = {{"rows", w.model.grid.rows},
                 {"cols", w.model.grid.cols},
                 {"poi_categories", w.model.grid.poi_categories}};
    write_text(out_dir + "/ingest_summary.json", j.dump(2));
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& events_path,
              const std::string& poi_path, const std::string& out_dir) {
    RunConfig cfg = resolve_config(common);
    LoadedWorld w = load_world(cfg, events_path, poi_path);

    auto [train_ds, test_ds] = split_dataset(w.ds, 7, 1);
    w.model.scaler = fit_scaler(train_ds);
    w.model.day_span = train_ds.day_span();
    w.model.configure_params();
    w.model.init_params();

    fs::create_directories(out_dir);
    std::ofstream log_stream(out_dir + "/train_log.jsonl");
    TrainLogger logger(&log_stream);

    History hist = build_history(w.model, train_ds);
    train_full(w.model, hist, train_ds, logger, [&](const Model& m, TrainStage stage) {
        Model snapshot = m;
        materialize_region_embeddings(snapshot);
        save_checkpoint(snapshot, out_dir + "/checkpoint_stage" +
                                      std::to_string(static_cast<int>(stage)) + ".json");
    });

    ordered_json j;
    j["checkpoints"] = {out_dir + "/checkpoint_stage1.json", out_dir + "/checkpoint_stage2.json",
                        out_dir + "/checkpoint_stage3.json"};
    j["train_records"] = train_ds.records.size();
    j["test_records"] = test_ds.records.size();
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_predict(const CommonOpts& common, const std::string& checkpoint_path,
                const std::string& events_path, const std::string& start, double hours,
                const std::string& type_name, int grid_cell, bool whole_city,
                const std::string& out_csv, const std::string& out_json) {
    Model model = load_checkpoint(checkpoint_path);
    for (const std::string& o : common.overrides) apply_override(model.cfg, o);
    apply_threads(common.threads);

    CrimeDataset ds = ingest_events(events_path, model.grid);
    int dropped = align_types(ds, model.types);
    if (dropped > 0)
        std::cerr << "warning: dropped " << dropped << " records of types unknown to the model\n";
    if (ds.records.empty()) throw DataError("predict: no usable history records");

    int type = -1;
    for (size_t i = 0; i < model.types.size(); ++i)
        if (model.types[i] == type_name) type = static_cast<int>(i);
    if (type < 0) throw ConfigError("unknown crime type: " + type_name);
    if (grid_cell < 0 || grid_cell >= model.grid.cell_count())
        throw ConfigError("grid cell out of range");

    Interval iv = parse_interval(start, hours, ds);
    History hist = build_history(model, ds);
    ProcessBank bank = ProcessBank::build(model, hist, mix_seed(model.cfg.seed, 0xBA));

    ordered_json j;
    j["interval"] = {{"start", start}, {"hours", hours}};
    j["type"] = type_name;
    if (whole_city) {
        std::vector<double> probs =
            predict_city(model, hist, &bank, iv, type, mix_seed(model.cfg.seed, 0x93ed));
        if (!out_csv.empty()) export_heatmap(probs, model.grid.rows, model.grid.cols, out_csv);
        j["cells"] = probs;
        double mx = 0.0;
        int argmax = 0;
        for (size_t g = 0; g < probs.size(); ++g)
            if (probs[g] > mx) {
                mx = probs[g];
                argmax = static_cast<int>(g);
            }
        j["max_probability"] = mx;
        j["max_cell"] = argmax;
    } else {
        HotspotQuery q{iv, grid_cell, type};
        double p = predict_probability(model, hist, &bank, q, mix_seed(model.cfg.seed, 0x93ed));
        j["grid"] = grid_cell;
        j["probability"] = p;
    }
    std::string text = j.dump(2);
    if (!out_json.empty()) write_text(out_json, text);
    std::cout << text << "\n";
    return 0;
}

int cmd_evaluate(const CommonOpts& common, const std::string& checkpoint_path,
                 const std::string& events_path, const std::string& out_dir, bool heatmaps) {
    Model model = load_checkpoint(checkpoint_path);
    for (const std::string& o : common.overrides) apply_override(model.cfg, o);
    apply_threads(common.threads);

    CrimeDataset ds = ingest_events(events_path, model.grid);
    align_types(ds, model.types);
    auto [train_ds, test_ds] = split_dataset(ds, 7, 1);
    if (test_ds.records.empty()) throw DataError("evaluate: test period has no records");

    History hist = build_history(model, ds); // history visible up to each query start
    ProcessBank bank = ProcessBank::build(model, hist, mix_seed(model.cfg.seed, 0xBA));
    std::vector<Interval> intervals = evaluation_intervals(
        model, hist, test_ds.day_first(), test_ds.day_last(), model.cfg.seed);
    if (intervals.empty()) throw DataError("evaluate: no feasible evaluation intervals");

    size_t n_types = model.types.size();
    std::vector<std::vector<double>> preds(n_types);
    std::vector<std::vector<uint8_t>> labels(n_types);
    std::vector<double> scores;
    std::vector<uint8_t> score_labels;
    double hr_acc = 0.0;
    int hr_count = 0;

    fs::create_directories(out_dir);
    for (size_t ii = 0; ii < intervals.size(); ++ii) {
        const Interval& iv = intervals[ii];
        for (size_t c = 0; c < n_types; ++c) {
            std::vector<double> p = predict_city(model, hist, &bank, iv, static_cast<int>(c),
                                                 mix_seed(model.cfg.seed, 0xEE, ii, c));
            std::vector<uint8_t> y = label_interval(ds, model.grid, iv, static_cast<int>(c));
            std::vector<double> counts(p.size(), 0.0);
            for (const CrimeRecord& r : ds.records)
                if (r.type == static_cast<int>(c) && r.abs_time() >= iv.start &&
                    r.abs_time() < iv.end())
                    counts[static_cast<size_t>(r.grid_id)] += 1.0;

            preds[c].insert(preds[c].end(), p.begin(), p.end());
            labels[c].insert(labels[c].end(), y.begin(), y.end());
            scores.insert(scores.end(), p.begin(), p.end());
            score_labels.insert(score_labels.end(), y.begin(), y.end());
            bool any = false;
            for (double v : counts)
                if (v > 0.0) any = true;
            if (any) {
                int k = std::min(model.cfg.evaluation.hr_k, model.grid.cell_count());
                hr_acc += hit_ratio_at_k(p, counts, k);
                ++hr_count;
            }
            if (heatmaps && ii == 0)
                export_heatmap(p, model.grid.rows, model.grid.cols,
                               out_dir + "/heatmap_" + model.types[c] + ".csv",
                               out_dir + "/heatmap_" + model.types[c] + ".pgm");
        }
    }

    MetricReport rep = f1_metrics(preds, labels, model.types, model.cfg.evaluation.threshold);
    rep.k = std::min(model.cfg.evaluation.hr_k, model.grid.cell_count());
    rep.hr_at_k = hr_count > 0 ? hr_acc / hr_count : -1.0;
    rep.auc = auc_score(scores, score_labels);
    write_text(out_dir + "/metrics.json", rep.to_json());
    std::cout << rep.to_json() << "\n";
    return 0;
}

int cmd_inspect(const std::string& checkpoint_path, const std::string& events_path) {
    ordered_json j;
    if (!checkpoint_path.empty()) {
        Model m = load_checkpoint(checkpoint_path);
        size_t params = 0;
        auto count = [&params](const ParamBlock& b) { params += b.size(); };
        m.theta0.for_each_block(count);
        for (const auto& p : m.theta1) p.for_each_block(count);
        m.theta2.for_each_block(count);
        j["checkpoint"] = {{"version", kCheckpointVersion},
                           {"stage", static_cast<int>(m.stage)},
                           {"types", m.types},
                           {"parameters", params},
                           {"grid", {{"rows", m.grid.rows}, {"cols", m.grid.cols}}},
                           {"day_span", m.day_span},
                           {"seed", m.cfg.seed}};
    }
    if (!events_path.empty()) {
        RunConfig cfg;
        CityGrid grid = build_grid(cfg.grid.bbox, cfg.grid.cell_km, cfg.encoding.dim);
        CrimeDataset ds = ingest_events(events_path, grid);
        j["events"] = {{"records", ds.records.size()},
                       {"types", ds.types},
                       {"days", ds.day_span()},
                       {"skipped_rows", ds.skipped_rows}};
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int error_exit(const char* kind, const std::string& message, int code) {
    ordered_json j;
    j["error"] = {{"kind", kind}, {"message", message}, {"exit_code", code}};
    std::cerr << j.dump() << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FlexiCrime: event-centric crime hotspot prediction over flexible intervals"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic event dataset");
    std::string spec_path, synth_out, synth_poi_out;
    synth->add_option("--spec", spec_path, "generator spec JSON")->required();
    synth->add_option("--out", synth_out, "output events CSV")->required();
    synth->add_option("--poi-out", synth_poi_out, "also write synthetic PoIs");

    auto* ingest = app.add_subcommand("ingest", "parse events/PoIs and emit grid artifacts");
    CommonOpts ingest_common;
    std::string in_events, in_pois, ingest_dir = "ingest_out";
    ingest->add_option("--events", in_events, "events CSV")->required();
    ingest->add_option("--pois", in_pois, "PoI CSV");
    ingest->add_option("--out-dir", ingest_dir, "artifact directory");
    add_common(ingest, ingest_common);

    auto* train = app.add_subcommand("train", "run the three-stage training pipeline");
    CommonOpts train_common;
    std::string tr_events, tr_pois, train_dir = "train_out";
    train->add_option("--events", tr_events, "events CSV")->required();
    train->add_option("--pois", tr_pois, "PoI CSV");
    train->add_option("--out-dir", train_dir, "checkpoint/log directory");
    add_common(train, train_common);

    auto* predict = app.add_subcommand("predict", "hotspot probability for an interval");
    CommonOpts pred_common;
    std::string ck_path, pr_events, pr_start, pr_type, pr_csv, pr_json;
    double pr_hours = 24.0;
    int pr_grid = 0;
    bool pr_all = false;
    predict->add_option("--checkpoint", ck_path, "trained checkpoint")->required();
    predict->add_option("--events", pr_events, "history events CSV")->required();
    predict->add_option("--start", pr_start, "interval start, YYYY-MM-DDTHH:MM")->required();
    predict->add_option("--hours", pr_hours, "interval length in hours")->required();
    predict->add_option("--type", pr_type, "target crime type")->required();
    predict->add_option("--grid", pr_grid, "target cell index");
    predict->add_flag("--all", pr_all, "evaluate every cell");
    predict->add_option("--out", pr_csv, "write city probabilities as CSV (with --all)");
    predict->add_option("--json", pr_json, "write the JSON record to this path");
    add_common(predict, pred_common);

    auto* evaluate = app.add_subcommand("evaluate", "metrics on the held-out test period");
    CommonOpts eval_common;
    std::string ev_ck, ev_events, ev_dir = "eval_out";
    bool ev_heatmaps = false;
    evaluate->add_option("--checkpoint", ev_ck, "trained checkpoint")->required();
    evaluate->add_option("--events", ev_events, "events CSV (full span; 7:1 split)")->required();
    evaluate->add_option("--out-dir", ev_dir, "report directory");
    evaluate->add_flag("--heatmaps", ev_heatmaps, "export probability heatmaps");
    add_common(evaluate, eval_common);

    auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint or dataset");
    std::string is_ck, is_events;
    inspect->add_option("--checkpoint", is_ck, "checkpoint path");
    inspect->add_option("--events", is_events, "events CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(spec_path, synth_out, synth_poi_out);
        if (ingest->parsed()) return cmd_ingest(ingest_common, in_events, in_pois, ingest_dir);
        if (train->parsed()) return cmd_train(train_common, tr_events, tr_pois, train_dir);
        if (predict->parsed())
            return cmd_predict(pred_common, ck_path, pr_events, pr_start, pr_hours, pr_type,
                               pr_grid, pr_all, pr_csv, pr_json);
        if (evaluate->parsed())
            return cmd_evaluate(eval_common, ev_ck, ev_events, ev_dir, ev_heatmaps);
        if (inspect->parsed()) return cmd_inspect(is_ck, is_events);
    } catch (const ConfigError& e) {
        return error_exit("config", e.what(), 2);
    } catch (const std::invalid_argument& e) {
        return error_exit("config", e.what(), 2);
    } catch (const DataError& e) {
        return error_exit("data", e.what(), 3);
    } catch (const std::out_of_range& e) {
        return error_exit("data", e.what(), 3);
    } catch (const CheckpointError& e) {
        return error_exit("checkpoint", e.what(), 4);
    } catch (const NumericError& e) {
        return error_exit("numeric", e.what(), 4);
    } catch (const std::exception& e) {
        return error_exit("internal", e.what(), 1);
    }
    return 0;
}
