#include "flexicrime/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "flexicrime/errors.hpp"

namespace flexicrime {

namespace {

double f1_from_counts(long tp, long fp, long fn) {
    if (tp == 0) return 0.0;
    double precision = static_cast<double>(tp) / (tp + fp);
    double recall = static_cast<double>(tp) / (tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

} // namespace

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["micro_f1"] = micro_f1;
    j["macro_f1"] = macro_f1;
    if (hr_at_k >= 0.0) {
        j["hr_at_k"] = hr_at_k;
        j["k"] = k;
    }
    if (auc >= 0.0) j["auc"] = auc;
    j["per_type"] = nlohmann::ordered_json::array();
    for (const TypeMetrics& t : per_type) {
        j["per_type"].push_back({{"type", t.type},
                                 {"tp", t.tp},
                                 {"fp", t.fp},
                                 {"fn", t.fn},
                                 {"f1", t.f1}});
    }
    return j.dump(2);
}

MetricReport f1_metrics(const std::vector<std::vector<double>>& predictions,
                        const std::vector<std::vector<uint8_t>>& labels,
                        const std::vector<std::string>& type_names, double threshold) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("f1_metrics: type dimension mismatch");
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("f1_metrics: threshold must lie in (0,1)");

    MetricReport rep;
    long tp_all = 0, fp_all = 0, fn_all = 0;
    double macro_acc = 0.0;
    for (size_t c = 0; c < predictions.size(); ++c) {
        if (predictions[c].size() != labels[c].size())
            throw std::invalid_argument("f1_metrics: instance dimension mismatch");
        TypeMetrics m;
        m.type = c < type_names.size() ? type_names[c] : ("type" + std::to_string(c));
        for (size_t i = 0; i < predictions[c].size(); ++i) {
            bool pred = predictions[c][i] >= threshold;
            bool truth = labels[c][i] != 0;
            if (pred && truth) ++m.tp;
            else if (pred) ++m.fp;
            else if (truth) ++m.fn;
        }
        m.f1 = f1_from_counts(m.tp, m.fp, m.fn);
        tp_all += m.tp;
        fp_all += m.fp;
        fn_all += m.fn;
        macro_acc += m.f1;
        rep.per_type.push_back(std::move(m));
    }
    rep.micro_f1 = f1_from_counts(tp_all, fp_all, fn_all);
    rep.macro_f1 = predictions.empty() ? 0.0 : macro_acc / static_cast<double>(predictions.size());
    return rep;
}

double hit_ratio_at_k(std::span<const double> predicted, std::span<const double> true_counts,
                      int k) {
    if (k < 1) throw std::invalid_argument("hit_ratio_at_k: k must be at least 1");
    if (predicted.size() != true_counts.size())
        throw std::invalid_argument("hit_ratio_at_k: shape mismatch");
    if (static_cast<size_t>(k) > predicted.size())
        throw std::invalid_argument("hit_ratio_at_k: k exceeds the number of cells");

    auto top_k = [k](std::span<const double> v) {
        std::vector<int> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (v[static_cast<size_t>(a)] != v[static_cast<size_t>(b)])
                return v[static_cast<size_t>(a)] > v[static_cast<size_t>(b)];
            return a < b; // deterministic tie-break toward the lower cell index
        });
        idx.resize(static_cast<size_t>(k));
        return idx;
    };
    std::vector<int> p = top_k(predicted);
    std::vector<int> t = top_k(true_counts);
    std::sort(p.begin(), p.end());
    std::sort(t.begin(), t.end());
    std::vector<int> both;
    std::set_intersection(p.begin(), p.end(), t.begin(), t.end(), std::back_inserter(both));
    return static_cast<double>(both.size()) / k;
}

double auc_score(std::span<const double> scores, std::span<const uint8_t> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("auc_score: shape mismatch");
    size_t n = scores.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double pos = 0.0, neg = 0.0, rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j)); // 1-based
        for (size_t m = i; m < j; ++m)
            if (labels[idx[m]]) rank_sum += midrank;
        i = j;
    }
    for (size_t m = 0; m < n; ++m) (labels[m] ? pos : neg) += 1.0;
    if (pos == 0.0 || neg == 0.0) return 0.5;
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

void export_heatmap(std::span<const double> matrix, int rows, int cols,
                    const std::string& csv_path, const std::string& pgm_path) {
    if (matrix.size() != static_cast<size_t>(rows) * cols)
        throw std::invalid_argument("export_heatmap: matrix shape mismatch");
    for (double v : matrix)
        if (!std::isfinite(v)) throw std::invalid_argument("export_heatmap: non-finite entry");

    std::ofstream out(csv_path);
    if (!out) throw DataError("export_heatmap: cannot open " + csv_path);
    char buf[40];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", matrix[static_cast<size_t>(r) * cols + c]);
            out << buf << (c + 1 < cols ? "," : "\n");
        }
    }
    out.close();

    if (!pgm_path.empty()) {
        double lo = matrix[0], hi = matrix[0];
        for (double v : matrix) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        double range = hi - lo;
        std::ofstream img(pgm_path, std::ios::binary);
        if (!img) throw DataError("export_heatmap: cannot open " + pgm_path);
        img << "P5\n" << cols << " " << rows << "\n255\n";
        for (size_t i = 0; i < matrix.size(); ++i) {
            double u = range > 0.0 ? (matrix[i] - lo) / range : 0.0;
            img.put(static_cast<char>(static_cast<int>(std::lround(u * 255.0))));
        }
    }
}

std::vector<double> read_matrix_csv(const std::string& path, int& rows, int& cols) {
    std::ifstream in(path);
    if (!in) throw DataError("read_matrix_csv: cannot open " + path);
    std::vector<double> values;
    std::string line;
    rows = 0;
    cols = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int c = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::stod(cell));
            ++c;
        }
        if (cols < 0) cols = c;
        else if (c != cols) throw DataError("read_matrix_csv: ragged rows in " + path);
        ++rows;
    }
    return values;
}

} // namespace flexicrime
