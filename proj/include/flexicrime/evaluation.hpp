#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace flexicrime {

struct TypeMetrics {
    std::string type;
    long tp = 0, fp = 0, fn = 0;
    double f1 = 0.0;
};

struct MetricReport {
    std::vector<TypeMetrics> per_type;
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    double hr_at_k = -1.0; // unset when negative
    int k = 0;
    double auc = -1.0;

    std::string to_json() const;
};

// Binarizes predictions at `threshold` and pools confusion counts. Per-type
// vectors hold one entry per scored instance; a type with neither positives
// nor predicted positives contributes F1 = 0 to the macro average.
MetricReport f1_metrics(const std::vector<std::vector<double>>& predictions,
                        const std::vector<std::vector<uint8_t>>& labels,
                        const std::vector<std::string>& type_names, double threshold);

// |top-k(pred) interseca top-k(truth)| / k, ties broken toward the lower cell
// index. Throws std::invalid_argument for k < 1 or k > cells.
double hit_ratio_at_k(std::span<const double> predicted, std::span<const double> true_counts,
                      int k);

// Rank-based AUC with midrank tie handling; 0.5 when either class is empty.
double auc_score(std::span<const double> scores, std::span<const uint8_t> labels);

// Row-major CSV matrix (17 significant digits, round-trips to 1e-9 and
// better); optionally an 8-bit grayscale PGM scaled to [min, max].
void export_heatmap(std::span<const double> matrix, int rows, int cols,
                    const std::string& csv_path, const std::string& pgm_path = "");

std::vector<double> read_matrix_csv(const std::string& path, int& rows, int& cols);

} // namespace flexicrime
