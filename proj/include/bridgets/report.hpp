#ifndef BRIDGETS_REPORT_HPP
#define BRIDGETS_REPORT_HPP

#include <string>
#include <vector>

#include <json.hpp>

#include "bridgets/trainer.hpp"

namespace bridgets {

struct DatasetSpec {
    std::string name;
    std::string path;
};

/// Cross product of datasets x mask ratios x model variants, evaluated over
/// a shared seed list. Variants: bridge-ts-1/2/3 (best 1/2/3 pool experts by
/// validation masked MSE), linear-bridge, bridge-ts-d (deterministic twin),
/// expert-only:<pool-entry>.
struct ExperimentMatrix {
    std::vector<DatasetSpec> datasets;
    std::vector<double> ratios = {0.125, 0.25, 0.375, 0.5};
    std::vector<std::string> variants;
    std::vector<uint64_t> seeds = {1};
    std::vector<std::string> expert_pool = {"conv@1", "conv@2", "linear"};
    nlohmann::json train;     // TrainConfig overrides for every cell
    nlohmann::json pretrain;  // PretrainConfig overrides for pool experts

    static ExperimentMatrix from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct CellKey {
    std::string dataset;
    double ratio = 0.0;
    std::string variant;
};

struct CellResult {
    double mse_mean = 0.0;
    double mse_std = 0.0;
    double mae_mean = 0.0;
    double mae_std = 0.0;
    double runtime_s = 0.0;
    bool failed = false;
    std::string error;
};

struct ResultTable {
    std::vector<std::pair<CellKey, CellResult>> rows;
};

struct MatrixStats {
    int computed = 0;
    int from_ledger = 0;
    int failed = 0;
};

/// Runs every cell, caching pool-expert pretraining per (dataset, ratio) and
/// skipping cells already present in the on-disk ledger under `cache_dir`.
/// Per-cell failures are recorded, not fatal.
ResultTable run_matrix(const ExperimentMatrix& m, const std::string& cache_dir,
                       MatrixStats* stats = nullptr);

/// CSV: header dataset,ratio,variant,mse_mean,mse_std,mae_mean,mae_std,runtime_s
/// with 6-significant-digit values. Failed cells are omitted.
void emit_report_csv(const ResultTable& t, const std::string& path);

/// Markdown: one table per dataset, ratios as rows, (MSE, MAE) column pair
/// per variant.
void emit_report_markdown(const ResultTable& t, const std::string& path);

ResultTable parse_report_csv(const std::string& path);

std::string format_significant(double value);

}  // namespace bridgets

#endif  // BRIDGETS_REPORT_HPP
