#include "bridgets/report.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace bridgets {

namespace fs = std::filesystem;

ExperimentMatrix ExperimentMatrix::from_json(const nlohmann::json& j) {
    ExperimentMatrix m;
    for (const auto& d : j.at("datasets"))
        m.datasets.push_back({d.at("name").get<std::string>(),
                              d.at("path").get<std::string>()});
    if (j.contains("ratios")) m.ratios = j.at("ratios").get<std::vector<double>>();
    m.variants = j.at("variants").get<std::vector<std::string>>();
    if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("expert_pool"))
        m.expert_pool = j.at("expert_pool").get<std::vector<std::string>>();
    if (j.contains("train")) m.train = j.at("train");
    if (j.contains("pretrain")) m.pretrain = j.at("pretrain");
    if (m.datasets.empty() || m.ratios.empty() || m.variants.empty() || m.seeds.empty())
        throw std::invalid_argument("matrix: all axes must be non-empty");
    return m;
}

nlohmann::json ExperimentMatrix::to_json() const {
    nlohmann::json datasets_json = nlohmann::json::array();
    for (const auto& d : datasets)
        datasets_json.push_back({{"name", d.name}, {"path", d.path}});
    return {{"datasets", datasets_json}, {"ratios", ratios},
            {"variants", variants},     {"seeds", seeds},
            {"expert_pool", expert_pool}, {"train", train},
            {"pretrain", pretrain}};
}

std::string format_significant(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    return buf;
}

namespace {

struct PoolEntry {
    std::string pool_spec;    // e.g. "conv@1", "linear"
    std::string prior_spec;   // resolved TrainConfig spec, e.g. "conv:<ckpt>"
    double val_mse = 0.0;
};

uint64_t parse_at_seed(const std::string& spec, std::string& base) {
    const size_t at = spec.find('@');
    if (at == std::string::npos) {
        base = spec;
        return 1;
    }
    base = spec.substr(0, at);
    return std::stoull(spec.substr(at + 1));
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s)
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

void atomic_write(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write: " + tmp);
        out << contents;
    }
    fs::rename(tmp, path);
}

nlohmann::json cell_descriptor(const ExperimentMatrix& m, const DatasetSpec& ds,
                               double ratio, const std::string& variant) {
    return {{"dataset", ds.name},        {"path", ds.path},
            {"ratio", ratio},            {"variant", variant},
            {"seeds", m.seeds},          {"train", m.train},
            {"pretrain", m.pretrain},    {"expert_pool", m.expert_pool}};
}

std::string cell_ledger_path(const std::string& cache_dir, const nlohmann::json& desc) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(desc.dump())));
    return cache_dir + "/ledger/cell_" + buf + ".json";
}

/// Pretrains (or loads from cache) every pool expert for one dataset/ratio
/// and records its validation masked MSE for ranking.
std::vector<PoolEntry> build_pool(const ExperimentMatrix& m, const DatasetSpec& ds,
                                  const DataSplits& splits, double ratio,
                                  const TrainConfig& base_cfg,
                                  const std::string& cache_dir) {
    const auto train_w = make_windows(splits.train, base_cfg.seq_len, base_cfg.stride);
    const auto val_w = make_windows(splits.val, base_cfg.seq_len, base_cfg.eval_stride);
    const int channels = splits.train.channels();

    PretrainConfig pcfg;
    pcfg.max_steps = m.pretrain.value("max_steps", 500);
    pcfg.batch_size = m.pretrain.value("batch_size", 16);
    pcfg.lr = m.pretrain.value("lr", 1e-3);
    pcfg.eval_every = m.pretrain.value("eval_every", 50);
    pcfg.mask_mode = base_cfg.mask_mode;

    std::vector<PoolEntry> pool;
    for (const std::string& spec : m.expert_pool) {
        std::string base;
        const uint64_t expert_seed = parse_at_seed(spec, base);
        PoolEntry entry;
        entry.pool_spec = spec;
        if (base == "linear") {
            LinearInterpExpert linear;
            entry.prior_spec = "linear";
            entry.val_mse = expert_masked_mse(linear, val_w, ratio, /*mask_seed=*/9001,
                                              base_cfg.mask_mode);
        } else if (base == "conv") {
            char ratio_buf[32];
            std::snprintf(ratio_buf, sizeof(ratio_buf), "%g", ratio);
            const std::string ckpt = cache_dir + "/experts/" + sanitize(ds.name) + "_" +
                                     sanitize(ratio_buf) + "_" + sanitize(spec) + ".ckpt";
            bool cached = false;
            if (fs::exists(ckpt)) {
                try {
                    auto e = load_conv_expert(ckpt);
                    entry.val_mse = expert_masked_mse(*e, val_w, ratio, 9001,
                                                      base_cfg.mask_mode);
                    cached = true;
                } catch (const DataError&) {
                    cached = false;  // corrupt cache entry: rebuild
                }
            }
            if (!cached) {
                ConvExpert expert(channels, base_cfg.expert_arch,
                                  "conv@" + std::to_string(expert_seed));
                Rng rng = Rng::derive(expert_seed, "pool-expert-init");
                expert.init_params(rng);
                PretrainConfig cfg = pcfg;
                cfg.seed = expert_seed;
                pretrain_expert(expert, train_w, val_w, ratio, cfg);
                entry.val_mse = expert_masked_mse(expert, val_w, ratio, 9001,
                                                  base_cfg.mask_mode);
                fs::create_directories(fs::path(ckpt).parent_path());
                save_conv_expert(expert, expert_seed, ckpt, entry.val_mse);
            }
            entry.prior_spec = "conv:" + ckpt;
        } else if (base.rfind("external:", 0) == 0) {
            entry.prior_spec = base;
            ExpertSet set = resolve_experts({base}, channels, base_cfg.expert_arch, 0,
                                            val_w.size(), base_cfg.seq_len);
            entry.val_mse = expert_masked_mse(*set.experts.front(), val_w, ratio, 9001,
                                              base_cfg.mask_mode);
        } else {
            throw std::invalid_argument("matrix: unknown pool entry " + spec);
        }
        pool.push_back(std::move(entry));
    }
    return pool;
}

std::vector<std::string> rank_pool(const std::vector<PoolEntry>& pool, size_t take) {
    std::vector<PoolEntry> sorted = pool;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const PoolEntry& a, const PoolEntry& b) {
                         return a.val_mse < b.val_mse;
                     });
    if (sorted.size() < take)
        throw std::invalid_argument("matrix: pool has " + std::to_string(sorted.size()) +
                                    " experts, variant needs " + std::to_string(take));
    std::vector<std::string> specs;
    for (size_t i = 0; i < take; ++i) specs.push_back(sorted[i].prior_spec);
    return specs;
}

CellResult run_cell(const ExperimentMatrix& m, const DataSplits& splits, double ratio,
                    const std::string& variant, const std::vector<PoolEntry>& pool,
                    const TrainConfig& base_cfg) {
    const auto t0 = std::chrono::steady_clock::now();

    TrainConfig cfg = base_cfg;
    cfg.mask_ratio = ratio;
    const auto test_w = make_windows(splits.test, cfg.seq_len, cfg.eval_stride);

    EvaluationResult eval;
    if (variant.rfind("expert-only:", 0) == 0) {
        const std::string wanted = variant.substr(12);
        const PoolEntry* entry = nullptr;
        for (const auto& e : pool)
            if (e.pool_spec == wanted) entry = &e;
        if (!entry)
            throw std::invalid_argument("matrix: pool entry '" + wanted + "' not found");
        ExpertSet set = resolve_experts({entry->prior_spec}, splits.train.channels(),
                                        cfg.expert_arch, 0, test_w.size(), cfg.seq_len);
        eval = evaluate_expert_only(*set.experts.front(), test_w, ratio, m.seeds,
                                    cfg.mask_mode);
    } else {
        if (variant == "linear-bridge") {
            cfg.priors = {"linear"};
        } else if (variant == "bridge-ts-1") {
            cfg.priors = rank_pool(pool, 1);
        } else if (variant == "bridge-ts-2") {
            cfg.priors = rank_pool(pool, 2);
        } else if (variant == "bridge-ts-3") {
            cfg.priors = rank_pool(pool, 3);
        } else if (variant == "bridge-ts-d") {
            cfg.priors = rank_pool(pool, std::min<size_t>(2, pool.size()));
            cfg.probabilistic = false;
            cfg.sampler.stochastic = false;
        } else {
            throw std::invalid_argument("matrix: unknown variant " + variant);
        }

        std::vector<double> mse_per_seed, mae_per_seed;
        for (uint64_t seed : m.seeds) {
            TrainConfig run_cfg = cfg;
            run_cfg.seed = seed;
            TrainResult tr = train(run_cfg, splits);
            EvaluationResult one = evaluate_bridge(tr.bridge, test_w, ratio, {seed});
            mse_per_seed.push_back(one.mse_mean);
            mae_per_seed.push_back(one.mae_mean);
        }
        eval.seeds = m.seeds;
        eval.mse_per_seed = mse_per_seed;
        eval.mae_per_seed = mae_per_seed;
        auto summarize = [](const std::vector<double>& xs, double& mean, double& sd) {
            double sum = 0.0;
            for (double x : xs) sum += x;
            mean = sum / static_cast<double>(xs.size());
            sd = 0.0;
            if (xs.size() > 1) {
                double sq = 0.0;
                for (double x : xs) sq += (x - mean) * (x - mean);
                sd = std::sqrt(sq / static_cast<double>(xs.size() - 1));
            }
        };
        summarize(eval.mse_per_seed, eval.mse_mean, eval.mse_std);
        summarize(eval.mae_per_seed, eval.mae_mean, eval.mae_std);
    }

    CellResult out;
    out.mse_mean = eval.mse_mean;
    out.mse_std = eval.mse_std;
    out.mae_mean = eval.mae_mean;
    out.mae_std = eval.mae_std;
    out.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace

ResultTable run_matrix(const ExperimentMatrix& m, const std::string& cache_dir,
                       MatrixStats* stats) {
    fs::create_directories(cache_dir + "/ledger");
    fs::create_directories(cache_dir + "/experts");

    TrainConfig base_cfg = TrainConfig::from_json(m.train.is_null() ? nlohmann::json::object()
                                                                    : m.train);

    ResultTable table;
    for (const auto& ds : m.datasets) {
        std::optional<DataSplits> splits;
        std::map<double, std::vector<PoolEntry>> pools;
        for (double ratio : m.ratios) {
            for (const auto& variant : m.variants) {
                const nlohmann::json desc = cell_descriptor(m, ds, ratio, variant);
                const std::string ledger_path = cell_ledger_path(cache_dir, desc);
                CellKey key{ds.name, ratio, variant};

                // Ledger hit: a completed cell is not recomputed.
                if (fs::exists(ledger_path)) {
                    try {
                        std::ifstream in(ledger_path);
                        const nlohmann::json entry = nlohmann::json::parse(in);
                        if (entry.at("descriptor") != desc)
                            throw DataError("descriptor mismatch");
                        CellResult cached;
                        cached.mse_mean = entry.at("mse_mean").get<double>();
                        cached.mse_std = entry.at("mse_std").get<double>();
                        cached.mae_mean = entry.at("mae_mean").get<double>();
                        cached.mae_std = entry.at("mae_std").get<double>();
                        cached.runtime_s = entry.at("runtime_s").get<double>();
                        table.rows.emplace_back(key, cached);
                        if (stats) stats->from_ledger += 1;
                        continue;
                    } catch (const std::exception&) {
                        // Corrupt entry: recompute exactly this cell.
                    }
                }

                CellResult result;
                try {
                    if (!splits) {
                        const Dataset raw = load_csv(ds.path);
                        splits = split_and_normalize(raw, 0.7, 0.1, 0.2);
                    }
                    if (!pools.count(ratio))
                        pools[ratio] =
                            build_pool(m, ds, *splits, ratio, base_cfg, cache_dir);
                    result = run_cell(m, *splits, ratio, variant, pools[ratio],
                                      base_cfg);
                    if (stats) stats->computed += 1;

                    nlohmann::json entry = {{"descriptor", desc},
                                            {"mse_mean", result.mse_mean},
                                            {"mse_std", result.mse_std},
                                            {"mae_mean", result.mae_mean},
                                            {"mae_std", result.mae_std},
                                            {"runtime_s", result.runtime_s}};
                    atomic_write(ledger_path, entry.dump(2));
                } catch (const std::exception& e) {
                    result.failed = true;
                    result.error = e.what();
                    if (stats) stats->failed += 1;
                }
                table.rows.emplace_back(key, result);
            }
        }
    }
    return table;
}

void emit_report_csv(const ResultTable& t, const std::string& path) {
    if (t.rows.empty()) throw std::invalid_argument("emit_report: empty table");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << "dataset,ratio,variant,mse_mean,mse_std,mae_mean,mae_std,runtime_s\n";
    for (const auto& [key, cell] : t.rows) {
        if (cell.failed) continue;
        out << key.dataset << "," << format_significant(key.ratio) << "," << key.variant
            << "," << format_significant(cell.mse_mean) << ","
            << format_significant(cell.mse_std) << ","
            << format_significant(cell.mae_mean) << ","
            << format_significant(cell.mae_std) << ","
            << format_significant(cell.runtime_s) << "\n";
    }
}

void emit_report_markdown(const ResultTable& t, const std::string& path) {
    if (t.rows.empty()) throw std::invalid_argument("emit_report: empty table");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);

    std::vector<std::string> datasets, variants;
    std::set<double> ratios;
    std::map<std::string, std::map<std::pair<double, std::string>, const CellResult*>>
        cells;
    for (const auto& [key, cell] : t.rows) {
        if (cell.failed) continue;
        if (std::find(datasets.begin(), datasets.end(), key.dataset) == datasets.end())
            datasets.push_back(key.dataset);
        if (std::find(variants.begin(), variants.end(), key.variant) == variants.end())
            variants.push_back(key.variant);
        ratios.insert(key.ratio);
        cells[key.dataset][{key.ratio, key.variant}] = &cell;
    }

    out << "# Imputation results\n";
    for (const auto& ds : datasets) {
        out << "\n## " << ds << "\n\n|Ratio|";
        for (const auto& v : variants) out << v << " MSE|" << v << " MAE|";
        out << "\n|---|";
        for (size_t i = 0; i < variants.size(); ++i) out << "---|---|";
        out << "\n";
        for (double r : ratios) {
            out << "|" << format_significant(r) << "|";
            for (const auto& v : variants) {
                auto it = cells[ds].find({r, v});
                if (it == cells[ds].end())
                    out << "-|-|";
                else
                    out << format_significant(it->second->mse_mean) << "|"
                        << format_significant(it->second->mae_mean) << "|";
            }
            out << "\n";
        }
    }
}

ResultTable parse_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path);
    std::string line;
    if (!std::getline(in, line) ||
        line != "dataset,ratio,variant,mse_mean,mse_std,mae_mean,mae_std,runtime_s")
        throw DataError(path + ": unexpected report header");
    ResultTable t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> parts;
        while (std::getline(ss, cell, ',')) parts.push_back(cell);
        if (parts.size() != 8) throw DataError(path + ": malformed row: " + line);
        CellKey key{parts[0], std::stod(parts[1]), parts[2]};
        CellResult res;
        res.mse_mean = std::stod(parts[3]);
        res.mse_std = std::stod(parts[4]);
        res.mae_mean = std::stod(parts[5]);
        res.mae_std = std::stod(parts[6]);
        res.runtime_s = std::stod(parts[7]);
        t.rows.emplace_back(key, res);
    }
    return t;
}

}  // namespace bridgets
