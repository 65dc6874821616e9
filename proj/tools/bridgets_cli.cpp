// Command-line surface for ingestion, masking, training, imputation,
// evaluation, and experiment matrices.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bridgets/bridge.hpp"
#include "bridgets/data.hpp"
#include "bridgets/experts.hpp"
#include "bridgets/report.hpp"
#include "bridgets/trainer.hpp"

using namespace bridgets;
using nlohmann::json;

namespace {

struct DataOptions {
    std::string data_path;
    std::string synthetic;  // "T,C,seed"
    std::string split = "0.7,0.1,0.2";
};

void add_data_options(CLI::App* cmd, DataOptions& opts) {
    auto* data = cmd->add_option("--data", opts.data_path, "CSV dataset path");
    auto* synth = cmd->add_option("--synthetic", opts.synthetic,
                                  "generate data instead: T,C,seed");
    data->excludes(synth);
    cmd->add_option("--split", opts.split, "train,val,test fractions");
}

Dataset load_dataset(const DataOptions& opts) {
    if (!opts.synthetic.empty()) {
        int t = 0, c = 0;
        unsigned long long seed = 0;
        if (std::sscanf(opts.synthetic.c_str(), "%d,%d,%llu", &t, &c, &seed) != 3)
            throw std::invalid_argument("--synthetic expects T,C,seed");
        return synthetic_sinusoid_dataset(t, c, seed);
    }
    if (opts.data_path.empty())
        throw std::invalid_argument("either --data or --synthetic is required");
    return load_csv(opts.data_path);
}

DataSplits load_splits(const DataOptions& opts) {
    double a = 0, b = 0, c = 0;
    if (std::sscanf(opts.split.c_str(), "%lf,%lf,%lf", &a, &b, &c) != 3)
        throw std::invalid_argument("--split expects three comma-separated fractions");
    return split_and_normalize(load_dataset(opts), a, b, c);
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    if (seeds.empty()) throw std::invalid_argument("--seeds expects at least one seed");
    return seeds;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path + ": invalid JSON: " + e.what());
    }
}

std::string cache_dir_from_env(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("BRIDGETS_CACHE")) return env;
    return ".bridgets-cache";
}

int run_ingest(const DataOptions& data, int seq_len, int stride,
               const std::string& export_path) {
    if (!export_path.empty()) save_csv(load_dataset(data), export_path);
    const DataSplits splits = load_splits(data);
    json out = {
        {"channels", splits.train.channels()},
        {"channel_names", splits.train.channel_names},
        {"split_rows",
         {splits.train.length(), splits.val.length(), splits.test.length()}},
        {"train_windows", make_windows(splits.train, seq_len, stride).size()},
        {"val_windows", make_windows(splits.val, seq_len, stride).size()},
        {"test_windows", make_windows(splits.test, seq_len, stride).size()},
        {"mean", splits.stats.mean},
        {"std", splits.stats.std},
    };
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_mask_gen(int seq_len, int channels, double ratio, uint64_t seed,
                 const std::string& mode, const std::string& out_path) {
    Rng rng = Rng::derive(seed, "mask");
    const ObservationMask mask =
        gen_mask(seq_len, channels, ratio, rng, mask_mode_from_string(mode));
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write mask: " + out_path);
    for (int l = 0; l < seq_len; ++l)
        for (int c = 0; c < channels; ++c)
            out << int(mask.at(l, c)) << (c + 1 < channels ? "," : "\n");
    json summary = {{"rows", seq_len},
                    {"cols", channels},
                    {"missing", mask.missing_count()},
                    {"ratio", ratio},
                    {"seed", seed}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_train_expert(const DataOptions& data, const std::string& kind, double ratio,
                     uint64_t seed, PretrainConfig pcfg, const ConvExpertArch& arch,
                     int seq_len, int stride, int eval_stride,
                     const std::string& out_path) {
    if (kind != "conv")
        throw std::invalid_argument("only the 'conv' expert kind is trainable");
    const DataSplits splits = load_splits(data);
    const auto train_w = make_windows(splits.train, seq_len, stride);
    const auto val_w = make_windows(splits.val, seq_len, eval_stride);

    ConvExpert expert(splits.train.channels(), arch, "conv@" + std::to_string(seed));
    Rng rng = Rng::derive(seed, "pool-expert-init");
    expert.init_params(rng);
    pcfg.seed = seed;
    const PretrainResult result = pretrain_expert(expert, train_w, val_w, ratio, pcfg);
    if (!out_path.empty()) save_conv_expert(expert, seed, out_path, result.best_val_mse);

    json out = {{"expert", expert.id()},
                {"val_mse", result.best_val_mse},
                {"best_step", result.best_step},
                {"checkpoint", out_path}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_train_bridge(const DataOptions& data, const std::string& config_path,
                     const std::string& out_path, const std::string& report_path,
                     bool timing) {
    TrainConfig cfg = TrainConfig::from_json(read_json_file(config_path));
    const DataSplits splits = load_splits(data);
    const TrainResult result = train(cfg, splits);

    if (!out_path.empty()) save_bridge(result.bridge, out_path);
    const json report = result.report.to_json(timing);
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw DataError("cannot write report: " + report_path);
        out << report.dump(2) << "\n";
    }
    std::cout << report.dump(2) << "\n";
    if (result.report.aborted) {
        std::cerr << "training aborted: " << result.report.abort_reason << "\n";
        return 3;
    }
    return 0;
}

int run_impute(const DataOptions& data, const std::string& ckpt, double ratio,
               uint64_t mask_seed, const std::string& subset, int eval_stride,
               const std::string& out_path) {
    const DataSplits splits = load_splits(data);
    const Dataset& part = subset == "train" ? splits.train
                          : subset == "val" ? splits.val
                                            : splits.test;
    TrainedBridge bridge = load_bridge(ckpt, 0);
    const auto windows = make_windows(part, bridge.config.seq_len, eval_stride);
    if (windows.empty()) throw DataError("no windows in the selected subset");
    bridge = load_bridge(ckpt, windows.size());

    std::vector<Array2> outputs;
    double sq = 0.0, ab = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < windows.size(); ++i) {
        Rng mask_rng = Rng::derive(mask_seed, "eval-mask", i);
        const ObservationMask mask =
            gen_mask(bridge.config.seq_len, part.channels(), ratio, mask_rng,
                     bridge.config.mask_mode);
        const PriorStack stack = stack_priors(bridge.experts.impute_all(windows[i], mask, i));
        Rng sample_rng = Rng::derive(mask_seed, "eval-sample", i);
        const TimeSeriesWindow out =
            sample_imputation(bridge.model, windows[i], stack, mask,
                              bridge.config.schedule, bridge.config.sampler, sample_rng);
        for (int l = 0; l < out.values.rows; ++l)
            for (int c = 0; c < out.values.cols; ++c) {
                if (mask.observed(l, c)) continue;
                const double d = out.values.at(l, c) - windows[i].values.at(l, c);
                sq += d * d;
                ab += std::fabs(d);
                ++count;
            }
        outputs.push_back(out.values);
    }
    if (!out_path.empty()) save_external_prior(out_path, outputs);

    json summary = {{"windows", windows.size()},
                    {"subset", subset},
                    {"mask_ratio", ratio},
                    {"mask_seed", mask_seed},
                    {"masked_mse", count ? sq / count : 0.0},
                    {"masked_mae", count ? ab / count : 0.0},
                    {"output", out_path}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_evaluate(const DataOptions& data, const std::string& ckpt, double ratio,
                 const std::string& seeds_str, int eval_stride) {
    const DataSplits splits = load_splits(data);
    TrainedBridge probe = load_bridge(ckpt, 0);
    const auto test_w = make_windows(splits.test, probe.config.seq_len, eval_stride);
    if (test_w.empty()) throw DataError("no test windows");
    const EvaluationResult res =
        evaluate_checkpoint(ckpt, test_w, ratio, parse_seeds(seeds_str));
    std::cout << res.to_json().dump(2) << "\n";
    return 0;
}

int run_matrix_cmd(const std::string& config_path, const std::string& out_path,
                   const std::string& cache_flag) {
    const ExperimentMatrix m = ExperimentMatrix::from_json(read_json_file(config_path));
    MatrixStats stats;
    const ResultTable table = run_matrix(m, cache_dir_from_env(cache_flag), &stats);
    if (!out_path.empty()) emit_report_csv(table, out_path);

    json out = {{"cells", table.rows.size()},
                {"computed", stats.computed},
                {"from_ledger", stats.from_ledger},
                {"failed", stats.failed},
                {"table", out_path}};
    std::cout << out.dump(2) << "\n";
    for (const auto& [key, cell] : table.rows)
        if (cell.failed)
            std::cerr << "cell failed: " << key.dataset << "/" << key.ratio << "/"
                      << key.variant << ": " << cell.error << "\n";
    return stats.failed > 0 ? 3 : 0;
}

int run_report(const std::string& table_path, const std::string& format,
               const std::string& out_path) {
    const ResultTable table = parse_report_csv(table_path);
    if (format == "csv")
        emit_report_csv(table, out_path);
    else if (format == "markdown")
        emit_report_markdown(table, out_path);
    else
        throw std::invalid_argument("--format must be csv or markdown");
    std::cout << json({{"rows", table.rows.size()}, {"output", out_path}}).dump(2)
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bridge-TS: generative time-series imputation"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "load, split, and summarize a dataset");
    DataOptions ingest_data;
    add_data_options(ingest, ingest_data);
    int ingest_seq_len = 96, ingest_stride = 1;
    std::string ingest_export;
    ingest->add_option("--seq-len", ingest_seq_len);
    ingest->add_option("--stride", ingest_stride);
    ingest->add_option("--export", ingest_export, "write the raw dataset as CSV");

    // mask-gen
    auto* mask_gen = app.add_subcommand("mask-gen", "write a seeded observation mask");
    int mg_seq_len = 96, mg_channels = 7;
    double mg_ratio = 0.25;
    uint64_t mg_seed = 0;
    std::string mg_mode = "bernoulli", mg_out;
    mask_gen->add_option("--seq-len", mg_seq_len);
    mask_gen->add_option("--channels", mg_channels);
    mask_gen->add_option("--mask-ratio", mg_ratio);
    mask_gen->add_option("--mask-seed", mg_seed);
    mask_gen->add_option("--mask-mode", mg_mode, "bernoulli or exact");
    mask_gen->add_option("--out", mg_out)->required();

    // train-expert
    auto* train_expert = app.add_subcommand("train-expert", "pretrain an expert prior");
    DataOptions te_data;
    add_data_options(train_expert, te_data);
    std::string te_kind = "conv", te_out;
    double te_ratio = 0.25;
    uint64_t te_seed = 7;
    PretrainConfig te_cfg;
    ConvExpertArch te_arch;
    int te_seq_len = 96, te_stride = 1, te_eval_stride = 24;
    train_expert->add_option("--expert", te_kind, "expert kind (conv)");
    train_expert->add_option("--mask-ratio", te_ratio);
    train_expert->add_option("--seed", te_seed);
    train_expert->add_option("--steps", te_cfg.max_steps);
    train_expert->add_option("--batch-size", te_cfg.batch_size);
    train_expert->add_option("--lr", te_cfg.lr);
    train_expert->add_option("--eval-every", te_cfg.eval_every);
    train_expert->add_option("--blocks", te_arch.blocks);
    train_expert->add_option("--hidden", te_arch.hidden);
    train_expert->add_option("--kernel", te_arch.kernel);
    train_expert->add_option("--seq-len", te_seq_len);
    train_expert->add_option("--stride", te_stride);
    train_expert->add_option("--eval-stride", te_eval_stride);
    train_expert->add_option("--out", te_out, "expert checkpoint path");

    // train-bridge
    auto* train_bridge = app.add_subcommand("train-bridge", "train the bridge model");
    DataOptions tb_data;
    add_data_options(train_bridge, tb_data);
    std::string tb_config, tb_out, tb_report;
    bool tb_timing = false;
    train_bridge->add_option("--config", tb_config, "TrainConfig JSON file")->required();
    train_bridge->add_option("--out", tb_out, "bridge checkpoint path");
    train_bridge->add_option("--report", tb_report, "training report JSON path");
    train_bridge->add_flag("--timing", tb_timing, "include wall-clock in the report");

    // impute
    auto* impute = app.add_subcommand("impute", "impute masked windows with a checkpoint");
    DataOptions im_data;
    add_data_options(impute, im_data);
    std::string im_ckpt, im_subset = "test", im_out;
    double im_ratio = 0.25;
    uint64_t im_seed = 0;
    int im_stride = 24;
    impute->add_option("--ckpt", im_ckpt)->required();
    impute->add_option("--mask-ratio", im_ratio);
    impute->add_option("--mask-seed", im_seed);
    impute->add_option("--subset", im_subset, "train, val, or test");
    impute->add_option("--stride", im_stride);
    impute->add_option("--out", im_out, "prediction file (.csv or flat binary)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "masked MSE/MAE of a checkpoint");
    DataOptions ev_data;
    add_data_options(evaluate, ev_data);
    std::string ev_ckpt, ev_seeds = "1,2,3";
    double ev_ratio = 0.25;
    int ev_stride = 24;
    evaluate->add_option("--ckpt", ev_ckpt)->required();
    evaluate->add_option("--mask-ratio", ev_ratio);
    evaluate->add_option("--seeds", ev_seeds);
    evaluate->add_option("--stride", ev_stride);

    // matrix
    auto* matrix = app.add_subcommand("matrix", "run an experiment matrix");
    std::string mx_config, mx_out = "results.csv", mx_cache;
    matrix->add_option("--config", mx_config, "ExperimentMatrix JSON file")->required();
    matrix->add_option("--out", mx_out, "result table CSV path");
    matrix->add_option("--cache", mx_cache, "cache dir (default $BRIDGETS_CACHE)");

    // report
    auto* report = app.add_subcommand("report", "re-emit a result table");
    std::string rp_table, rp_format = "markdown", rp_out;
    report->add_option("--table", rp_table, "result table CSV")->required();
    report->add_option("--format", rp_format, "csv or markdown");
    report->add_option("--out", rp_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (ingest->parsed())
            return run_ingest(ingest_data, ingest_seq_len, ingest_stride, ingest_export);
        if (mask_gen->parsed())
            return run_mask_gen(mg_seq_len, mg_channels, mg_ratio, mg_seed, mg_mode,
                                mg_out);
        if (train_expert->parsed())
            return run_train_expert(te_data, te_kind, te_ratio, te_seed, te_cfg, te_arch,
                                    te_seq_len, te_stride, te_eval_stride, te_out);
        if (train_bridge->parsed())
            return run_train_bridge(tb_data, tb_config, tb_out, tb_report, tb_timing);
        if (impute->parsed())
            return run_impute(im_data, im_ckpt, im_ratio, im_seed, im_subset, im_stride,
                              im_out);
        if (evaluate->parsed())
            return run_evaluate(ev_data, ev_ckpt, ev_ratio, ev_seeds, ev_stride);
        if (matrix->parsed()) return run_matrix_cmd(mx_config, mx_out, mx_cache);
        if (report->parsed()) return run_report(rp_table, rp_format, rp_out);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
