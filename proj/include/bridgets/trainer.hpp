#ifndef BRIDGETS_TRAINER_HPP
#define BRIDGETS_TRAINER_HPP

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridgets/bridge.hpp"
#include "bridgets/checkpoint.hpp"
#include "bridgets/composition.hpp"
#include "bridgets/data.hpp"
#include "bridgets/experts.hpp"
#include "bridgets/model.hpp"
#include "bridgets/schedule.hpp"

namespace bridgets {

enum class PriorRegime { Joint, Frozen, MseAux, MseAuxRandomInit };

PriorRegime prior_regime_from_string(const std::string& s);
std::string to_string(PriorRegime r);

/// Full training configuration; serializes to JSON with these exact field
/// names (nested: schedule, sampler, arch, expert_arch).
struct TrainConfig {
    double mask_ratio = 0.25;
    int seq_len = 96;
    int batch_size = 16;
    int max_steps = 1000;
    uint64_t seed = 0;
    PriorRegime prior_regime = PriorRegime::Joint;
    bool probabilistic = true;
    BridgeSchedule schedule;
    std::vector<std::string> priors = {"linear"};  // order-significant expert specs
    int eval_every = 100;

    double lr = 1e-3;
    double mse_aux_lambda = 1.0;
    bool fixed_masks = false;
    MaskMode mask_mode = MaskMode::Bernoulli;
    int stride = 1;
    int eval_stride = 24;
    DenoiserArch arch;
    ConvExpertArch expert_arch;
    SamplerConfig sampler;

    void validate() const;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);

    /// Architecture-relevant subset used for checkpoint compatibility.
    nlohmann::json compatibility_config(int channels) const;
};

struct EvalRecord {
    int step = 0;
    double val_mse = 0.0;
    double val_mae = 0.0;
    double train_loss = 0.0;
};

struct TrainReport {
    std::vector<EvalRecord> records;
    int best_step = 0;
    double best_val_mse = 0.0;
    bool aborted = false;       // NaN loss: training stopped, best state restored
    std::string abort_reason;
    double wall_seconds = 0.0;  // informational, excluded from to_json by default

    nlohmann::json to_json(bool include_timing = false) const;
};

/// Expert specs: "linear", "conv" (fresh random init),
/// "conv:<checkpoint-path>" (pretrained), "external:<path>" (file-backed,
/// aligned to the window stream the set is resolved against).
struct ExpertSet {
    std::vector<std::shared_ptr<ExpertPrior>> experts;
    std::vector<std::string> specs;

    std::vector<PriorEstimate> impute_all(const TimeSeriesWindow& w,
                                          const ObservationMask& mask,
                                          size_t window_index) const;
};

ExpertSet resolve_experts(const std::vector<std::string>& specs, int channels,
                          const ConvExpertArch& arch, uint64_t seed,
                          size_t stream_windows, int seq_len);

/// A trained bridge: the denoiser plus the (possibly fine-tuned) experts.
struct TrainedBridge {
    TrainConfig config;
    int channels = 0;
    DenoiserModel model;
    ExpertSet experts;

    Checkpoint to_checkpoint() const;
};

struct TrainResult {
    TrainedBridge bridge;
    TrainReport report;
};

/// Runs the training loop on pre-built window sets. Deterministic given the
/// config seed.
TrainResult train_on_windows(const TrainConfig& cfg,
                             const std::vector<TimeSeriesWindow>& train_windows,
                             const std::vector<TimeSeriesWindow>& val_windows);

/// Convenience wrapper: windows the splits per the config, then trains.
TrainResult train(const TrainConfig& cfg, const DataSplits& splits);

struct EvaluationResult {
    std::vector<uint64_t> seeds;
    std::vector<double> mse_per_seed;
    std::vector<double> mae_per_seed;
    double mse_mean = 0.0;
    double mse_std = 0.0;
    double mae_mean = 0.0;
    double mae_std = 0.0;

    nlohmann::json to_json() const;
};

/// Masked-entry MSE/MAE of the sampler over a window set; per seed, masks
/// and sampling noise come from streams derived from that seed.
EvaluationResult evaluate_bridge(const TrainedBridge& bridge,
                                 const std::vector<TimeSeriesWindow>& windows,
                                 double mask_ratio, const std::vector<uint64_t>& seeds);

/// Same metric for a denoiser injected as a plain function (oracles, tests).
EvaluationResult evaluate_with_denoiser(const DenoiserFn& fn, const ExpertSet& experts,
                                        const std::vector<TimeSeriesWindow>& windows,
                                        double mask_ratio,
                                        const std::vector<uint64_t>& seeds,
                                        const BridgeSchedule& schedule,
                                        const SamplerConfig& sampler,
                                        MaskMode mode = MaskMode::Bernoulli);

/// Masked metrics of a single expert used directly as the imputer.
EvaluationResult evaluate_expert_only(ExpertPrior& expert,
                                      const std::vector<TimeSeriesWindow>& windows,
                                      double mask_ratio,
                                      const std::vector<uint64_t>& seeds,
                                      MaskMode mode = MaskMode::Bernoulli);

void save_bridge(const TrainedBridge& bridge, const std::string& path);

/// Loads a bridge bundle; `stream_windows` sizes the window stream that
/// file-backed experts must align to. Verifies the stored config hash.
TrainedBridge load_bridge(const std::string& path, size_t stream_windows);

/// Loads, re-validates the checkpoint hash against its stored config, and
/// evaluates on the given windows.
EvaluationResult evaluate_checkpoint(const std::string& ckpt_path,
                                     const std::vector<TimeSeriesWindow>& test_windows,
                                     double mask_ratio,
                                     const std::vector<uint64_t>& seeds);

/// Expert checkpoint helpers (single conv expert files).
void save_conv_expert(const ConvExpert& expert, uint64_t seed, const std::string& path,
                      double val_mse = 0.0);
std::shared_ptr<ConvExpert> load_conv_expert(const std::string& path);

}  // namespace bridgets

#endif  // BRIDGETS_TRAINER_HPP
