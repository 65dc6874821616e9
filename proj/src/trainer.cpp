#include "bridgets/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace bridgets {

PriorRegime prior_regime_from_string(const std::string& s) {
    if (s == "joint") return PriorRegime::Joint;
    if (s == "frozen") return PriorRegime::Frozen;
    if (s == "mse_aux") return PriorRegime::MseAux;
    if (s == "mse_aux_random_init") return PriorRegime::MseAuxRandomInit;
    throw std::invalid_argument("unknown prior regime: " + s);
}

std::string to_string(PriorRegime r) {
    switch (r) {
        case PriorRegime::Joint: return "joint";
        case PriorRegime::Frozen: return "frozen";
        case PriorRegime::MseAux: return "mse_aux";
        case PriorRegime::MseAuxRandomInit: return "mse_aux_random_init";
    }
    return "joint";
}

void TrainConfig::validate() const {
    if (priors.empty()) throw std::invalid_argument("config: priors must be non-empty");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0))
        throw std::invalid_argument("config: mask_ratio must lie in [0, 1]");
    if (seq_len < 2) throw std::invalid_argument("config: seq_len must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("config: max_steps must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
    schedule.validate();
    sampler.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {
        {"mask_ratio", mask_ratio},
        {"seq_len", seq_len},
        {"batch_size", batch_size},
        {"max_steps", max_steps},
        {"seed", seed},
        {"prior_regime", to_string(prior_regime)},
        {"probabilistic", probabilistic},
        {"schedule",
         {{"kind", to_string(schedule.kind)},
          {"beta0", schedule.g2_0},
          {"beta1", schedule.g2_1},
          {"t_min", schedule.t_min}}},
        {"priors", priors},
        {"eval_every", eval_every},
        {"lr", lr},
        {"mse_aux_lambda", mse_aux_lambda},
        {"fixed_masks", fixed_masks},
        {"mask_mode", to_string(mask_mode)},
        {"stride", stride},
        {"eval_stride", eval_stride},
        {"arch",
         {{"blocks", arch.blocks},
          {"hidden", arch.hidden},
          {"kernel", arch.kernel},
          {"time_embed_dim", arch.time_embed_dim}}},
        {"expert_arch",
         {{"blocks", expert_arch.blocks},
          {"hidden", expert_arch.hidden},
          {"kernel", expert_arch.kernel}}},
        {"sampler",
         {{"steps", sampler.steps},
          {"stochastic", sampler.stochastic},
          {"clamp_observed", sampler.clamp_observed},
          {"fuse_per_step", sampler.fuse_per_step}}},
    };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("prior_regime"))
        c.prior_regime = prior_regime_from_string(j.at("prior_regime").get<std::string>());
    c.probabilistic = j.value("probabilistic", c.probabilistic);
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        if (s.contains("kind"))
            c.schedule.kind = schedule_kind_from_string(s.at("kind").get<std::string>());
        c.schedule.g2_0 = s.value("beta0", c.schedule.g2_0);
        c.schedule.g2_1 = s.value("beta1", c.schedule.g2_1);
        c.schedule.t_min = s.value("t_min", c.schedule.t_min);
    }
    if (j.contains("priors")) c.priors = j.at("priors").get<std::vector<std::string>>();
    c.eval_every = j.value("eval_every", c.eval_every);
    c.lr = j.value("lr", c.lr);
    c.mse_aux_lambda = j.value("mse_aux_lambda", c.mse_aux_lambda);
    c.fixed_masks = j.value("fixed_masks", c.fixed_masks);
    if (j.contains("mask_mode"))
        c.mask_mode = mask_mode_from_string(j.at("mask_mode").get<std::string>());
    c.stride = j.value("stride", c.stride);
    c.eval_stride = j.value("eval_stride", c.eval_stride);
    if (j.contains("arch")) {
        const auto& a = j.at("arch");
        c.arch.blocks = a.value("blocks", c.arch.blocks);
        c.arch.hidden = a.value("hidden", c.arch.hidden);
        c.arch.kernel = a.value("kernel", c.arch.kernel);
        c.arch.time_embed_dim = a.value("time_embed_dim", c.arch.time_embed_dim);
    }
    if (j.contains("expert_arch")) {
        const auto& a = j.at("expert_arch");
        c.expert_arch.blocks = a.value("blocks", c.expert_arch.blocks);
        c.expert_arch.hidden = a.value("hidden", c.expert_arch.hidden);
        c.expert_arch.kernel = a.value("kernel", c.expert_arch.kernel);
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        c.sampler.steps = s.value("steps", c.sampler.steps);
        c.sampler.stochastic = s.value("stochastic", c.sampler.stochastic);
        c.sampler.clamp_observed = s.value("clamp_observed", c.sampler.clamp_observed);
        c.sampler.fuse_per_step = s.value("fuse_per_step", c.sampler.fuse_per_step);
    }
    return c;
}

nlohmann::json TrainConfig::compatibility_config(int channels) const {
    return {
        {"channels", channels},
        {"seq_len", seq_len},
        {"priors", priors},
        {"probabilistic", probabilistic},
        {"schedule",
         {{"kind", to_string(schedule.kind)},
          {"beta0", schedule.g2_0},
          {"beta1", schedule.g2_1},
          {"t_min", schedule.t_min}}},
        {"arch",
         {{"blocks", arch.blocks},
          {"hidden", arch.hidden},
          {"kernel", arch.kernel},
          {"time_embed_dim", arch.time_embed_dim}}},
        {"expert_arch",
         {{"blocks", expert_arch.blocks},
          {"hidden", expert_arch.hidden},
          {"kernel", expert_arch.kernel}}},
        {"sampler",
         {{"steps", sampler.steps},
          {"stochastic", sampler.stochastic},
          {"clamp_observed", sampler.clamp_observed},
          {"fuse_per_step", sampler.fuse_per_step}}},
    };
}

nlohmann::json TrainReport::to_json(bool include_timing) const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records)
        recs.push_back({{"step", r.step},
                        {"val_mse", r.val_mse},
                        {"val_mae", r.val_mae},
                        {"train_loss", r.train_loss}});
    nlohmann::json out = {{"records", recs},
                          {"best_step", best_step},
                          {"best_val_mse", best_val_mse},
                          {"aborted", aborted}};
    if (aborted) out["abort_reason"] = abort_reason;
    if (include_timing) out["wall_seconds"] = wall_seconds;
    return out;
}

std::vector<PriorEstimate> ExpertSet::impute_all(const TimeSeriesWindow& w,
                                                 const ObservationMask& mask,
                                                 size_t window_index) const {
    std::vector<PriorEstimate> out;
    out.reserve(experts.size());
    for (const auto& e : experts) out.push_back(e->impute(w, mask, window_index));
    return out;
}

namespace {

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.rfind(prefix, 0) == 0;
}

}  // namespace

ExpertSet resolve_experts(const std::vector<std::string>& specs, int channels,
                          const ConvExpertArch& arch, uint64_t seed,
                          size_t stream_windows, int seq_len) {
    ExpertSet set;
    set.specs = specs;
    for (size_t i = 0; i < specs.size(); ++i) {
        const std::string& spec = specs[i];
        if (spec == "linear") {
            set.experts.push_back(std::make_shared<LinearInterpExpert>());
        } else if (spec == "conv") {
            auto e = std::make_shared<ConvExpert>(channels, arch,
                                                  "conv#" + std::to_string(i));
            Rng rng = Rng::derive(seed, "expert-init", i);
            e->init_params(rng);
            set.experts.push_back(std::move(e));
        } else if (starts_with(spec, "conv:")) {
            auto e = load_conv_expert(spec.substr(5));
            if (e->channels() != channels)
                throw DataError("expert checkpoint '" + spec +
                                "' has wrong channel count");
            set.experts.push_back(std::move(e));
        } else if (starts_with(spec, "external:")) {
            const std::string path = spec.substr(9);
            auto estimates =
                load_external_prior(path, stream_windows, seq_len, channels);
            std::vector<Array2> blocks;
            blocks.reserve(estimates.size());
            for (auto& est : estimates) blocks.push_back(std::move(est.values));
            set.experts.push_back(
                std::make_shared<ExternalPriorExpert>(std::move(blocks), spec));
        } else {
            throw std::invalid_argument("unknown expert spec: " + spec);
        }
    }
    return set;
}

namespace {

struct JointOptimizer {
    // One flat Adam instance over [model params | trainable expert params].
    std::vector<size_t> expert_offsets;  // index into joint vector per expert
    size_t model_size = 0;
    size_t total = 0;
    OptimizerState state;

    JointOptimizer(const DenoiserModel& model, const ExpertSet& experts, double lr) {
        model_size = model.param_count();
        size_t at = model_size;
        for (const auto& e : experts.experts) {
            expert_offsets.push_back(at);
            if (e->trainable()) at += e->parameters().size();
        }
        total = at;
        state = OptimizerState(total, lr);
    }

    void step(DenoiserModel& model, ExpertSet& experts,
              const std::vector<double>& model_grad,
              const std::vector<std::vector<double>>& expert_grads) {
        std::vector<double> params(total), grads(total, 0.0);
        std::copy(model.params().begin(), model.params().end(), params.begin());
        std::copy(model_grad.begin(), model_grad.end(), grads.begin());
        for (size_t i = 0; i < experts.experts.size(); ++i) {
            auto& e = *experts.experts[i];
            if (!e.trainable()) continue;
            std::copy(e.parameters().begin(), e.parameters().end(),
                      params.begin() + expert_offsets[i]);
            std::copy(expert_grads[i].begin(), expert_grads[i].end(),
                      grads.begin() + expert_offsets[i]);
        }
        adam_step(state, params, grads);
        std::copy(params.begin(), params.begin() + model_size, model.params().begin());
        for (size_t i = 0; i < experts.experts.size(); ++i) {
            auto& e = *experts.experts[i];
            if (!e.trainable()) continue;
            std::copy(params.begin() + expert_offsets[i],
                      params.begin() + expert_offsets[i] + e.parameters().size(),
                      e.parameters().begin());
        }
    }
};

struct Snapshot {
    std::vector<double> model_params;
    std::vector<std::vector<double>> expert_params;

    static Snapshot take(const DenoiserModel& model, const ExpertSet& experts) {
        Snapshot s;
        s.model_params = model.params();
        for (const auto& e : experts.experts)
            s.expert_params.push_back(e->trainable() ? e->parameters()
                                                     : std::vector<double>{});
        return s;
    }

    void restore(DenoiserModel& model, ExpertSet& experts) const {
        model.params() = model_params;
        for (size_t i = 0; i < experts.experts.size(); ++i)
            if (experts.experts[i]->trainable())
                experts.experts[i]->parameters() = expert_params[i];
    }
};

/// Masked sampler metrics over a window set with fixed per-window streams.
void masked_metrics(const DenoiserModel& model, const ExpertSet& experts,
                    const std::vector<TimeSeriesWindow>& windows, double mask_ratio,
                    uint64_t seed, const BridgeSchedule& schedule,
                    const SamplerConfig& sampler, MaskMode mode, double& mse,
                    double& mae) {
    double sq = 0.0, ab = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < windows.size(); ++i) {
        const auto& w = windows[i];
        Rng mask_rng = Rng::derive(seed, "eval-mask", i);
        const ObservationMask mask =
            gen_mask(w.values.rows, w.values.cols, mask_ratio, mask_rng, mode);
        if (mask.missing_count() == 0) continue;
        const PriorStack stack = stack_priors(experts.impute_all(w, mask, i));
        Rng sample_rng = Rng::derive(seed, "eval-sample", i);
        const TimeSeriesWindow out =
            sample_imputation(model, w, stack, mask, schedule, sampler, sample_rng);
        for (int l = 0; l < w.values.rows; ++l)
            for (int c = 0; c < w.values.cols; ++c) {
                if (mask.observed(l, c)) continue;
                const double d = out.values.at(l, c) - w.values.at(l, c);
                sq += d * d;
                ab += std::fabs(d);
                ++count;
            }
    }
    mse = count ? sq / static_cast<double>(count) : 0.0;
    mae = count ? ab / static_cast<double>(count) : 0.0;
}

}  // namespace

TrainResult train_on_windows(const TrainConfig& cfg,
                             const std::vector<TimeSeriesWindow>& train_windows,
                             const std::vector<TimeSeriesWindow>& val_windows) {
    cfg.validate();
    if (train_windows.empty() || val_windows.empty())
        throw std::invalid_argument("train: empty window set");
    const int channels = train_windows.front().values.cols;
    const int seq_len = train_windows.front().values.rows;

    TrainResult result{TrainedBridge{cfg, channels,
                                     DenoiserModel(channels,
                                                   static_cast<int>(cfg.priors.size()),
                                                   cfg.arch),
                                     {}},
                       {}};
    TrainedBridge& bridge = result.bridge;
    TrainReport& report = result.report;

    bridge.experts = resolve_experts(cfg.priors, channels, cfg.expert_arch, cfg.seed,
                                     train_windows.size(), seq_len);
    if (cfg.prior_regime == PriorRegime::MseAuxRandomInit) {
        for (size_t i = 0; i < bridge.experts.experts.size(); ++i) {
            auto* conv = dynamic_cast<ConvExpert*>(bridge.experts.experts[i].get());
            if (conv) {
                Rng rng = Rng::derive(cfg.seed, "expert-reinit", i);
                conv->init_params(rng);
            }
        }
    }

    {
        Rng rng = Rng::derive(cfg.seed, "model-init");
        bridge.model.init_params(rng);
    }

    const auto t_start = std::chrono::steady_clock::now();

    // Fixed evaluation protocol: same masks and same sampling noise at every
    // evaluation point so the validation trend is comparable across steps.
    auto run_eval = [&](int step, double train_loss) {
        double mse = 0.0, mae = 0.0;
        masked_metrics(bridge.model, bridge.experts, val_windows, cfg.mask_ratio,
                       cfg.seed, cfg.schedule, cfg.sampler, cfg.mask_mode, mse, mae);
        report.records.push_back({step, mse, mae, train_loss});
        return mse;
    };

    Snapshot best = Snapshot::take(bridge.model, bridge.experts);
    report.best_val_mse = run_eval(0, 0.0);
    report.best_step = 0;

    JointOptimizer opt(bridge.model, bridge.experts, cfg.lr);
    Rng batch_rng = Rng::derive(cfg.seed, "batch");
    Rng mask_rng = Rng::derive(cfg.seed, "train-mask");
    Rng loss_rng = Rng::derive(cfg.seed, "loss");

    std::vector<ObservationMask> fixed;
    if (cfg.fixed_masks) {
        fixed.reserve(train_windows.size());
        for (size_t i = 0; i < train_windows.size(); ++i) {
            Rng rng = Rng::derive(cfg.seed, "fixed-mask", i);
            fixed.push_back(gen_mask(seq_len, channels, cfg.mask_ratio, rng,
                                     cfg.mask_mode));
        }
    }

    std::vector<double> model_grad(bridge.model.param_count(), 0.0);
    std::vector<std::vector<double>> expert_grads(bridge.experts.experts.size());
    for (size_t i = 0; i < expert_grads.size(); ++i)
        if (bridge.experts.experts[i]->trainable())
            expert_grads[i].assign(bridge.experts.experts[i]->parameters().size(), 0.0);

    const bool experts_learn = cfg.prior_regime != PriorRegime::Frozen;
    const bool aux_mse = cfg.prior_regime == PriorRegime::MseAux ||
                         cfg.prior_regime == PriorRegime::MseAuxRandomInit;

    for (int step = 1; step <= cfg.max_steps; ++step) {
        std::fill(model_grad.begin(), model_grad.end(), 0.0);
        for (auto& g : expert_grads) std::fill(g.begin(), g.end(), 0.0);
        double batch_loss = 0.0;
        const double inv_batch = 1.0 / cfg.batch_size;

        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t wi = static_cast<size_t>(batch_rng.below(train_windows.size()));
            const TimeSeriesWindow& w = train_windows[wi];
            const ObservationMask mask =
                cfg.fixed_masks ? fixed[wi]
                                : gen_mask(seq_len, channels, cfg.mask_ratio, mask_rng,
                                           cfg.mask_mode);
            const size_t miss = mask.missing_count();

            std::vector<PriorEstimate> estimates;
            estimates.reserve(bridge.experts.experts.size());
            for (auto& e : bridge.experts.experts)
                estimates.push_back(experts_learn && e->trainable()
                                        ? e->forward_cached(w, mask, wi)
                                        : e->impute(w, mask, wi));
            const PriorStack stack = stack_priors(estimates);

            BridgeLossResult res =
                bridge_loss(bridge.model, w, stack, mask, cfg.schedule, loss_rng,
                            cfg.probabilistic, experts_learn);
            batch_loss += res.loss * inv_batch;
            for (size_t i = 0; i < model_grad.size(); ++i)
                model_grad[i] += res.model_grad[i] * inv_batch;

            if (!experts_learn) continue;
            for (size_t i = 0; i < bridge.experts.experts.size(); ++i) {
                auto& e = *bridge.experts.experts[i];
                if (!e.trainable()) continue;
                Array2 d_est(seq_len, channels);
                for (int l = 0; l < seq_len; ++l)
                    for (int c = 0; c < channels; ++c)
                        d_est.at(l, c) =
                            res.prior_grad.at(l, c, static_cast<int>(i)) * inv_batch;
                if (aux_mse && miss > 0) {
                    const double scale = cfg.mse_aux_lambda * 2.0 /
                                         (static_cast<double>(miss)) * inv_batch;
                    double aux = 0.0;
                    for (int l = 0; l < seq_len; ++l)
                        for (int c = 0; c < channels; ++c) {
                            if (mask.observed(l, c)) continue;
                            const double diff =
                                estimates[i].values.at(l, c) - w.values.at(l, c);
                            aux += diff * diff;
                            d_est.at(l, c) += scale * diff;
                        }
                    batch_loss += cfg.mse_aux_lambda * aux /
                                  static_cast<double>(miss) * inv_batch;
                }
                e.backward(d_est, expert_grads[i]);
            }
        }

        if (!std::isfinite(batch_loss)) {
            best.restore(bridge.model, bridge.experts);
            report.aborted = true;
            report.abort_reason = "non-finite loss at step " + std::to_string(step) +
                                  "; restored best checkpoint from step " +
                                  std::to_string(report.best_step);
            break;
        }

        opt.step(bridge.model, bridge.experts, model_grad, expert_grads);

        if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
            const double mse = run_eval(step, batch_loss);
            if (mse < report.best_val_mse) {
                report.best_val_mse = mse;
                report.best_step = step;
                best = Snapshot::take(bridge.model, bridge.experts);
            }
        }
    }

    best.restore(bridge.model, bridge.experts);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

TrainResult train(const TrainConfig& cfg, const DataSplits& splits) {
    const auto train_w = make_windows(splits.train, cfg.seq_len, cfg.stride);
    const auto val_w = make_windows(splits.val, cfg.seq_len, cfg.eval_stride);
    return train_on_windows(cfg, train_w, val_w);
}

EvaluationResult evaluate_with_denoiser(const DenoiserFn& fn, const ExpertSet& experts,
                                        const std::vector<TimeSeriesWindow>& windows,
                                        double mask_ratio,
                                        const std::vector<uint64_t>& seeds,
                                        const BridgeSchedule& schedule,
                                        const SamplerConfig& sampler, MaskMode mode) {
    if (seeds.empty()) throw std::invalid_argument("evaluate: no seeds");
    EvaluationResult res;
    res.seeds = seeds;
    for (uint64_t seed : seeds) {
        double sq = 0.0, ab = 0.0;
        size_t count = 0;
        for (size_t i = 0; i < windows.size(); ++i) {
            const auto& w = windows[i];
            Rng mask_rng = Rng::derive(seed, "eval-mask", i);
            const ObservationMask mask =
                gen_mask(w.values.rows, w.values.cols, mask_ratio, mask_rng, mode);
            if (mask.missing_count() == 0) continue;
            const PriorStack stack = stack_priors(experts.impute_all(w, mask, i));
            Rng sample_rng = Rng::derive(seed, "eval-sample", i);
            const TimeSeriesWindow out =
                sample_imputation(fn, w, stack, mask, schedule, sampler, sample_rng);
            for (int l = 0; l < w.values.rows; ++l)
                for (int c = 0; c < w.values.cols; ++c) {
                    if (mask.observed(l, c)) continue;
                    const double d = out.values.at(l, c) - w.values.at(l, c);
                    sq += d * d;
                    ab += std::fabs(d);
                    ++count;
                }
        }
        res.mse_per_seed.push_back(count ? sq / static_cast<double>(count) : 0.0);
        res.mae_per_seed.push_back(count ? ab / static_cast<double>(count) : 0.0);
    }

    auto summarize = [](const std::vector<double>& xs, double& mean, double& sd) {
        double sum = 0.0;
        for (double x : xs) sum += x;
        mean = sum / static_cast<double>(xs.size());
        if (xs.size() < 2) {
            sd = 0.0;
            return;
        }
        double sq = 0.0;
        for (double x : xs) sq += (x - mean) * (x - mean);
        sd = std::sqrt(sq / static_cast<double>(xs.size() - 1));
    };
    summarize(res.mse_per_seed, res.mse_mean, res.mse_std);
    summarize(res.mae_per_seed, res.mae_mean, res.mae_std);
    return res;
}

EvaluationResult evaluate_bridge(const TrainedBridge& bridge,
                                 const std::vector<TimeSeriesWindow>& windows,
                                 double mask_ratio, const std::vector<uint64_t>& seeds) {
    DenoiserFn fn = [&bridge](const Array3& x, double t, const Array3& p,
                              const ObservationMask& m) {
        return bridge.model.forward(x, t, p, m);
    };
    return evaluate_with_denoiser(fn, bridge.experts, windows, mask_ratio, seeds,
                                  bridge.config.schedule, bridge.config.sampler,
                                  bridge.config.mask_mode);
}

EvaluationResult evaluate_expert_only(ExpertPrior& expert,
                                      const std::vector<TimeSeriesWindow>& windows,
                                      double mask_ratio,
                                      const std::vector<uint64_t>& seeds, MaskMode mode) {
    if (seeds.empty()) throw std::invalid_argument("evaluate: no seeds");
    EvaluationResult res;
    res.seeds = seeds;
    for (uint64_t seed : seeds) {
        double sq = 0.0, ab = 0.0;
        size_t count = 0;
        for (size_t i = 0; i < windows.size(); ++i) {
            const auto& w = windows[i];
            Rng mask_rng = Rng::derive(seed, "eval-mask", i);
            const ObservationMask mask =
                gen_mask(w.values.rows, w.values.cols, mask_ratio, mask_rng, mode);
            if (mask.missing_count() == 0) continue;
            const PriorEstimate est = expert.impute(w, mask, i);
            for (int l = 0; l < w.values.rows; ++l)
                for (int c = 0; c < w.values.cols; ++c) {
                    if (mask.observed(l, c)) continue;
                    const double d = est.values.at(l, c) - w.values.at(l, c);
                    sq += d * d;
                    ab += std::fabs(d);
                    ++count;
                }
        }
        res.mse_per_seed.push_back(count ? sq / static_cast<double>(count) : 0.0);
        res.mae_per_seed.push_back(count ? ab / static_cast<double>(count) : 0.0);
    }
    double sum = 0.0;
    for (double x : res.mse_per_seed) sum += x;
    res.mse_mean = sum / static_cast<double>(res.mse_per_seed.size());
    sum = 0.0;
    for (double x : res.mae_per_seed) sum += x;
    res.mae_mean = sum / static_cast<double>(res.mae_per_seed.size());
    auto sd = [](const std::vector<double>& xs, double mean) {
        if (xs.size() < 2) return 0.0;
        double sq = 0.0;
        for (double x : xs) sq += (x - mean) * (x - mean);
        return std::sqrt(sq / static_cast<double>(xs.size() - 1));
    };
    res.mse_std = sd(res.mse_per_seed, res.mse_mean);
    res.mae_std = sd(res.mae_per_seed, res.mae_mean);
    return res;
}

nlohmann::json EvaluationResult::to_json() const {
    nlohmann::json per_seed = nlohmann::json::array();
    for (size_t i = 0; i < seeds.size(); ++i)
        per_seed.push_back(
            {{"seed", seeds[i]}, {"mse", mse_per_seed[i]}, {"mae", mae_per_seed[i]}});
    return {{"per_seed", per_seed}, {"mse_mean", mse_mean},   {"mse_std", mse_std},
            {"mae_mean", mae_mean}, {"mae_std", mae_std}};
}

Checkpoint TrainedBridge::to_checkpoint() const {
    Checkpoint ck;
    ck.config = config.compatibility_config(channels);
    ck.seed = config.seed;

    CheckpointBlock denoiser;
    denoiser.name = "denoiser";
    denoiser.meta = {{"channels", channels},
                     {"n_priors", model.n_priors()},
                     {"arch",
                      {{"blocks", model.arch().blocks},
                       {"hidden", model.arch().hidden},
                       {"kernel", model.arch().kernel},
                       {"time_embed_dim", model.arch().time_embed_dim}}}};
    denoiser.values = model.params();
    ck.blocks.push_back(std::move(denoiser));

    for (size_t i = 0; i < experts.experts.size(); ++i) {
        const auto& e = *experts.experts[i];
        if (!e.trainable()) continue;
        const auto* conv = dynamic_cast<const ConvExpert*>(&e);
        CheckpointBlock block;
        block.name = "expert." + std::to_string(i);
        block.meta = {{"id", e.id()},
                      {"spec", experts.specs[i]},
                      {"channels", channels}};
        if (conv)
            block.meta["arch"] = {{"blocks", conv->arch().blocks},
                                  {"hidden", conv->arch().hidden},
                                  {"kernel", conv->arch().kernel}};
        block.values = e.parameters();
        ck.blocks.push_back(std::move(block));
    }
    return ck;
}

void save_bridge(const TrainedBridge& bridge, const std::string& path) {
    save_checkpoint(path, bridge.to_checkpoint());
}

TrainedBridge load_bridge(const std::string& path, size_t stream_windows) {
    const Checkpoint ck = load_checkpoint(path);
    TrainConfig cfg = TrainConfig::from_json(ck.config);
    cfg.seed = ck.seed;
    const int channels = ck.config.at("channels").get<int>();

    TrainedBridge bridge{cfg, channels,
                         DenoiserModel(channels, static_cast<int>(cfg.priors.size()),
                                       cfg.arch),
                         {}};
    const CheckpointBlock& dn = ck.block("denoiser");
    if (dn.values.size() != bridge.model.param_count())
        throw DataError(path + ": denoiser parameter count mismatch");
    bridge.model.params() = dn.values;

    bridge.experts = resolve_experts(cfg.priors, channels, cfg.expert_arch, cfg.seed,
                                     stream_windows, cfg.seq_len);
    for (size_t i = 0; i < bridge.experts.experts.size(); ++i) {
        auto& e = *bridge.experts.experts[i];
        if (!e.trainable()) continue;
        const CheckpointBlock& block = ck.block("expert." + std::to_string(i));
        if (block.values.size() != e.parameters().size())
            throw DataError(path + ": expert parameter count mismatch at index " +
                            std::to_string(i));
        e.parameters() = block.values;
    }
    return bridge;
}

EvaluationResult evaluate_checkpoint(const std::string& ckpt_path,
                                     const std::vector<TimeSeriesWindow>& test_windows,
                                     double mask_ratio,
                                     const std::vector<uint64_t>& seeds) {
    const TrainedBridge bridge = load_bridge(ckpt_path, test_windows.size());
    return evaluate_bridge(bridge, test_windows, mask_ratio, seeds);
}

void save_conv_expert(const ConvExpert& expert, uint64_t seed, const std::string& path,
                      double val_mse) {
    Checkpoint ck;
    ck.seed = seed;
    ck.config = {{"kind", "conv_expert"},
                 {"channels", expert.channels()},
                 {"arch",
                  {{"blocks", expert.arch().blocks},
                   {"hidden", expert.arch().hidden},
                   {"kernel", expert.arch().kernel}}}};
    CheckpointBlock block;
    block.name = "expert";
    block.meta = {{"id", expert.id()}, {"val_mse", val_mse}};
    block.values = expert.parameters();
    ck.blocks.push_back(std::move(block));
    save_checkpoint(path, ck);
}

std::shared_ptr<ConvExpert> load_conv_expert(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.config.value("kind", "") != "conv_expert")
        throw DataError(path + ": not a conv expert checkpoint");
    ConvExpertArch arch;
    const auto& a = ck.config.at("arch");
    arch.blocks = a.at("blocks").get<int>();
    arch.hidden = a.at("hidden").get<int>();
    arch.kernel = a.at("kernel").get<int>();
    const int channels = ck.config.at("channels").get<int>();
    const CheckpointBlock& block = ck.block("expert");
    auto e = std::make_shared<ConvExpert>(channels, arch,
                                          block.meta.value("id", "conv"));
    if (block.values.size() != e->parameters().size())
        throw DataError(path + ": parameter count mismatch");
    e->parameters() = block.values;
    return e;
}

}  // namespace bridgets
