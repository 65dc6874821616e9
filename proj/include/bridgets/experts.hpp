#ifndef BRIDGETS_EXPERTS_HPP
#define BRIDGETS_EXPERTS_HPP

#include <memory>
#include <string>
#include <vector>

#include "bridgets/data.hpp"
#include "bridgets/model.hpp"

namespace bridgets {

/// A deterministic estimate of the full L x C grid produced by one expert.
/// Always agrees with the observations at observed entries.
struct PriorEstimate {
    Array2 values;
    std::string source_id;
};

/// Deterministic imputer serving as a bridge endpoint.
///
/// Implementations must be pure functions of (observed values, mask,
/// parameters) and must never read the values stored at missing entries.
class ExpertPrior {
public:
    virtual ~ExpertPrior() = default;

    virtual std::string id() const = 0;
    virtual bool trainable() const { return false; }
    virtual std::vector<double>& parameters() { return empty_params_; }
    virtual const std::vector<double>& parameters() const { return empty_params_; }

    /// Full-grid estimate; `window_index` identifies the window within its
    /// stream (only file-backed experts use it).
    virtual PriorEstimate impute(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                                 size_t window_index = 0) const = 0;

    /// Forward with activation caching so backward() can run. Non-trainable
    /// experts fall back to impute().
    virtual PriorEstimate forward_cached(const TimeSeriesWindow& x_ob,
                                         const ObservationMask& mask,
                                         size_t window_index = 0) {
        return impute(x_ob, mask, window_index);
    }

    /// VJP: accumulates d(loss)/d(parameters) for the given upstream gradient
    /// on the estimate. Gradients at observed entries are ignored (those
    /// outputs are copied from the observations). No-op when not trainable.
    virtual void backward(const Array2& /*d_estimate*/, std::vector<double>& /*param_grad*/) {}

private:
    std::vector<double> empty_params_;
};

/// Per-channel linear interpolation across missing runs. Missing prefixes
/// and suffixes copy the nearest observed value; a fully-missing channel is
/// filled with zero (the post-normalization channel mean).
PriorEstimate impute_linear(const TimeSeriesWindow& x_ob, const ObservationMask& mask);

class LinearInterpExpert final : public ExpertPrior {
public:
    std::string id() const override { return "linear"; }
    PriorEstimate impute(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                         size_t window_index = 0) const override;
};

struct ConvExpertArch {
    int blocks = 4;
    int hidden = 64;
    int kernel = 3;

    bool operator==(const ConvExpertArch&) const = default;
};

/// Trainable residual conv imputer conditioned on the mask channel.
/// Inputs per time step: observed values with missing entries zeroed, plus
/// the mask itself; output is the estimate with observations copied through.
class ConvExpert final : public ExpertPrior {
public:
    ConvExpert(int channels, const ConvExpertArch& arch = {}, std::string id = "conv");

    std::string id() const override { return id_; }
    bool trainable() const override { return true; }
    std::vector<double>& parameters() override { return net_.params(); }
    const std::vector<double>& parameters() const override { return net_.params(); }
    int channels() const { return channels_; }
    const ConvExpertArch& arch() const { return arch_; }
    void init_params(Rng& rng) { net_.init_params(rng); }

    PriorEstimate impute(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                         size_t window_index = 0) const override;
    PriorEstimate forward_cached(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                                 size_t window_index = 0) override;
    void backward(const Array2& d_estimate, std::vector<double>& param_grad) override;

private:
    Array2 build_features(const TimeSeriesWindow& x_ob, const ObservationMask& mask) const;
    PriorEstimate run(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                      ResNetCache* cache) const;

    std::string id_;
    int channels_;
    ConvExpertArch arch_;
    TemporalResNet net_;
    ResNetCache cache_;
    ObservationMask last_mask_;
    bool have_cache_ = false;
};

/// Estimates produced outside this process, aligned to the window stream by
/// index. Observed entries are overwritten with the observations on read.
class ExternalPriorExpert final : public ExpertPrior {
public:
    ExternalPriorExpert(std::vector<Array2> estimates, std::string id);

    std::string id() const override { return id_; }
    size_t window_count() const { return estimates_.size(); }
    PriorEstimate impute(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                         size_t window_index = 0) const override;

private:
    std::vector<Array2> estimates_;
    std::string id_;
};

/// Reads a window-aligned prediction file. `.csv` files hold one row per
/// (window, timestep) with C columns; anything else is read as the flat
/// binary layout: three little-endian int64 header fields (windows, L, C)
/// followed by row-major little-endian float64 values.
std::vector<PriorEstimate> load_external_prior(const std::string& path,
                                               size_t expected_windows,
                                               int expected_rows, int expected_cols);

/// Writes the flat binary layout (or CSV when the path ends in .csv).
void save_external_prior(const std::string& path, const std::vector<Array2>& estimates);

struct PretrainConfig {
    int max_steps = 500;
    int batch_size = 16;
    double lr = 1e-3;
    int eval_every = 50;
    uint64_t seed = 0;
    MaskMode mask_mode = MaskMode::Bernoulli;
};

struct PretrainResult {
    double best_val_mse = 0.0;
    int best_step = 0;
};

/// Gradient-descent pretraining on masked reconstruction; keeps the
/// parameters with the best validation masked MSE. Deterministic given seed.
PretrainResult pretrain_expert(ConvExpert& expert,
                               const std::vector<TimeSeriesWindow>& train_windows,
                               const std::vector<TimeSeriesWindow>& val_windows,
                               double mask_ratio, const PretrainConfig& cfg);

/// Masked reconstruction error of a single expert over a window set, with
/// per-window masks drawn from the given seed. Used for validation-based
/// expert selection.
double expert_masked_mse(ExpertPrior& expert,
                         const std::vector<TimeSeriesWindow>& windows,
                         double mask_ratio, uint64_t mask_seed,
                         MaskMode mode = MaskMode::Bernoulli);

}  // namespace bridgets

#endif  // BRIDGETS_EXPERTS_HPP
