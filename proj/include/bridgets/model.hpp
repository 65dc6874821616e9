#ifndef BRIDGETS_MODEL_HPP
#define BRIDGETS_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bridgets/common.hpp"
#include "bridgets/data.hpp"
#include "bridgets/rng.hpp"

namespace bridgets {

/// Architecture of the temporal convolutional residual backbone.
struct ResNetArch {
    int blocks = 4;
    int hidden = 64;
    int kernel = 3;          // odd, same-padded along time
    int time_embed_dim = 0;  // even; 0 disables time conditioning
};

/// Per-invocation activation cache consumed by backward().
struct ResNetCache {
    Array2 input;                // L x F_in
    std::vector<double> temb;    // sinusoidal features of t
    std::vector<Array2> h;       // residual stream, h[0..blocks], each L x H
    std::vector<Array2> pre;     // per block: conv1 output before activation
    std::vector<Array2> act;     // per block: gelu(pre)
};

/// 1-D residual conv network over a length-L feature sequence.
///
/// Layer stack: pointwise input projection (+ time embedding), `blocks`
/// residual blocks of conv-gelu-conv, pointwise output projection.
/// Parameters live in one flat vector with a fixed layout so that
/// checkpoints, Adam, and finite-difference checks all see the same view:
///
///   W_in[H][F_in], b_in[H], W_temb[H][E] (if E>0),
///   per block: W1[H][k][H], b1[H], W2[H][k][H], b2[H],
///   W_out[F_out][H], b_out[F_out]
class TemporalResNet {
public:
    TemporalResNet(int f_in, int f_out, const ResNetArch& arch);

    int f_in() const { return f_in_; }
    int f_out() const { return f_out_; }
    const ResNetArch& arch() const { return arch_; }
    size_t param_count() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    /// Gaussian fan-in init for hidden layers; output projection starts at zero.
    void init_params(Rng& rng);

    /// Deterministic forward pass. `t` is ignored when time conditioning is off.
    Array2 forward(const Array2& input, double t, ResNetCache* cache = nullptr) const;

    /// Accumulates d(loss)/d(params) into `param_grad` (must be param_count
    /// long) and, when `d_input` is non-null, writes d(loss)/d(input).
    void backward(const ResNetCache& cache, const Array2& d_out,
                  std::vector<double>& param_grad, Array2* d_input = nullptr) const;

    static std::vector<double> time_features(double t, int dim);

private:
    struct Offsets {
        size_t w_in, b_in, w_temb;
        std::vector<size_t> w1, b1, w2, b2;
        size_t w_out, b_out;
        size_t total;
    };

    void conv_same(const Array2& x, const double* w, const double* b, Array2& y) const;
    void conv_same_backward(const Array2& x, const double* w, const Array2& dy,
                            double* dw, double* db, Array2* dx) const;

    int f_in_;
    int f_out_;
    ResNetArch arch_;
    Offsets off_;
    std::vector<double> params_;
};

/// Architecture knobs for the denoiser network.
struct DenoiserArch {
    int blocks = 4;
    int hidden = 64;
    int kernel = 3;
    int time_embed_dim = 32;

    bool operator==(const DenoiserArch&) const = default;
};

/// Cache for one denoiser forward; feeds DenoiserModel::backward.
struct DenoiserCache {
    ResNetCache net;
};

/// Conditional network predicting the clean target from a bridge state.
///
/// Inputs are concatenated feature-wise per time step: the state x_t, the
/// prior stack, and the observation mask broadcast over the N prior slices.
/// A sinusoidal embedding of t is added after the first projection. Output
/// has the same L x C x N shape as x_t.
class DenoiserModel {
public:
    DenoiserModel(int channels, int n_priors, const DenoiserArch& arch = {});

    int channels() const { return channels_; }
    int n_priors() const { return n_priors_; }
    const DenoiserArch& arch() const { return arch_; }
    size_t param_count() const { return net_.param_count(); }
    std::vector<double>& params() { return net_.params(); }
    const std::vector<double>& params() const { return net_.params(); }
    void init_params(Rng& rng) { net_.init_params(rng); }

    Array3 forward(const Array3& x_t, double t, const Array3& prior,
                   const ObservationMask& mask, DenoiserCache* cache = nullptr) const;

    /// Accumulates parameter gradients; optionally returns gradients w.r.t.
    /// the x_t and prior inputs (needed when experts are trained jointly).
    void backward(const DenoiserCache& cache, const Array3& d_out,
                  std::vector<double>& param_grad,
                  Array3* d_x_t = nullptr, Array3* d_prior = nullptr) const;

private:
    void check_shapes(const Array3& x_t, const Array3& prior,
                      const ObservationMask& mask) const;

    int channels_;
    int n_priors_;
    DenoiserArch arch_;
    TemporalResNet net_;
};

/// Bias-corrected Adam over a flat parameter vector.
struct OptimizerState {
    int64_t step = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    OptimizerState() = default;
    explicit OptimizerState(size_t n, double lr_ = 1e-3)
        : first_moment(n, 0.0), second_moment(n, 0.0), lr(lr_) {}
};

/// One Adam update; throws NumericalError on non-finite gradients.
void adam_step(OptimizerState& state, std::vector<double>& params,
               const std::vector<double>& grads);

}  // namespace bridgets

#endif  // BRIDGETS_MODEL_HPP
