#include "bridgets/model.hpp"

#include <cmath>
#include <stdexcept>

namespace bridgets {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

}  // namespace

TemporalResNet::TemporalResNet(int f_in, int f_out, const ResNetArch& arch)
    : f_in_(f_in), f_out_(f_out), arch_(arch) {
    if (f_in < 1 || f_out < 1) throw std::invalid_argument("resnet: feature sizes must be >= 1");
    if (arch.blocks < 0 || arch.hidden < 1) throw std::invalid_argument("resnet: bad arch");
    if (arch.kernel < 1 || arch.kernel % 2 == 0)
        throw std::invalid_argument("resnet: kernel must be odd and >= 1");
    if (arch.time_embed_dim < 0 || arch.time_embed_dim % 2 != 0)
        throw std::invalid_argument("resnet: time_embed_dim must be even");

    const size_t h = static_cast<size_t>(arch.hidden);
    const size_t k = static_cast<size_t>(arch.kernel);
    size_t at = 0;
    off_.w_in = at; at += h * f_in;
    off_.b_in = at; at += h;
    off_.w_temb = at; at += h * static_cast<size_t>(arch.time_embed_dim);
    for (int b = 0; b < arch.blocks; ++b) {
        off_.w1.push_back(at); at += h * k * h;
        off_.b1.push_back(at); at += h;
        off_.w2.push_back(at); at += h * k * h;
        off_.b2.push_back(at); at += h;
    }
    off_.w_out = at; at += static_cast<size_t>(f_out) * h;
    off_.b_out = at; at += static_cast<size_t>(f_out);
    off_.total = at;
    params_.assign(at, 0.0);
}

void TemporalResNet::init_params(Rng& rng) {
    const int h = arch_.hidden;
    const int k = arch_.kernel;
    auto fill_gaussian = [&](size_t offset, size_t count, double scale) {
        for (size_t i = 0; i < count; ++i) params_[offset + i] = scale * rng.normal();
    };
    fill_gaussian(off_.w_in, static_cast<size_t>(h) * f_in_, std::sqrt(2.0 / f_in_));
    if (arch_.time_embed_dim > 0)
        fill_gaussian(off_.w_temb, static_cast<size_t>(h) * arch_.time_embed_dim,
                      std::sqrt(1.0 / arch_.time_embed_dim));
    for (int b = 0; b < arch_.blocks; ++b) {
        const double scale = std::sqrt(2.0 / (static_cast<double>(h) * k));
        fill_gaussian(off_.w1[b], static_cast<size_t>(h) * k * h, scale);
        fill_gaussian(off_.w2[b], static_cast<size_t>(h) * k * h, scale);
    }
    // Output projection stays zero so the initial prediction is the bias
    // field; biases start at zero.
}

std::vector<double> TemporalResNet::time_features(double t, int dim) {
    std::vector<double> out(static_cast<size_t>(dim), 0.0);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq =
            half > 1 ? std::pow(1000.0, static_cast<double>(i) / (half - 1)) : 1.0;
        out[2 * i] = std::sin(freq * t);
        out[2 * i + 1] = std::cos(freq * t);
    }
    return out;
}

// y[l][o] = b[o] + sum_{j,i} w[(o*k + j)*H + i] * x[l+j-pad][i]
void TemporalResNet::conv_same(const Array2& x, const double* w, const double* b,
                               Array2& y) const {
    const int rows = x.rows;
    const int h = arch_.hidden;
    const int k = arch_.kernel;
    const int pad = (k - 1) / 2;
    y = Array2(rows, h);
    for (int l = 0; l < rows; ++l) {
        double* yrow = &y.v[static_cast<size_t>(l) * h];
        for (int o = 0; o < h; ++o) yrow[o] = b[o];
        for (int j = 0; j < k; ++j) {
            const int src = l + j - pad;
            if (src < 0 || src >= rows) continue;
            const double* xrow = &x.v[static_cast<size_t>(src) * h];
            for (int o = 0; o < h; ++o) {
                const double* wrow = w + (static_cast<size_t>(o) * k + j) * h;
                double acc = 0.0;
                for (int i = 0; i < h; ++i) acc += wrow[i] * xrow[i];
                yrow[o] += acc;
            }
        }
    }
}

void TemporalResNet::conv_same_backward(const Array2& x, const double* w,
                                        const Array2& dy, double* dw, double* db,
                                        Array2* dx) const {
    const int rows = x.rows;
    const int h = arch_.hidden;
    const int k = arch_.kernel;
    const int pad = (k - 1) / 2;
    for (int l = 0; l < rows; ++l) {
        const double* dyrow = &dy.v[static_cast<size_t>(l) * h];
        for (int o = 0; o < h; ++o) db[o] += dyrow[o];
        for (int j = 0; j < k; ++j) {
            const int src = l + j - pad;
            if (src < 0 || src >= rows) continue;
            const double* xrow = &x.v[static_cast<size_t>(src) * h];
            double* dxrow = dx ? &dx->v[static_cast<size_t>(src) * h] : nullptr;
            for (int o = 0; o < h; ++o) {
                const double g = dyrow[o];
                if (g == 0.0) continue;
                double* dwrow = dw + (static_cast<size_t>(o) * k + j) * h;
                const double* wrow = w + (static_cast<size_t>(o) * k + j) * h;
                for (int i = 0; i < h; ++i) {
                    dwrow[i] += g * xrow[i];
                    if (dxrow) dxrow[i] += g * wrow[i];
                }
            }
        }
    }
}

Array2 TemporalResNet::forward(const Array2& input, double t, ResNetCache* cache) const {
    if (input.cols != f_in_) throw std::invalid_argument("resnet: input feature mismatch");
    const int rows = input.rows;
    const int h = arch_.hidden;
    const double* p = params_.data();

    std::vector<double> temb;
    if (arch_.time_embed_dim > 0) temb = time_features(t, arch_.time_embed_dim);

    Array2 stream(rows, h);
    for (int l = 0; l < rows; ++l) {
        const double* xrow = &input.v[static_cast<size_t>(l) * f_in_];
        double* srow = &stream.v[static_cast<size_t>(l) * h];
        for (int o = 0; o < h; ++o) {
            const double* wrow = p + off_.w_in + static_cast<size_t>(o) * f_in_;
            double acc = p[off_.b_in + o];
            for (int i = 0; i < f_in_; ++i) acc += wrow[i] * xrow[i];
            if (!temb.empty()) {
                const double* wt = p + off_.w_temb + static_cast<size_t>(o) * temb.size();
                for (size_t e = 0; e < temb.size(); ++e) acc += wt[e] * temb[e];
            }
            srow[o] = acc;
        }
    }

    if (cache) {
        cache->input = input;
        cache->temb = temb;
        cache->h.assign(1, stream);
        cache->pre.clear();
        cache->act.clear();
    }

    Array2 pre, act(rows, h), post;
    for (int b = 0; b < arch_.blocks; ++b) {
        conv_same(stream, p + off_.w1[b], p + off_.b1[b], pre);
        for (size_t i = 0; i < pre.v.size(); ++i) act.v[i] = gelu(pre.v[i]);
        conv_same(act, p + off_.w2[b], p + off_.b2[b], post);
        for (size_t i = 0; i < stream.v.size(); ++i) stream.v[i] += post.v[i];
        if (cache) {
            cache->pre.push_back(pre);
            cache->act.push_back(act);
            cache->h.push_back(stream);
        }
    }

    Array2 out(rows, f_out_);
    for (int l = 0; l < rows; ++l) {
        const double* srow = &stream.v[static_cast<size_t>(l) * h];
        double* orow = &out.v[static_cast<size_t>(l) * f_out_];
        for (int o = 0; o < f_out_; ++o) {
            const double* wrow = p + off_.w_out + static_cast<size_t>(o) * h;
            double acc = p[off_.b_out + o];
            for (int i = 0; i < h; ++i) acc += wrow[i] * srow[i];
            orow[o] = acc;
        }
    }
    return out;
}

void TemporalResNet::backward(const ResNetCache& cache, const Array2& d_out,
                              std::vector<double>& param_grad, Array2* d_input) const {
    if (param_grad.size() != off_.total)
        throw std::invalid_argument("resnet: gradient buffer size mismatch");
    if (d_out.cols != f_out_ || d_out.rows != cache.input.rows)
        throw std::invalid_argument("resnet: upstream gradient shape mismatch");
    const int rows = cache.input.rows;
    const int h = arch_.hidden;
    const double* p = params_.data();
    double* g = param_grad.data();

    // Output projection.
    Array2 d_stream(rows, h);
    for (int l = 0; l < rows; ++l) {
        const double* dyrow = &d_out.v[static_cast<size_t>(l) * f_out_];
        const double* srow = &cache.h.back().v[static_cast<size_t>(l) * h];
        double* dsrow = &d_stream.v[static_cast<size_t>(l) * h];
        for (int o = 0; o < f_out_; ++o) {
            const double dy = dyrow[o];
            g[off_.b_out + o] += dy;
            if (dy == 0.0) continue;
            double* dwrow = g + off_.w_out + static_cast<size_t>(o) * h;
            const double* wrow = p + off_.w_out + static_cast<size_t>(o) * h;
            for (int i = 0; i < h; ++i) {
                dwrow[i] += dy * srow[i];
                dsrow[i] += dy * wrow[i];
            }
        }
    }

    // Residual blocks in reverse.
    Array2 d_act(rows, h), d_pre(rows, h);
    for (int b = arch_.blocks - 1; b >= 0; --b) {
        std::fill(d_act.v.begin(), d_act.v.end(), 0.0);
        conv_same_backward(cache.act[b], p + off_.w2[b], d_stream,
                           g + off_.w2[b], g + off_.b2[b], &d_act);
        for (size_t i = 0; i < d_pre.v.size(); ++i)
            d_pre.v[i] = d_act.v[i] * gelu_grad(cache.pre[b].v[i]);
        // Residual: gradient w.r.t. h[b] accumulates on top of the skip path.
        conv_same_backward(cache.h[b], p + off_.w1[b], d_pre,
                           g + off_.w1[b], g + off_.b1[b], &d_stream);
    }

    // Input projection.
    if (d_input) *d_input = Array2(rows, f_in_);
    std::vector<double> db_in_total(static_cast<size_t>(h), 0.0);
    for (int l = 0; l < rows; ++l) {
        const double* dsrow = &d_stream.v[static_cast<size_t>(l) * h];
        const double* xrow = &cache.input.v[static_cast<size_t>(l) * f_in_];
        double* dxrow = d_input ? &d_input->v[static_cast<size_t>(l) * f_in_] : nullptr;
        for (int o = 0; o < h; ++o) {
            const double dy = dsrow[o];
            db_in_total[o] += dy;
            if (dy == 0.0) continue;
            double* dwrow = g + off_.w_in + static_cast<size_t>(o) * f_in_;
            const double* wrow = p + off_.w_in + static_cast<size_t>(o) * f_in_;
            for (int i = 0; i < f_in_; ++i) {
                dwrow[i] += dy * xrow[i];
                if (dxrow) dxrow[i] += dy * wrow[i];
            }
        }
    }
    for (int o = 0; o < h; ++o) g[off_.b_in + o] += db_in_total[o];
    if (!cache.temb.empty()) {
        for (int o = 0; o < h; ++o) {
            double* dwt = g + off_.w_temb + static_cast<size_t>(o) * cache.temb.size();
            for (size_t e = 0; e < cache.temb.size(); ++e)
                dwt[e] += db_in_total[o] * cache.temb[e];
        }
    }
}

DenoiserModel::DenoiserModel(int channels, int n_priors, const DenoiserArch& arch)
    : channels_(channels),
      n_priors_(n_priors),
      arch_(arch),
      net_(3 * channels * n_priors, channels * n_priors,
           ResNetArch{arch.blocks, arch.hidden, arch.kernel, arch.time_embed_dim}) {
    if (channels < 1 || n_priors < 1)
        throw std::invalid_argument("denoiser: channels and n_priors must be >= 1");
}

void DenoiserModel::check_shapes(const Array3& x_t, const Array3& prior,
                                 const ObservationMask& mask) const {
    if (x_t.cols != channels_ || x_t.depth != n_priors_)
        throw std::invalid_argument("denoiser: x_t shape mismatch");
    if (!x_t.same_shape(prior))
        throw std::invalid_argument("denoiser: prior shape mismatch");
    if (mask.rows != x_t.rows || mask.cols != channels_)
        throw std::invalid_argument("denoiser: mask shape mismatch");
}

Array3 DenoiserModel::forward(const Array3& x_t, double t, const Array3& prior,
                              const ObservationMask& mask, DenoiserCache* cache) const {
    check_shapes(x_t, prior, mask);
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("denoiser: t outside [0, 1]");
    if (!all_finite(x_t) || !all_finite(prior))
        throw NumericalError("denoiser: non-finite input");

    const int rows = x_t.rows;
    const int cn = channels_ * n_priors_;
    Array2 features(rows, 3 * cn);
    for (int l = 0; l < rows; ++l) {
        double* frow = &features.v[static_cast<size_t>(l) * 3 * cn];
        for (int c = 0; c < channels_; ++c)
            for (int n = 0; n < n_priors_; ++n) {
                const int slot = c * n_priors_ + n;
                frow[slot] = x_t.at(l, c, n);
                frow[cn + slot] = prior.at(l, c, n);
                frow[2 * cn + slot] = mask.observed(l, c) ? 1.0 : 0.0;
            }
    }

    Array2 flat = net_.forward(features, t, cache ? &cache->net : nullptr);

    Array3 out(rows, channels_, n_priors_);
    for (int l = 0; l < rows; ++l)
        for (int c = 0; c < channels_; ++c)
            for (int n = 0; n < n_priors_; ++n)
                out.at(l, c, n) = flat.at(l, c * n_priors_ + n);
    return out;
}

void DenoiserModel::backward(const DenoiserCache& cache, const Array3& d_out,
                             std::vector<double>& param_grad,
                             Array3* d_x_t, Array3* d_prior) const {
    const int rows = d_out.rows;
    const int cn = channels_ * n_priors_;
    Array2 flat_grad(rows, cn);
    for (int l = 0; l < rows; ++l)
        for (int c = 0; c < channels_; ++c)
            for (int n = 0; n < n_priors_; ++n)
                flat_grad.at(l, c * n_priors_ + n) = d_out.at(l, c, n);

    const bool want_inputs = d_x_t != nullptr || d_prior != nullptr;
    Array2 d_features;
    net_.backward(cache.net, flat_grad, param_grad, want_inputs ? &d_features : nullptr);

    if (want_inputs) {
        if (d_x_t) *d_x_t = Array3(rows, channels_, n_priors_);
        if (d_prior) *d_prior = Array3(rows, channels_, n_priors_);
        for (int l = 0; l < rows; ++l) {
            const double* frow = &d_features.v[static_cast<size_t>(l) * 3 * cn];
            for (int c = 0; c < channels_; ++c)
                for (int n = 0; n < n_priors_; ++n) {
                    const int slot = c * n_priors_ + n;
                    if (d_x_t) d_x_t->at(l, c, n) = frow[slot];
                    if (d_prior) d_prior->at(l, c, n) = frow[cn + slot];
                }
        }
    }
}

void adam_step(OptimizerState& state, std::vector<double>& params,
               const std::vector<double>& grads) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam: size mismatch");
    if (!all_finite(grads)) throw NumericalError("adam: non-finite gradient");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double gi = grads[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * gi;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * gi * gi;
        const double m_hat = state.first_moment[i] / bc1;
        const double v_hat = state.second_moment[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

}  // namespace bridgets
