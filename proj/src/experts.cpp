#include "bridgets/experts.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bridgets {

PriorEstimate impute_linear(const TimeSeriesWindow& x_ob, const ObservationMask& mask) {
    const Array2& x = x_ob.values;
    if (mask.rows != x.rows || mask.cols != x.cols)
        throw std::invalid_argument("impute_linear: mask shape mismatch");

    PriorEstimate est;
    est.source_id = "linear";
    est.values = Array2(x.rows, x.cols);
    for (int c = 0; c < x.cols; ++c) {
        int prev = -1;  // last observed row index seen so far
        for (int l = 0; l < x.rows; ++l) {
            if (!mask.observed(l, c)) continue;
            const double here = x.at(l, c);
            est.values.at(l, c) = here;
            if (prev < 0) {
                // Missing prefix copies the first observed value.
                for (int f = 0; f < l; ++f) est.values.at(f, c) = here;
            } else if (prev + 1 < l) {
                const double left = x.at(prev, c);
                const double step = (here - left) / (l - prev);
                for (int f = prev + 1; f < l; ++f)
                    est.values.at(f, c) = left + step * (f - prev);
            }
            prev = l;
        }
        if (prev < 0) {
            // Fully-missing channel: zero fill.
            for (int l = 0; l < x.rows; ++l) est.values.at(l, c) = 0.0;
        } else {
            for (int l = prev + 1; l < x.rows; ++l) est.values.at(l, c) = x.at(prev, c);
        }
    }
    return est;
}

PriorEstimate LinearInterpExpert::impute(const TimeSeriesWindow& x_ob,
                                         const ObservationMask& mask, size_t) const {
    return impute_linear(x_ob, mask);
}

ConvExpert::ConvExpert(int channels, const ConvExpertArch& arch, std::string id)
    : id_(std::move(id)),
      channels_(channels),
      arch_(arch),
      net_(2 * channels, channels, ResNetArch{arch.blocks, arch.hidden, arch.kernel, 0}) {
    if (channels < 1) throw std::invalid_argument("conv expert: channels must be >= 1");
}

Array2 ConvExpert::build_features(const TimeSeriesWindow& x_ob,
                                  const ObservationMask& mask) const {
    const Array2& x = x_ob.values;
    if (x.cols != channels_) throw std::invalid_argument("conv expert: channel mismatch");
    if (mask.rows != x.rows || mask.cols != x.cols)
        throw std::invalid_argument("conv expert: mask shape mismatch");
    Array2 features(x.rows, 2 * channels_);
    for (int l = 0; l < x.rows; ++l)
        for (int c = 0; c < channels_; ++c) {
            const bool obs = mask.observed(l, c);
            features.at(l, c) = obs ? x.at(l, c) : 0.0;  // never read missing values
            features.at(l, channels_ + c) = obs ? 1.0 : 0.0;
        }
    return features;
}

PriorEstimate ConvExpert::run(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                              ResNetCache* cache) const {
    const Array2 features = build_features(x_ob, mask);
    PriorEstimate est;
    est.source_id = id_;
    est.values = net_.forward(features, 0.0, cache);
    for (int l = 0; l < est.values.rows; ++l)
        for (int c = 0; c < channels_; ++c)
            if (mask.observed(l, c)) est.values.at(l, c) = x_ob.values.at(l, c);
    return est;
}

PriorEstimate ConvExpert::impute(const TimeSeriesWindow& x_ob, const ObservationMask& mask,
                                 size_t) const {
    return run(x_ob, mask, nullptr);
}

PriorEstimate ConvExpert::forward_cached(const TimeSeriesWindow& x_ob,
                                         const ObservationMask& mask, size_t) {
    PriorEstimate est = run(x_ob, mask, &cache_);
    last_mask_ = mask;
    have_cache_ = true;
    return est;
}

void ConvExpert::backward(const Array2& d_estimate, std::vector<double>& param_grad) {
    if (!have_cache_) throw std::logic_error("conv expert: backward without forward");
    if (d_estimate.rows != cache_.input.rows || d_estimate.cols != channels_)
        throw std::invalid_argument("conv expert: upstream gradient shape mismatch");
    // Observed outputs are copied from the observations, so their gradient
    // does not reach the network.
    Array2 d_net = d_estimate;
    for (int l = 0; l < d_net.rows; ++l)
        for (int c = 0; c < channels_; ++c)
            if (last_mask_.observed(l, c)) d_net.at(l, c) = 0.0;
    net_.backward(cache_, d_net, param_grad, nullptr);
}

ExternalPriorExpert::ExternalPriorExpert(std::vector<Array2> estimates, std::string id)
    : estimates_(std::move(estimates)), id_(std::move(id)) {
    if (estimates_.empty())
        throw std::invalid_argument("external expert: no estimates loaded");
}

PriorEstimate ExternalPriorExpert::impute(const TimeSeriesWindow& x_ob,
                                          const ObservationMask& mask,
                                          size_t window_index) const {
    if (window_index >= estimates_.size())
        throw DataError("external expert '" + id_ + "': window index " +
                        std::to_string(window_index) + " out of range (have " +
                        std::to_string(estimates_.size()) + ")");
    const Array2& stored = estimates_[window_index];
    if (stored.rows != x_ob.values.rows || stored.cols != x_ob.values.cols)
        throw DataError("external expert '" + id_ + "': stored shape mismatch");
    PriorEstimate est;
    est.source_id = id_;
    est.values = stored;
    for (int l = 0; l < stored.rows; ++l)
        for (int c = 0; c < stored.cols; ++c)
            if (mask.observed(l, c)) est.values.at(l, c) = x_ob.values.at(l, c);
    return est;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<Array2> read_prior_csv(const std::string& path, size_t windows, int rows,
                                   int cols) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open prior file: " + path);
    std::vector<Array2> out(windows, Array2(rows, cols));
    std::string line;
    size_t flat_row = 0;
    const size_t expected_rows = windows * static_cast<size_t>(rows);
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        if (flat_row >= expected_rows)
            throw DataError(path + ": too many rows, expected " +
                            std::to_string(expected_rows));
        std::stringstream ss(line);
        std::string cell;
        for (int c = 0; c < cols; ++c) {
            if (!std::getline(ss, cell, ','))
                throw DataError(path + ": row " + std::to_string(flat_row + 1) +
                                " has fewer than " + std::to_string(cols) + " columns");
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || !std::isfinite(v))
                throw DataError(path + ": row " + std::to_string(flat_row + 1) +
                                ": non-finite or unparsable value '" + cell + "'");
            out[flat_row / rows].at(static_cast<int>(flat_row % rows), c) = v;
        }
        ++flat_row;
    }
    if (flat_row != expected_rows)
        throw DataError(path + ": expected " + std::to_string(expected_rows) +
                        " rows, found " + std::to_string(flat_row));
    return out;
}

std::vector<Array2> read_prior_binary(const std::string& path, size_t windows, int rows,
                                      int cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open prior file: " + path);
    int64_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in) throw DataError(path + ": truncated header");
    if (header[0] != static_cast<int64_t>(windows) || header[1] != rows ||
        header[2] != cols)
        throw DataError(path + ": header says (" + std::to_string(header[0]) + ", " +
                        std::to_string(header[1]) + ", " + std::to_string(header[2]) +
                        "), expected (" + std::to_string(windows) + ", " +
                        std::to_string(rows) + ", " + std::to_string(cols) + ")");
    std::vector<Array2> out(windows, Array2(rows, cols));
    for (auto& block : out) {
        in.read(reinterpret_cast<char*>(block.v.data()),
                static_cast<std::streamsize>(block.v.size() * sizeof(double)));
        if (!in) throw DataError(path + ": truncated value block");
        if (!all_finite(block)) throw DataError(path + ": non-finite values");
    }
    char extra;
    if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after value block");
    return out;
}

}  // namespace

std::vector<PriorEstimate> load_external_prior(const std::string& path,
                                               size_t expected_windows,
                                               int expected_rows, int expected_cols) {
    std::vector<Array2> blocks =
        ends_with(path, ".csv")
            ? read_prior_csv(path, expected_windows, expected_rows, expected_cols)
            : read_prior_binary(path, expected_windows, expected_rows, expected_cols);
    std::vector<PriorEstimate> out;
    out.reserve(blocks.size());
    for (auto& b : blocks) {
        PriorEstimate est;
        est.source_id = "external:" + path;
        est.values = std::move(b);
        out.push_back(std::move(est));
    }
    return out;
}

void save_external_prior(const std::string& path, const std::vector<Array2>& estimates) {
    if (estimates.empty()) throw std::invalid_argument("save_external_prior: empty list");
    const int rows = estimates.front().rows;
    const int cols = estimates.front().cols;
    for (const auto& e : estimates)
        if (e.rows != rows || e.cols != cols)
            throw std::invalid_argument("save_external_prior: inconsistent shapes");

    if (ends_with(path, ".csv")) {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write prior file: " + path);
        out.precision(17);
        for (const auto& e : estimates)
            for (int l = 0; l < rows; ++l)
                for (int c = 0; c < cols; ++c)
                    out << e.at(l, c) << (c + 1 < cols ? "," : "\n");
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write prior file: " + path);
    const int64_t header[3] = {static_cast<int64_t>(estimates.size()), rows, cols};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (const auto& e : estimates)
        out.write(reinterpret_cast<const char*>(e.v.data()),
                  static_cast<std::streamsize>(e.v.size() * sizeof(double)));
}

double expert_masked_mse(ExpertPrior& expert, const std::vector<TimeSeriesWindow>& windows,
                         double mask_ratio, uint64_t mask_seed, MaskMode mode) {
    double sq = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < windows.size(); ++i) {
        const auto& w = windows[i];
        Rng rng = Rng::derive(mask_seed, "expert-eval-mask", i);
        const ObservationMask mask =
            gen_mask(w.values.rows, w.values.cols, mask_ratio, rng, mode);
        const PriorEstimate est = expert.impute(w, mask, i);
        for (int l = 0; l < w.values.rows; ++l)
            for (int c = 0; c < w.values.cols; ++c) {
                if (mask.observed(l, c)) continue;
                const double d = est.values.at(l, c) - w.values.at(l, c);
                sq += d * d;
                ++count;
            }
    }
    return count == 0 ? 0.0 : sq / static_cast<double>(count);
}

PretrainResult pretrain_expert(ConvExpert& expert,
                               const std::vector<TimeSeriesWindow>& train_windows,
                               const std::vector<TimeSeriesWindow>& val_windows,
                               double mask_ratio, const PretrainConfig& cfg) {
    if (train_windows.empty() || val_windows.empty())
        throw std::invalid_argument("pretrain_expert: empty window set");

    OptimizerState opt(expert.parameters().size(), cfg.lr);
    Rng batch_rng = Rng::derive(cfg.seed, "pretrain-batch");
    Rng mask_rng = Rng::derive(cfg.seed, "pretrain-mask");

    std::vector<double> best_params = expert.parameters();
    PretrainResult result;
    result.best_val_mse =
        expert_masked_mse(expert, val_windows, mask_ratio, cfg.seed, cfg.mask_mode);
    result.best_step = 0;

    std::vector<double> grad(expert.parameters().size(), 0.0);
    for (int step = 1; step <= cfg.max_steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& w =
                train_windows[static_cast<size_t>(batch_rng.below(train_windows.size()))];
            const ObservationMask mask =
                gen_mask(w.values.rows, w.values.cols, mask_ratio, mask_rng, cfg.mask_mode);
            const size_t miss = mask.missing_count();
            if (miss == 0) continue;
            const PriorEstimate est = expert.forward_cached(w, mask);
            Array2 d_est(w.values.rows, w.values.cols);
            double loss = 0.0;
            const double scale = 2.0 / (static_cast<double>(miss) * cfg.batch_size);
            for (int l = 0; l < w.values.rows; ++l)
                for (int c = 0; c < w.values.cols; ++c) {
                    if (mask.observed(l, c)) continue;
                    const double diff = est.values.at(l, c) - w.values.at(l, c);
                    loss += diff * diff;
                    d_est.at(l, c) = scale * diff;
                }
            batch_loss += loss / static_cast<double>(miss) / cfg.batch_size;
            expert.backward(d_est, grad);
        }
        if (!std::isfinite(batch_loss))
            throw NumericalError("pretrain_expert: loss diverged at step " +
                                 std::to_string(step));
        adam_step(opt, expert.parameters(), grad);

        if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
            const double val =
                expert_masked_mse(expert, val_windows, mask_ratio, cfg.seed, cfg.mask_mode);
            if (val < result.best_val_mse) {
                result.best_val_mse = val;
                result.best_step = step;
                best_params = expert.parameters();
            }
        }
    }
    expert.parameters() = best_params;
    return result;
}

}  // namespace bridgets
