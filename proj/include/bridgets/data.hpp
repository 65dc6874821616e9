#ifndef BRIDGETS_DATA_HPP
#define BRIDGETS_DATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bridgets/common.hpp"
#include "bridgets/rng.hpp"

namespace bridgets {

/// A multichannel series in raw or normalized units, rows in time order.
struct Dataset {
    std::vector<std::string> channel_names;
    Array2 values;                         // T_total x C
    std::vector<std::string> timestamps;   // optional opaque labels, empty or size T_total

    int channels() const { return values.cols; }
    int length() const { return values.rows; }
};

/// Per-channel z-score statistics, computed from the training split only.
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> std;  // clamped below at 1e-8

    void normalize(Array2& values) const;
    void denormalize(Array2& values) const;
};

/// One L x C slice of a dataset in normalized units.
struct TimeSeriesWindow {
    Array2 values;
    long start_index = 0;
};

/// Binary observation indicator: 1 = observed, 0 = missing (imputation target).
struct ObservationMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> m;

    ObservationMask() = default;
    ObservationMask(int r, int c, uint8_t fill = 1)
        : rows(r), cols(c), m(static_cast<size_t>(r) * c, fill) {}

    uint8_t at(int r, int c) const { return m[static_cast<size_t>(r) * cols + c]; }
    uint8_t& at(int r, int c) { return m[static_cast<size_t>(r) * cols + c]; }
    bool observed(int r, int c) const { return at(r, c) != 0; }

    size_t missing_count() const {
        size_t n = 0;
        for (uint8_t b : m) n += (b == 0);
        return n;
    }
};

struct RawSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

struct DataSplits {
    Dataset train;
    Dataset val;
    Dataset test;
    NormalizationStats stats;
};

/// Reads a comma-separated file with a header row. A leading "date" or
/// "timestamp" column (case-insensitive) becomes opaque labels. Throws
/// DataError naming the row and column on any malformed cell.
Dataset load_csv(const std::string& path);

/// Writes a dataset back out in the same CSV layout load_csv reads.
void save_csv(const Dataset& ds, const std::string& path);

/// Contiguous chronological pieces, no normalization; concatenating them
/// reproduces the input exactly. Sizes: train = floor(f0*T),
/// val = floor(f1*T), test = remainder.
RawSplits split_chronological(const Dataset& ds, double train_frac, double val_frac,
                              double test_frac);

/// split_chronological followed by z-scoring every split with statistics
/// taken from the train split alone.
DataSplits split_and_normalize(const Dataset& ds, double train_frac,
                               double val_frac, double test_frac);

/// Sliding windows at the given stride; empty result when the series is
/// shorter than L.
std::vector<TimeSeriesWindow> make_windows(const Dataset& ds, int seq_len, int stride);

enum class MaskMode { Bernoulli, Exact };

MaskMode mask_mode_from_string(const std::string& s);
std::string to_string(MaskMode m);

/// Independent Bernoulli mask: each element missing with probability `ratio`.
ObservationMask gen_mask(int rows, int cols, double ratio, Rng& rng);

/// Fixed-count variant: exactly round(ratio * rows * cols) entries missing.
ObservationMask gen_mask_exact(int rows, int cols, double ratio, Rng& rng);

ObservationMask gen_mask(int rows, int cols, double ratio, Rng& rng, MaskMode mode);

/// Sum of three sinusoids per channel plus Gaussian noise; the stand-in
/// dataset for desk-scale experiments.
Dataset synthetic_sinusoid_dataset(int timesteps, int channels, uint64_t seed,
                                   double noise_std = 0.1);

}  // namespace bridgets

#endif  // BRIDGETS_DATA_HPP
