#include "bridgets/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace bridgets {

namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

bool parse_double(const std::string& raw, double& out) {
    const std::string s = strip(raw);
    if (s.empty()) return false;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end) return false;
    return std::isfinite(out);
}

}  // namespace

void NormalizationStats::normalize(Array2& values) const {
    for (int r = 0; r < values.rows; ++r)
        for (int c = 0; c < values.cols; ++c)
            values.at(r, c) = (values.at(r, c) - mean[c]) / std[c];
}

void NormalizationStats::denormalize(Array2& values) const {
    for (int r = 0; r < values.rows; ++r)
        for (int c = 0; c < values.cols; ++c)
            values.at(r, c) = values.at(r, c) * std[c] + mean[c];
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");

    std::vector<std::string> header = split_line(line);
    if (header.empty()) throw DataError(path + ": empty header row");

    bool has_timestamps = false;
    {
        const std::string first = lowercase(strip(header.front()));
        has_timestamps = (first == "date" || first == "timestamp");
    }

    Dataset ds;
    const size_t first_value_col = has_timestamps ? 1 : 0;
    for (size_t i = first_value_col; i < header.size(); ++i) {
        const std::string name = strip(header[i]);
        if (name.empty()) throw DataError(path + ": empty channel name in header");
        if (std::find(ds.channel_names.begin(), ds.channel_names.end(), name) !=
            ds.channel_names.end())
            throw DataError(path + ": duplicate channel name '" + name + "'");
        ds.channel_names.push_back(name);
    }
    if (ds.channel_names.empty()) throw DataError(path + ": no value columns");

    const int cols = static_cast<int>(ds.channel_names.size());
    std::vector<double> flat;
    int row_number = 0;
    while (std::getline(in, line)) {
        if (strip(line).empty()) continue;
        ++row_number;
        std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size())
            throw DataError(path + ": row " + std::to_string(row_number) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        if (has_timestamps) ds.timestamps.push_back(strip(cells[0]));
        for (int c = 0; c < cols; ++c) {
            double x;
            if (!parse_double(cells[first_value_col + c], x))
                throw DataError(path + ": row " + std::to_string(row_number) +
                                ", column \"" + ds.channel_names[c] +
                                "\": not a finite number: '" +
                                strip(cells[first_value_col + c]) + "'");
            flat.push_back(x);
        }
    }
    if (row_number == 0) throw DataError(path + ": no data rows");

    ds.values.rows = row_number;
    ds.values.cols = cols;
    ds.values.v = std::move(flat);
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write data file: " + path);
    const bool stamped = !ds.timestamps.empty();
    if (stamped) out << "date,";
    for (size_t c = 0; c < ds.channel_names.size(); ++c)
        out << ds.channel_names[c] << (c + 1 < ds.channel_names.size() ? "," : "\n");
    out.precision(17);
    for (int r = 0; r < ds.values.rows; ++r) {
        if (stamped) out << ds.timestamps[r] << ",";
        for (int c = 0; c < ds.values.cols; ++c)
            out << ds.values.at(r, c) << (c + 1 < ds.values.cols ? "," : "\n");
    }
}

RawSplits split_chronological(const Dataset& ds, double train_frac, double val_frac,
                              double test_frac) {
    if (!(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0))
        throw std::invalid_argument("split fractions must be positive");
    if (std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must sum to 1");

    const int total = ds.length();
    const int n_train = static_cast<int>(std::floor(train_frac * total));
    const int n_val = static_cast<int>(std::floor(val_frac * total));
    const int n_test = total - n_train - n_val;
    if (n_train <= 0 || n_val <= 0 || n_test <= 0)
        throw DataError("split produced an empty piece (T=" + std::to_string(total) + ")");

    auto slice = [&ds](int begin, int count) {
        Dataset out;
        out.channel_names = ds.channel_names;
        out.values = Array2(count, ds.channels());
        for (int r = 0; r < count; ++r)
            for (int c = 0; c < ds.channels(); ++c)
                out.values.at(r, c) = ds.values.at(begin + r, c);
        if (!ds.timestamps.empty())
            out.timestamps.assign(ds.timestamps.begin() + begin,
                                  ds.timestamps.begin() + begin + count);
        return out;
    };

    RawSplits raw;
    raw.train = slice(0, n_train);
    raw.val = slice(n_train, n_val);
    raw.test = slice(n_train + n_val, n_test);
    return raw;
}

DataSplits split_and_normalize(const Dataset& ds, double train_frac,
                               double val_frac, double test_frac) {
    RawSplits raw = split_chronological(ds, train_frac, val_frac, test_frac);

    DataSplits s;
    s.train = std::move(raw.train);
    s.val = std::move(raw.val);
    s.test = std::move(raw.test);

    const int c_count = ds.channels();
    const int n_train = s.train.length();
    s.stats.mean.assign(c_count, 0.0);
    s.stats.std.assign(c_count, 0.0);
    for (int c = 0; c < c_count; ++c) {
        double sum = 0.0;
        for (int r = 0; r < n_train; ++r) sum += s.train.values.at(r, c);
        const double mu = sum / n_train;
        double sq = 0.0;
        for (int r = 0; r < n_train; ++r) {
            const double d = s.train.values.at(r, c) - mu;
            sq += d * d;
        }
        s.stats.mean[c] = mu;
        s.stats.std[c] = std::max(std::sqrt(sq / n_train), 1e-8);
    }

    s.stats.normalize(s.train.values);
    s.stats.normalize(s.val.values);
    s.stats.normalize(s.test.values);
    return s;
}

std::vector<TimeSeriesWindow> make_windows(const Dataset& ds, int seq_len, int stride) {
    if (seq_len < 2) throw std::invalid_argument("seq_len must be >= 2");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    std::vector<TimeSeriesWindow> out;
    for (int start = 0; start + seq_len <= ds.length(); start += stride) {
        TimeSeriesWindow w;
        w.start_index = start;
        w.values = Array2(seq_len, ds.channels());
        for (int r = 0; r < seq_len; ++r)
            for (int c = 0; c < ds.channels(); ++c)
                w.values.at(r, c) = ds.values.at(start + r, c);
        out.push_back(std::move(w));
    }
    return out;
}

MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "bernoulli") return MaskMode::Bernoulli;
    if (s == "exact") return MaskMode::Exact;
    throw std::invalid_argument("unknown mask mode: " + s);
}

std::string to_string(MaskMode m) {
    return m == MaskMode::Bernoulli ? "bernoulli" : "exact";
}

ObservationMask gen_mask(int rows, int cols, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw std::invalid_argument("mask ratio must lie in [0, 1]");
    ObservationMask mask(rows, cols, 1);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (rng.uniform() < ratio) mask.at(r, c) = 0;
    return mask;
}

ObservationMask gen_mask_exact(int rows, int cols, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw std::invalid_argument("mask ratio must lie in [0, 1]");
    const size_t total = static_cast<size_t>(rows) * cols;
    const size_t missing = static_cast<size_t>(std::llround(ratio * static_cast<double>(total)));
    std::vector<size_t> idx(total);
    std::iota(idx.begin(), idx.end(), size_t{0});
    // Partial Fisher-Yates: the first `missing` slots end up uniform without
    // shuffling the whole grid.
    for (size_t i = 0; i < missing; ++i) {
        const size_t j = i + static_cast<size_t>(rng.below(total - i));
        std::swap(idx[i], idx[j]);
    }
    ObservationMask mask(rows, cols, 1);
    for (size_t i = 0; i < missing; ++i) mask.m[idx[i]] = 0;
    return mask;
}

ObservationMask gen_mask(int rows, int cols, double ratio, Rng& rng, MaskMode mode) {
    return mode == MaskMode::Bernoulli ? gen_mask(rows, cols, ratio, rng)
                                       : gen_mask_exact(rows, cols, ratio, rng);
}

Dataset synthetic_sinusoid_dataset(int timesteps, int channels, uint64_t seed,
                                   double noise_std) {
    Dataset ds;
    ds.values = Array2(timesteps, channels);
    Rng rng = Rng::derive(seed, "synthetic-sinusoid");
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (int c = 0; c < channels; ++c) {
        ds.channel_names.push_back("ch" + std::to_string(c));
        // Three incommensurate-ish periods per channel, random phase/weight.
        const double periods[3] = {24.0 + 8.0 * c, 48.0 + 4.0 * c, 96.0};
        double weight[3], phase[3];
        for (int k = 0; k < 3; ++k) {
            weight[k] = 0.5 + rng.uniform();
            phase[k] = two_pi * rng.uniform();
        }
        for (int r = 0; r < timesteps; ++r) {
            double x = 0.0;
            for (int k = 0; k < 3; ++k)
                x += weight[k] * std::sin(two_pi * r / periods[k] + phase[k]);
            ds.values.at(r, c) = x + noise_std * rng.normal();
        }
    }
    return ds;
}

}  // namespace bridgets
