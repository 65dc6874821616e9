#ifndef BRIDGETS_COMMON_HPP
#define BRIDGETS_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bridgets {

/// Raised for malformed or inconsistent input data (files, shapes, headers).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a computation produces non-finite values or diverges.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major L x C grid of doubles.
struct Array2 {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Array2() = default;
    Array2(int r, int c, double fill = 0.0)
        : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Array2& o) const { return rows == o.rows && cols == o.cols; }
};

/// Dense L x C x N tensor, slice index n fastest-varying.
struct Array3 {
    int rows = 0;   // L
    int cols = 0;   // C
    int depth = 0;  // N
    std::vector<double> v;

    Array3() = default;
    Array3(int r, int c, int n, double fill = 0.0)
        : rows(r), cols(c), depth(n),
          v(static_cast<size_t>(r) * static_cast<size_t>(c) * static_cast<size_t>(n), fill) {}

    double& at(int r, int c, int n) {
        return v[(static_cast<size_t>(r) * cols + c) * depth + n];
    }
    double at(int r, int c, int n) const {
        return v[(static_cast<size_t>(r) * cols + c) * depth + n];
    }
    size_t size() const { return v.size(); }
    bool same_shape(const Array3& o) const {
        return rows == o.rows && cols == o.cols && depth == o.depth;
    }
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline bool all_finite(const Array2& a) { return all_finite(a.v); }
inline bool all_finite(const Array3& a) { return all_finite(a.v); }

/// FNV-1a 64-bit hash, used for config fingerprints and stream derivation.
inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace bridgets

#endif  // BRIDGETS_COMMON_HPP
