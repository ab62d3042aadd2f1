#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <stdexcept>
#include <string>
#include <vector>

namespace objcustom {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. Spatial activations are stored as
// [N*H*W x C] (NHWC flattened), token sequences as [tokens x width].
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0);
    Tensor(int r, int c, std::initializer_list<double> values);

    static Tensor row_vector(std::span<const double> v);

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int r) const { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;

    Tensor slice_rows(int start, int count) const;
    Tensor transposed() const;
    bool all_finite() const;
};

void require_shape(bool ok, const std::string& what);

Tensor randn(int rows, int cols, std::mt19937_64& rng, double stddev = 1.0);
Tensor concat_rows(const std::vector<Tensor>& parts);

double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_sq(const Tensor& a);

// FNV-1a; stable across platforms, used to seed per-word embeddings.
std::uint64_t stable_hash(std::string_view s);

}  // namespace objcustom
