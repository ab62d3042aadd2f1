#include "objcustom/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace objcustom {

Tensor::Tensor(int r, int c, double fill) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw ShapeError("negative tensor dimension");
    data.assign(static_cast<std::size_t>(r) * c, fill);
}

Tensor::Tensor(int r, int c, std::initializer_list<double> values) : rows(r), cols(c), data(values) {
    if (data.size() != static_cast<std::size_t>(r) * c)
        throw ShapeError("initializer size does not match " + std::to_string(r) + "x" + std::to_string(c));
}

Tensor Tensor::row_vector(std::span<const double> v) {
    Tensor t(1, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), t.data.begin());
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[" << rows << "x" << cols << "]";
    return os.str();
}

Tensor Tensor::slice_rows(int start, int count) const {
    if (start < 0 || count < 0 || start + count > rows)
        throw ShapeError("row slice out of range for " + shape_str());
    Tensor out(count, cols);
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(start) * cols,
                static_cast<std::size_t>(count) * cols, out.data.begin());
    return out;
}

Tensor Tensor::transposed() const {
    Tensor out(cols, rows);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out(c, r) = (*this)(r, c);
    return out;
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

Tensor randn(int rows, int cols, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(rows, cols);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) return {};
    int rows = 0;
    const int cols = parts.front().cols;
    for (const auto& p : parts) {
        require_shape(p.cols == cols, "concat_rows: column mismatch");
        rows += p.rows;
    }
    Tensor out(rows, cols);
    auto it = out.data.begin();
    for (const auto& p : parts) it = std::copy(p.data.begin(), p.data.end(), it);
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_shape(a.same_shape(b), "max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double frobenius_sq(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return s;
}

std::uint64_t stable_hash(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace objcustom
