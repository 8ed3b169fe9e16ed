#include "mft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mft/error.hpp"

namespace mft {

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace {

void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
}

} // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("shape " + to_string(shape_) + " holds " + std::to_string(element_count(shape_)) +
                         " elements but " + std::to_string(data_.size()) + " values were given");
    }
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data_) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data_) v = dist(rng);
    return t;
}

std::size_t Tensor::rows() const noexcept {
    return shape_.size() <= 1 ? 1 : shape_.front();
}

std::size_t Tensor::cols() const noexcept {
    if (shape_.empty()) return 0;
    if (shape_.size() == 1) return shape_.front();
    return data_.size() / shape_.front();
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape_));
    return data_.front();
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace mft
