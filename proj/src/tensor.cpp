#include "cafeme/tensor.hpp"

#include <cmath>
#include <sstream>

namespace cafeme {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
    return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 1;
    return shape_.back();
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor one_hot(std::span<const int> targets, std::size_t n_classes) {
    Tensor out(Shape{targets.size(), n_classes});
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n_classes) {
            throw std::out_of_range("class index " + std::to_string(targets[i]) + " outside [0, " +
                                    std::to_string(n_classes) + ")");
        }
        out.at(i, static_cast<std::size_t>(targets[i])) = 1.0;
    }
    return out;
}

void axpy(Tensor& x, double scale, const Tensor& y) {
    if (!x.same_shape(y)) {
        throw ShapeError("axpy shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * y[i];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("compare shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool all_finite(const Tensor& t) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace cafeme
