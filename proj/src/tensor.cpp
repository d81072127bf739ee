#include "capsdet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "capsdet/errors.hpp"

namespace capsdet {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> strides(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        strides[static_cast<size_t>(i)] = acc;
        acc *= shape[static_cast<size_t>(i)];
    }
    return strides;
}

namespace {
void validate_shape(const Shape& shape) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("extents must be positive, got " + shape_str(shape));
    }
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

int Tensor::dim(int axis) const {
    int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    return shape_[static_cast<size_t>(axis)];
}

namespace {
int64_t flat_index(const Shape& shape, std::initializer_list<int> idx) {
    if (idx.size() != shape.size())
        throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor " +
                         shape_str(shape));
    int64_t flat = 0;
    size_t d = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape[d]) throw ShapeError("index out of bounds");
        flat = flat * shape[d] + i;
        ++d;
    }
    return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<int> idx) {
    return data_[static_cast<size_t>(flat_index(shape_, idx))];
}

double Tensor::at(std::initializer_list<int> idx) const {
    return data_[static_cast<size_t>(flat_index(shape_, idx))];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

std::vector<int> argmax_rows(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError("argmax_rows expects rank 2, got " + shape_str(t.shape()));
    int rows = t.dim(0), cols = t.dim(1);
    std::vector<int> out(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const double* row = t.data() + static_cast<int64_t>(r) * cols;
        int best = 0;
        for (int c = 1; c < cols; ++c)
            if (row[c] > row[best]) best = c;  // strict > keeps the lowest index on ties
        out[static_cast<size_t>(r)] = best;
    }
    return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace capsdet
