#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace capsdet {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
// Row-major strides for a shape (stride of last dim is 1).
std::vector<int64_t> row_major_strides(const Shape& shape);

// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar holding
// one element, so shape product always equals data length. This is a plain
// value type; differentiable math lives on the Tape.
class Tensor {
  public:
    Tensor() : data_(1, 0.0) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    // Extent of an axis; negative axes count from the back.
    int dim(int axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(std::initializer_list<int> idx);
    double at(std::initializer_list<int> idx) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    void fill(double v);
    bool all_finite() const;
    double item() const;  // sole element; throws unless size()==1

    Tensor reshaped(Shape shape) const;

  private:
    Shape shape_;  // empty = scalar
    std::vector<double> data_;
};

// Argmax along the last axis of a [rows, k] tensor; ties break to the lowest
// index. Used for predictions and must stay deterministic.
std::vector<int> argmax_rows(const Tensor& t);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace capsdet
