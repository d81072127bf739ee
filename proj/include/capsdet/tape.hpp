#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <vector>

#include "capsdet/tensor.hpp"

namespace capsdet {

class Tape;

// Handle to a tape node. Cheap to copy; valid for the lifetime of its tape.
struct Var {
    Tape* tape = nullptr;
    int32_t id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    int rank() const { return value().rank(); }
    bool defined() const { return tape != nullptr && id >= 0; }
};

enum class Op : uint8_t {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    SumAll,
    Sum,
    Mean,
    Max,
    Softmax,
    Reshape,
    Transpose,
    Slice,
    Concat,
    Broadcast,
    Unfold,
    Stencil,
};

// Sparse affine map out = base + scatter(weight * x[in_idx] -> out_idx).
// Backs patch application and bilinear resize: both are linear in the
// differentiable input with a constant background.
struct StencilPlan {
    Shape out_shape;
    int64_t in_numel = 0;          // expected flat size of the input
    Tensor base;                   // copied into the output before scatter
    std::vector<int64_t> out_idx;  // parallel arrays, fixed iteration order
    std::vector<int64_t> in_idx;
    std::vector<double> weight;
};

struct Node {
    Op op = Op::Input;
    std::vector<int32_t> inputs;
    Tensor value;
    bool requires_grad = false;

    // Op-specific attributes.
    int axis = 0;
    bool keepdim = false;
    std::vector<int> iattr;            // perm / slice start / unfold params
    std::vector<int> iattr2;           // slice sizes
    std::vector<int64_t> arg_cache;    // argmax positions for Max backward
    std::shared_ptr<const StencilPlan> plan;
};

// Record of primitive operations in topological (creation) order, plus the
// reverse-mode sweep. One tape per forward pass; single writer during
// construction.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return input(std::move(value), false); }
    Var scalar(double v) { return constant(Tensor::scalar(v)); }

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Visits each node exactly once in
    // reverse creation order; grads accumulate in fixed input order, so a
    // given graph always produces bit-identical gradients. With retain_all
    // false, intermediate grads are released as soon as they are consumed and
    // only Input-node grads survive the sweep.
    void backward(Var loss, bool retain_all = false);

    // Gradient of the last backward() w.r.t. a node. Zero tensor if the node
    // did not participate; throws if the grad was released by retain_all=false.
    const Tensor& grad(Var v);

    Var emit(Node node);
    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

  private:
    // deque: element addresses are stable across emit(), so references returned
    // by value()/node() stay valid while the graph grows.
    std::deque<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<uint8_t> grad_set_;
    bool has_grads_ = false;

    void accumulate(int32_t id, Tensor contribution);
    void backward_node(int32_t id);

    friend struct Var;
};

// ---- primitives -----------------------------------------------------------
// Binary elementwise ops broadcast NumPy-style (right-aligned, extents equal
// or 1). Reductions take one axis; negative axes count from the back.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var sqrt(Var x);

Var sum(Var x);  // all axes -> rank-0
Var sum(Var x, int axis, bool keepdim = false);
Var mean(Var x, int axis, bool keepdim = false);
Var max(Var x, int axis, bool keepdim = false);
Var softmax(Var x, int axis);

Var reshape(Var x, Shape shape);
Var transpose(Var x, std::vector<int> perm);
Var slice(Var x, const std::vector<int>& start, const std::vector<int>& size);
Var concat(const std::vector<Var>& parts, int axis);
Var broadcast_to(Var x, const Shape& shape);

// Batched matrix product with NumPy semantics: both operands rank >= 2, the
// last two axes are the matrix dims, leading axes broadcast.
Var matmul(Var a, Var b);

// Sliding windows over the two spatial axes of [N, H, W, rest...] ->
// [N, OH, OW, kh*kw, rest...], zero-padded. conv2d and maxpool build on it.
Var unfold(Var x, int kh, int kw, int stride_h, int stride_w, int pad_h, int pad_w);

Var stencil_affine(Var x, std::shared_ptr<const StencilPlan> plan);
// Forward-only application of a plan to a raw tensor (evaluation path).
Tensor stencil_affine_tensor(const Tensor& x, const StencilPlan& plan);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);
inline Var operator-(Var x) { return x * -1.0; }

}  // namespace capsdet
