#include "capsdet/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "capsdet/errors.hpp"

namespace capsdet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string(what) + " produced non-finite values");
}

Shape bcast_shapes(const Shape& a, const Shape& b, const char* what) {
    int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    int r = std::max(ra, rb);
    Shape out(static_cast<size_t>(r));
    for (int d = 0; d < r; ++d) {
        int da = d - (r - ra), db = d - (r - rb);
        int ea = da < 0 ? 1 : a[static_cast<size_t>(da)];
        int eb = db < 0 ? 1 : b[static_cast<size_t>(db)];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError(std::string(what) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        out[static_cast<size_t>(d)] = std::max(ea, eb);
    }
    return out;
}

// Strides of `s` right-aligned into `out`, 0 on broadcast axes.
std::vector<int64_t> bcast_strides(const Shape& s, const Shape& out) {
    auto nat = row_major_strides(s);
    int rs = static_cast<int>(s.size()), ro = static_cast<int>(out.size());
    std::vector<int64_t> st(static_cast<size_t>(ro), 0);
    for (int d = 0; d < ro; ++d) {
        int ds = d - (ro - rs);
        if (ds >= 0 && s[static_cast<size_t>(ds)] != 1) st[static_cast<size_t>(d)] = nat[static_cast<size_t>(ds)];
    }
    return st;
}

template <class F>
Tensor binary_bcast(const Tensor& a, const Tensor& b, F f, const char* what) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        const double* ap = a.data();
        const double* bp = b.data();
        double* op = out.data();
        int64_t n = a.size();
        for (int64_t i = 0; i < n; ++i) op[i] = f(ap[i], bp[i]);
        return out;
    }
    Shape os = bcast_shapes(a.shape(), b.shape(), what);
    Tensor out(os);
    auto sa = bcast_strides(a.shape(), os);
    auto sb = bcast_strides(b.shape(), os);
    int r = static_cast<int>(os.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    int64_t n = out.size(), ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        op[i] = f(ap[ia], bp[ib]);
        for (int d = r - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            if (++idx[ud] < os[ud]) {
                ia += sa[ud];
                ib += sb[ud];
                break;
            }
            idx[ud] = 0;
            ia -= sa[ud] * (os[ud] - 1);
            ib -= sb[ud] * (os[ud] - 1);
        }
    }
    return out;
}

struct AxisView {
    int axis;
    int64_t outer, k, inner;
};

AxisView axis_view(const Shape& s, int axis, const char* what) {
    int r = static_cast<int>(s.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError(std::string(what) + ": axis out of range for " + shape_str(s));
    AxisView v{axis, 1, s[static_cast<size_t>(axis)], 1};
    for (int d = 0; d < axis; ++d) v.outer *= s[static_cast<size_t>(d)];
    for (int d = axis + 1; d < r; ++d) v.inner *= s[static_cast<size_t>(d)];
    return v;
}

Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
    Shape out = s;
    if (keepdim) {
        out[static_cast<size_t>(axis)] = 1;
    } else {
        out.erase(out.begin() + axis);
    }
    return out;
}

Tensor sum_axis_tensor(const Tensor& t, int axis, bool keepdim) {
    AxisView v = axis_view(t.shape(), axis, "sum");
    Tensor out(reduced_shape(t.shape(), v.axis, keepdim));
    const double* in = t.data();
    double* o = out.data();
    for (int64_t a = 0; a < v.outer; ++a) {
        double* obase = o + a * v.inner;
        for (int64_t kk = 0; kk < v.k; ++kk) {
            const double* ibase = in + (a * v.k + kk) * v.inner;
            for (int64_t i = 0; i < v.inner; ++i) obase[i] += ibase[i];
        }
    }
    return out;
}

// Sums grad down to `target` (inverse of broadcasting).
Tensor reduce_to_shape(Tensor g, const Shape& target) {
    if (g.shape() == target) return g;
    int r = g.rank(), rt = static_cast<int>(target.size());
    Tensor cur = std::move(g);
    for (int d = 0; d < r; ++d) {
        int td = d - (r - rt);
        int want = td < 0 ? 1 : target[static_cast<size_t>(td)];
        if (cur.shape()[static_cast<size_t>(d)] != want) {
            cur = sum_axis_tensor(cur, d, /*keepdim=*/true);
        }
    }
    return cur.reshaped(target);
}

Tensor transpose_tensor(const Tensor& t, const std::vector<int>& perm) {
    int r = t.rank();
    if (static_cast<int>(perm.size()) != r) throw ShapeError("transpose: perm rank mismatch");
    std::vector<bool> seen(static_cast<size_t>(r), false);
    Shape os(static_cast<size_t>(r));
    for (int d = 0; d < r; ++d) {
        int p = perm[static_cast<size_t>(d)];
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)])
            throw ShapeError("transpose: invalid permutation");
        seen[static_cast<size_t>(p)] = true;
        os[static_cast<size_t>(d)] = t.shape()[static_cast<size_t>(p)];
    }
    Tensor out(os);
    auto in_strides = row_major_strides(t.shape());
    std::vector<int64_t> walk(static_cast<size_t>(r));
    for (int d = 0; d < r; ++d) walk[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    std::vector<int> idx(static_cast<size_t>(r), 0);
    const double* in = t.data();
    double* o = out.data();
    int64_t n = out.size(), ii = 0;
    for (int64_t i = 0; i < n; ++i) {
        o[i] = in[ii];
        for (int d = r - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            if (++idx[ud] < os[ud]) {
                ii += walk[ud];
                break;
            }
            idx[ud] = 0;
            ii -= walk[ud] * (os[ud] - 1);
        }
    }
    return out;
}

std::vector<int> identity_perm_swapped_last2(int rank) {
    std::vector<int> perm(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(rank - 2)], perm[static_cast<size_t>(rank - 1)]);
    return perm;
}

Tensor matmul_tensor(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must be rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    int m = a.dim(-2), ka = a.dim(-1);
    int kb = b.dim(-2), n = b.dim(-1);
    if (ka != kb)
        throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    Shape batch = bcast_shapes(abatch, bbatch, "matmul");
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    Tensor out(os);

    auto sa = bcast_strides(abatch, batch);
    auto sb = bcast_strides(bbatch, batch);
    int64_t a_block = static_cast<int64_t>(m) * ka;
    int64_t b_block = static_cast<int64_t>(kb) * n;
    int64_t o_block = static_cast<int64_t>(m) * n;
    int r = static_cast<int>(batch.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int64_t batches = shape_numel(batch), ia = 0, ib = 0;
    for (int64_t i = 0; i < batches; ++i) {
        MutMap(out.data() + i * o_block, m, n).noalias() =
            ConstMap(a.data() + ia * a_block, m, ka) * ConstMap(b.data() + ib * b_block, kb, n);
        for (int d = r - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            if (++idx[ud] < batch[ud]) {
                ia += sa[ud];
                ib += sb[ud];
                break;
            }
            idx[ud] = 0;
            ia -= sa[ud] * (batch[ud] - 1);
            ib -= sb[ud] * (batch[ud] - 1);
        }
    }
    return out;
}

struct UnfoldDims {
    int n, h, w, oh, ow;
    int64_t rest;
};

UnfoldDims unfold_dims(const Shape& s, int kh, int kw, int sh, int sw, int ph, int pw) {
    if (s.size() < 3) throw ShapeError("unfold: input must be [N,H,W,...], got " + shape_str(s));
    if (kh <= 0 || kw <= 0 || sh <= 0 || sw <= 0 || ph < 0 || pw < 0)
        throw ShapeError("unfold: bad kernel/stride/pad");
    UnfoldDims d{};
    d.n = s[0];
    d.h = s[1];
    d.w = s[2];
    d.rest = 1;
    for (size_t i = 3; i < s.size(); ++i) d.rest *= s[i];
    int eh = d.h + 2 * ph - kh, ew = d.w + 2 * pw - kw;
    if (eh < 0 || ew < 0) throw ShapeError("unfold: kernel larger than padded input");
    d.oh = eh / sh + 1;
    d.ow = ew / sw + 1;
    return d;
}

}  // namespace

// ---- Tape core -------------------------------------------------------------

const Tensor& Var::value() const {
    if (!defined()) throw ContractError("use of undefined Var");
    return tape->value(*this);
}

Var Tape::input(Tensor value, bool requires_grad) {
    check_finite(value, "input");
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int32_t>(nodes_.size()))
        throw ContractError("Var does not belong to this tape");
    return nodes_[static_cast<size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

Var Tape::emit(Node node) {
    check_finite(node.value, "op");
    for (int32_t in : node.inputs) {
        if (in < 0 || in >= static_cast<int32_t>(nodes_.size()))
            throw ContractError("emit: input not on tape");
        node.requires_grad = node.requires_grad || nodes_[static_cast<size_t>(in)].requires_grad;
    }
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

void Tape::accumulate(int32_t id, Tensor contribution) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    size_t uid = static_cast<size_t>(id);
    if (grad_set_[uid] == 0) {
        if (contribution.shape() != n.value.shape())
            throw ShapeError("internal: grad shape mismatch");
        grads_[uid] = std::move(contribution);
        grad_set_[uid] = 1;
        return;
    }
    Tensor& g = grads_[uid];
    const double* c = contribution.data();
    double* gp = g.data();
    int64_t sz = g.size();
    for (int64_t i = 0; i < sz; ++i) gp[i] += c[i];
}

const Tensor& Tape::grad(Var v) {
    if (v.tape != this) throw ContractError("Var does not belong to this tape");
    if (!has_grads_) throw ContractError("grad requested before backward");
    size_t id = static_cast<size_t>(v.id);
    if (grad_set_[id] == 2)
        throw ContractError("grad was released; run backward with retain_all=true");
    if (grad_set_[id] == 0) {
        grads_[id] = Tensor::zeros(nodes_[id].value.shape());
        grad_set_[id] = 1;
    }
    return grads_[id];
}

void Tape::backward(Var loss, bool retain_all) {
    if (loss.tape != this) throw ContractError("loss Var does not belong to this tape");
    if (loss.value().size() != 1) throw ContractError("backward needs a scalar loss");
    grads_.assign(nodes_.size(), Tensor());
    grad_set_.assign(nodes_.size(), 0);
    has_grads_ = true;
    size_t lid = static_cast<size_t>(loss.id);
    if (!nodes_[lid].requires_grad) return;  // nothing trainable upstream
    grads_[lid] = Tensor::ones(nodes_[lid].value.shape());
    grad_set_[lid] = 1;
    for (int32_t id = loss.id; id >= 0; --id) {
        size_t uid = static_cast<size_t>(id);
        if (grad_set_[uid] != 1) continue;
        const Node& n = nodes_[uid];
        if (n.op != Op::Input) {
            check_finite(grads_[uid], "backward");
            backward_node(id);
            if (!retain_all) {
                grads_[uid] = Tensor();
                grad_set_[uid] = 2;
            }
        }
    }
}

// ---- free-function primitives ----------------------------------------------

namespace {

Tape* common_tape(Var a, Var b, const char* what) {
    if (!a.defined() || !b.defined() || a.tape != b.tape)
        throw ContractError(std::string(what) + ": operands must share a tape");
    return a.tape;
}

Var emit_simple(Tape* t, Op op, std::vector<int32_t> inputs, Tensor value) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    return t->emit(std::move(n));
}

template <class F>
Var unary_op(Var x, Op op, F f, const char* what) {
    if (!x.defined()) throw ContractError(std::string(what) + ": undefined operand");
    const Tensor& in = x.value();
    Tensor out(in.shape());
    const double* ip = in.data();
    double* op_ = out.data();
    int64_t n = in.size();
    for (int64_t i = 0; i < n; ++i) op_[i] = f(ip[i]);
    return emit_simple(x.tape, op, {x.id}, std::move(out));
}

}  // namespace

Var add(Var a, Var b) {
    Tape* t = common_tape(a, b, "add");
    return emit_simple(t, Op::Add, {a.id, b.id},
                       binary_bcast(a.value(), b.value(), [](double x, double y) { return x + y; }, "add"));
}

Var sub(Var a, Var b) {
    Tape* t = common_tape(a, b, "sub");
    return emit_simple(t, Op::Sub, {a.id, b.id},
                       binary_bcast(a.value(), b.value(), [](double x, double y) { return x - y; }, "sub"));
}

Var mul(Var a, Var b) {
    Tape* t = common_tape(a, b, "mul");
    return emit_simple(t, Op::Mul, {a.id, b.id},
                       binary_bcast(a.value(), b.value(), [](double x, double y) { return x * y; }, "mul"));
}

Var div(Var a, Var b) {
    Tape* t = common_tape(a, b, "div");
    return emit_simple(t, Op::Div, {a.id, b.id},
                       binary_bcast(a.value(), b.value(), [](double x, double y) { return x / y; }, "div"));
}

Var tanh(Var x) {
    return unary_op(x, Op::Tanh, [](double v) { return std::tanh(v); }, "tanh");
}

Var sigmoid(Var x) {
    return unary_op(x, Op::Sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, "sigmoid");
}

Var relu(Var x) {
    return unary_op(x, Op::Relu, [](double v) { return v > 0.0 ? v : 0.0; }, "relu");
}

Var exp(Var x) {
    return unary_op(x, Op::Exp, [](double v) { return std::exp(v); }, "exp");
}

Var log(Var x) {
    const Tensor& in = x.value();
    for (int64_t i = 0; i < in.size(); ++i)
        if (in[i] <= 0.0) throw DomainError("log of non-positive value");
    return unary_op(x, Op::Log, [](double v) { return std::log(v); }, "log");
}

Var square(Var x) {
    return unary_op(x, Op::Square, [](double v) { return v * v; }, "square");
}

Var sqrt(Var x) {
    const Tensor& in = x.value();
    for (int64_t i = 0; i < in.size(); ++i)
        if (in[i] < 0.0) throw DomainError("sqrt of negative value");
    return unary_op(x, Op::Sqrt, [](double v) { return std::sqrt(v); }, "sqrt");
}

Var sum(Var x) {
    const Tensor& in = x.value();
    double acc = 0.0;
    for (int64_t i = 0; i < in.size(); ++i) acc += in[i];
    return emit_simple(x.tape, Op::SumAll, {x.id}, Tensor::scalar(acc));
}

Var sum(Var x, int axis, bool keepdim) {
    AxisView v = axis_view(x.value().shape(), axis, "sum");
    Node n;
    n.op = Op::Sum;
    n.inputs = {x.id};
    n.axis = v.axis;
    n.keepdim = keepdim;
    n.value = sum_axis_tensor(x.value(), v.axis, keepdim);
    return x.tape->emit(std::move(n));
}

Var mean(Var x, int axis, bool keepdim) {
    AxisView v = axis_view(x.value().shape(), axis, "mean");
    Tensor s = sum_axis_tensor(x.value(), v.axis, keepdim);
    double inv = 1.0 / static_cast<double>(v.k);
    for (int64_t i = 0; i < s.size(); ++i) s[i] *= inv;
    Node n;
    n.op = Op::Mean;
    n.inputs = {x.id};
    n.axis = v.axis;
    n.keepdim = keepdim;
    n.value = std::move(s);
    return x.tape->emit(std::move(n));
}

Var max(Var x, int axis, bool keepdim) {
    AxisView v = axis_view(x.value().shape(), axis, "max");
    const Tensor& in = x.value();
    Tensor out(reduced_shape(in.shape(), v.axis, keepdim));
    std::vector<int64_t> args(static_cast<size_t>(v.outer * v.inner));
    const double* ip = in.data();
    double* op = out.data();
    for (int64_t a = 0; a < v.outer; ++a) {
        for (int64_t i = 0; i < v.inner; ++i) {
            int64_t best_k = 0;
            double best = ip[(a * v.k) * v.inner + i];
            for (int64_t kk = 1; kk < v.k; ++kk) {
                double cand = ip[(a * v.k + kk) * v.inner + i];
                if (cand > best) {  // strict: first max wins
                    best = cand;
                    best_k = kk;
                }
            }
            op[a * v.inner + i] = best;
            args[static_cast<size_t>(a * v.inner + i)] = (a * v.k + best_k) * v.inner + i;
        }
    }
    Node n;
    n.op = Op::Max;
    n.inputs = {x.id};
    n.axis = v.axis;
    n.keepdim = keepdim;
    n.arg_cache = std::move(args);
    n.value = std::move(out);
    return x.tape->emit(std::move(n));
}

Var softmax(Var x, int axis) {
    AxisView v = axis_view(x.value().shape(), axis, "softmax");
    const Tensor& in = x.value();
    Tensor out(in.shape());
    const double* ip = in.data();
    double* op = out.data();
    for (int64_t a = 0; a < v.outer; ++a) {
        for (int64_t i = 0; i < v.inner; ++i) {
            int64_t base = a * v.k * v.inner + i;
            double m = ip[base];
            for (int64_t kk = 1; kk < v.k; ++kk) m = std::max(m, ip[base + kk * v.inner]);
            double z = 0.0;
            for (int64_t kk = 0; kk < v.k; ++kk) {
                double e = std::exp(ip[base + kk * v.inner] - m);
                op[base + kk * v.inner] = e;
                z += e;
            }
            double inv = 1.0 / z;
            for (int64_t kk = 0; kk < v.k; ++kk) op[base + kk * v.inner] *= inv;
        }
    }
    Node n;
    n.op = Op::Softmax;
    n.inputs = {x.id};
    n.axis = v.axis;
    n.value = std::move(out);
    return x.tape->emit(std::move(n));
}

Var reshape(Var x, Shape shape) {
    Node n;
    n.op = Op::Reshape;
    n.inputs = {x.id};
    n.value = x.value().reshaped(std::move(shape));
    return x.tape->emit(std::move(n));
}

Var transpose(Var x, std::vector<int> perm) {
    Node n;
    n.op = Op::Transpose;
    n.inputs = {x.id};
    n.value = transpose_tensor(x.value(), perm);
    n.iattr = std::move(perm);
    return x.tape->emit(std::move(n));
}

Var slice(Var x, const std::vector<int>& start, const std::vector<int>& size) {
    const Tensor& in = x.value();
    int r = in.rank();
    if (static_cast<int>(start.size()) != r || static_cast<int>(size.size()) != r)
        throw ShapeError("slice: start/size rank mismatch");
    Shape os(static_cast<size_t>(r));
    for (int d = 0; d < r; ++d) {
        size_t ud = static_cast<size_t>(d);
        if (start[ud] < 0 || size[ud] <= 0 || start[ud] + size[ud] > in.shape()[ud])
            throw ShapeError("slice: window out of bounds for " + shape_str(in.shape()));
        os[ud] = size[ud];
    }
    Tensor out(os);
    auto in_strides = row_major_strides(in.shape());
    // Walk all but the last axis; copy contiguous runs along it.
    int64_t run = os[static_cast<size_t>(r - 1)];
    int64_t rows = out.size() / run;
    std::vector<int> idx(static_cast<size_t>(r), 0);
    const double* ip = in.data();
    double* op = out.data();
    for (int64_t row = 0; row < rows; ++row) {
        int64_t off = 0;
        for (int d = 0; d < r; ++d)
            off += (start[static_cast<size_t>(d)] + idx[static_cast<size_t>(d)]) *
                   in_strides[static_cast<size_t>(d)];
        std::memcpy(op + row * run, ip + off, sizeof(double) * static_cast<size_t>(run));
        for (int d = r - 2; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            if (++idx[ud] < os[ud]) break;
            idx[ud] = 0;
        }
    }
    Node n;
    n.op = Op::Slice;
    n.inputs = {x.id};
    n.iattr = start;
    n.iattr2 = size;
    n.value = std::move(out);
    return x.tape->emit(std::move(n));
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no parts");
    Tape* t = parts[0].tape;
    const Shape& s0 = parts[0].value().shape();
    AxisView v0 = axis_view(s0, axis, "concat");
    int total = 0;
    std::vector<int32_t> inputs;
    for (const Var& p : parts) {
        if (p.tape != t) throw ContractError("concat: operands must share a tape");
        const Shape& s = p.value().shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != v0.axis && s[d] != s0[d])
                throw ShapeError("concat: shapes differ off-axis");
        total += s[static_cast<size_t>(v0.axis)];
        inputs.push_back(p.id);
    }
    Shape os = s0;
    os[static_cast<size_t>(v0.axis)] = total;
    Tensor out(os);
    double* op = out.data();
    int64_t out_block = static_cast<int64_t>(total) * v0.inner;
    int64_t written = 0;
    for (const Var& p : parts) {
        const Tensor& in = p.value();
        int64_t k = in.shape()[static_cast<size_t>(v0.axis)];
        int64_t in_block = k * v0.inner;
        const double* ip = in.data();
        for (int64_t a = 0; a < v0.outer; ++a)
            std::memcpy(op + a * out_block + written, ip + a * in_block,
                        sizeof(double) * static_cast<size_t>(in_block));
        written += in_block;
    }
    Node n;
    n.op = Op::Concat;
    n.inputs = std::move(inputs);
    n.axis = v0.axis;
    n.value = std::move(out);
    return t->emit(std::move(n));
}

Var broadcast_to(Var x, const Shape& shape) {
    const Tensor& in = x.value();
    Shape check = bcast_shapes(in.shape(), shape, "broadcast");
    if (check != shape)
        throw ShapeError("broadcast: cannot expand " + shape_str(in.shape()) + " to " +
                         shape_str(shape));
    Tensor out(shape);
    auto st = bcast_strides(in.shape(), shape);
    int r = static_cast<int>(shape.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    const double* ip = in.data();
    double* op = out.data();
    int64_t n = out.size(), ii = 0;
    for (int64_t i = 0; i < n; ++i) {
        op[i] = ip[ii];
        for (int d = r - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            if (++idx[ud] < shape[ud]) {
                ii += st[ud];
                break;
            }
            idx[ud] = 0;
            ii -= st[ud] * (shape[ud] - 1);
        }
    }
    Node n2;
    n2.op = Op::Broadcast;
    n2.inputs = {x.id};
    n2.value = std::move(out);
    return x.tape->emit(std::move(n2));
}

Var matmul(Var a, Var b) {
    Tape* t = common_tape(a, b, "matmul");
    return emit_simple(t, Op::Matmul, {a.id, b.id}, matmul_tensor(a.value(), b.value()));
}

Var unfold(Var x, int kh, int kw, int stride_h, int stride_w, int pad_h, int pad_w) {
    const Tensor& in = x.value();
    UnfoldDims d = unfold_dims(in.shape(), kh, kw, stride_h, stride_w, pad_h, pad_w);
    Shape os{d.n, d.oh, d.ow, kh * kw};
    for (size_t i = 3; i < in.shape().size(); ++i) os.push_back(in.shape()[i]);
    Tensor out(os);
    const double* ip = in.data();
    double* op = out.data();
    int64_t rest = d.rest;
    for (int nn = 0; nn < d.n; ++nn) {
        for (int oh = 0; oh < d.oh; ++oh) {
            for (int ow = 0; ow < d.ow; ++ow) {
                for (int ky = 0; ky < kh; ++ky) {
                    int iy = oh * stride_h - pad_h + ky;
                    for (int kx = 0; kx < kw; ++kx) {
                        int ix = ow * stride_w - pad_w + kx;
                        double* dst = op + ((((static_cast<int64_t>(nn) * d.oh + oh) * d.ow + ow) *
                                                 (kh * kw) +
                                             (ky * kw + kx)) *
                                            rest);
                        if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) {
                            std::memset(dst, 0, sizeof(double) * static_cast<size_t>(rest));
                        } else {
                            const double* src =
                                ip + ((static_cast<int64_t>(nn) * d.h + iy) * d.w + ix) * rest;
                            std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(rest));
                        }
                    }
                }
            }
        }
    }
    Node n;
    n.op = Op::Unfold;
    n.inputs = {x.id};
    n.iattr = {kh, kw, stride_h, stride_w, pad_h, pad_w};
    n.value = std::move(out);
    return x.tape->emit(std::move(n));
}

Var stencil_affine(Var x, std::shared_ptr<const StencilPlan> plan) {
    if (!plan) throw ContractError("stencil_affine: null plan");
    Node n;
    n.op = Op::Stencil;
    n.inputs = {x.id};
    n.value = stencil_affine_tensor(x.value(), *plan);
    n.plan = std::move(plan);
    return x.tape->emit(std::move(n));
}

Tensor stencil_affine_tensor(const Tensor& x, const StencilPlan& plan) {
    if (x.size() != plan.in_numel)
        throw ShapeError("stencil: input size " + std::to_string(x.size()) +
                         " does not match plan " + std::to_string(plan.in_numel));
    Tensor out = plan.base;
    if (out.shape() != plan.out_shape) throw ShapeError("stencil: malformed plan base");
    double* op = out.data();
    const double* ip = x.data();
    size_t m = plan.weight.size();
    for (size_t k = 0; k < m; ++k)
        op[plan.out_idx[k]] += plan.weight[k] * ip[plan.in_idx[k]];
    return out;
}

Var operator+(Var a, double b) { return add(a, a.tape->scalar(b)); }
Var operator+(double a, Var b) { return add(b.tape->scalar(a), b); }
Var operator-(Var a, double b) { return sub(a, a.tape->scalar(b)); }
Var operator-(double a, Var b) { return sub(b.tape->scalar(a), b); }
Var operator*(Var a, double b) { return mul(a, a.tape->scalar(b)); }
Var operator*(double a, Var b) { return mul(b.tape->scalar(a), b); }
Var operator/(Var a, double b) { return div(a, a.tape->scalar(b)); }
Var operator/(double a, Var b) { return div(b.tape->scalar(a), b); }

// ---- backward dispatch ------------------------------------------------------

void Tape::backward_node(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = grads_[static_cast<size_t>(id)];
    auto in_val = [&](int i) -> const Tensor& {
        return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(i)])].value;
    };
    auto needs = [&](int i) {
        return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(i)])].requires_grad;
    };
    auto push = [&](int i, Tensor t) { accumulate(n.inputs[static_cast<size_t>(i)], std::move(t)); };

    switch (n.op) {
        case Op::Input:
            break;
        case Op::Add: {
            if (needs(0)) push(0, reduce_to_shape(g, in_val(0).shape()));
            if (needs(1)) push(1, reduce_to_shape(g, in_val(1).shape()));
            break;
        }
        case Op::Sub: {
            if (needs(0)) push(0, reduce_to_shape(g, in_val(0).shape()));
            if (needs(1)) {
                Tensor neg = g;
                for (int64_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
                push(1, reduce_to_shape(std::move(neg), in_val(1).shape()));
            }
            break;
        }
        case Op::Mul: {
            if (needs(0))
                push(0, reduce_to_shape(
                            binary_bcast(g, in_val(1), [](double x, double y) { return x * y; }, "mul'"),
                            in_val(0).shape()));
            if (needs(1))
                push(1, reduce_to_shape(
                            binary_bcast(g, in_val(0), [](double x, double y) { return x * y; }, "mul'"),
                            in_val(1).shape()));
            break;
        }
        case Op::Div: {
            if (needs(0))
                push(0, reduce_to_shape(
                            binary_bcast(g, in_val(1), [](double x, double y) { return x / y; }, "div'"),
                            in_val(0).shape()));
            if (needs(1)) {
                // -g * a / b^2
                Tensor ga = binary_bcast(g, in_val(0), [](double x, double y) { return x * y; }, "div'");
                Tensor gb = binary_bcast(ga, in_val(1),
                                         [](double x, double y) { return -x / (y * y); }, "div'");
                push(1, reduce_to_shape(std::move(gb), in_val(1).shape()));
            }
            break;
        }
        case Op::Matmul: {
            const Tensor& a = in_val(0);
            const Tensor& b = in_val(1);
            if (needs(0)) {
                Tensor bt = transpose_tensor(b, identity_perm_swapped_last2(b.rank()));
                push(0, reduce_to_shape(matmul_tensor(g, bt), a.shape()));
            }
            if (needs(1)) {
                Tensor at = transpose_tensor(a, identity_perm_swapped_last2(a.rank()));
                push(1, reduce_to_shape(matmul_tensor(at, g), b.shape()));
            }
            break;
        }
        case Op::Tanh: {
            if (!needs(0)) break;
            Tensor out(n.value.shape());
            const double* y = n.value.data();
            const double* gp = g.data();
            for (int64_t i = 0; i < out.size(); ++i) out[i] = gp[i] * (1.0 - y[i] * y[i]);
            push(0, std::move(out));
            break;
        }
        case Op::Sigmoid: {
            if (!needs(0)) break;
            Tensor out(n.value.shape());
            const double* y = n.value.data();
            const double* gp = g.data();
            for (int64_t i = 0; i < out.size(); ++i) out[i] = gp[i] * y[i] * (1.0 - y[i]);
            push(0, std::move(out));
            break;
        }
        case Op::Relu: {
            if (!needs(0)) break;
            Tensor out(n.value.shape());
            const double* x = in_val(0).data();
            const double* gp = g.data();
            for (int64_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? gp[i] : 0.0;
            push(0, std::move(out));
            break;
        }
        case Op::Exp: {
            if (!needs(0)) break;
            Tensor out(n.value.shape());
            const double* y = n.value.data();
            const double* gp = g.data();
            for (int64_t i = 0; i < out.size(); ++i) out[i] = gp[i] * y[i];
            push(0, std::move(out));
            break;
        }
        case Op::Log: {
            if (!needs(0)) break;
            Tensor out(n.value.shape());
            const double* x = in_val(0).data();
            const double* gp = g.data();
            for (int64_t i = 0; i < out.size(); ++i) out[i] = gp[i] / x[i];
            push(0, std::move(out));
            break;
        }
        case Op::Square: {
            if (!needs(0)) break;
            Tensor out(n.value.shape());
            const double* x = in_val(0).data();
            const double* gp = g.data();
            for (int64_t i = 0; i < out.size(); ++i) out[i] = gp[i] * 2.0 * x[i];
            push(0, std::move(out));
            break;
        }
        case Op::Sqrt: {
            if (!needs(0)) break;
            Tensor out(n.value.shape());
            const double* y = n.value.data();
            const double* gp = g.data();
            for (int64_t i = 0; i < out.size(); ++i) out[i] = gp[i] / (2.0 * y[i]);
            push(0, std::move(out));
            break;
        }
        case Op::SumAll: {
            if (!needs(0)) break;
            push(0, Tensor::full(in_val(0).shape(), g[0]));
            break;
        }
        case Op::Sum:
        case Op::Mean: {
            if (!needs(0)) break;
            const Tensor& in = in_val(0);
            AxisView v = axis_view(in.shape(), n.axis, "sum'");
            double scale = n.op == Op::Mean ? 1.0 / static_cast<double>(v.k) : 1.0;
            Tensor out(in.shape());
            const double* gp = g.data();
            double* op = out.data();
            for (int64_t a = 0; a < v.outer; ++a)
                for (int64_t kk = 0; kk < v.k; ++kk)
                    for (int64_t i = 0; i < v.inner; ++i)
                        op[(a * v.k + kk) * v.inner + i] = gp[a * v.inner + i] * scale;
            push(0, std::move(out));
            break;
        }
        case Op::Max: {
            if (!needs(0)) break;
            Tensor out(in_val(0).shape());
            const double* gp = g.data();
            for (size_t i = 0; i < n.arg_cache.size(); ++i)
                out[n.arg_cache[i]] += gp[static_cast<int64_t>(i)];
            push(0, std::move(out));
            break;
        }
        case Op::Softmax: {
            if (!needs(0)) break;
            const Tensor& y = n.value;
            AxisView v = axis_view(y.shape(), n.axis, "softmax'");
            Tensor out(y.shape());
            const double* yp = y.data();
            const double* gp = g.data();
            double* op = out.data();
            for (int64_t a = 0; a < v.outer; ++a) {
                for (int64_t i = 0; i < v.inner; ++i) {
                    int64_t base = a * v.k * v.inner + i;
                    double dot = 0.0;
                    for (int64_t kk = 0; kk < v.k; ++kk)
                        dot += gp[base + kk * v.inner] * yp[base + kk * v.inner];
                    for (int64_t kk = 0; kk < v.k; ++kk)
                        op[base + kk * v.inner] =
                            yp[base + kk * v.inner] * (gp[base + kk * v.inner] - dot);
                }
            }
            push(0, std::move(out));
            break;
        }
        case Op::Reshape: {
            if (!needs(0)) break;
            push(0, g.reshaped(in_val(0).shape()));
            break;
        }
        case Op::Transpose: {
            if (!needs(0)) break;
            std::vector<int> inv(n.iattr.size());
            for (size_t d = 0; d < n.iattr.size(); ++d)
                inv[static_cast<size_t>(n.iattr[d])] = static_cast<int>(d);
            push(0, transpose_tensor(g, inv));
            break;
        }
        case Op::Slice: {
            if (!needs(0)) break;
            const Tensor& in = in_val(0);
            Tensor out(in.shape());
            int r = in.rank();
            auto in_strides = row_major_strides(in.shape());
            const Shape& os = n.value.shape();
            int64_t run = os[static_cast<size_t>(r - 1)];
            int64_t rows = g.size() / run;
            std::vector<int> idx(static_cast<size_t>(r), 0);
            const double* gp = g.data();
            double* op = out.data();
            for (int64_t row = 0; row < rows; ++row) {
                int64_t off = 0;
                for (int d = 0; d < r; ++d)
                    off += (n.iattr[static_cast<size_t>(d)] + idx[static_cast<size_t>(d)]) *
                           in_strides[static_cast<size_t>(d)];
                std::memcpy(op + off, gp + row * run, sizeof(double) * static_cast<size_t>(run));
                for (int d = r - 2; d >= 0; --d) {
                    size_t ud = static_cast<size_t>(d);
                    if (++idx[ud] < os[ud]) break;
                    idx[ud] = 0;
                }
            }
            push(0, std::move(out));
            break;
        }
        case Op::Concat: {
            AxisView v = axis_view(n.value.shape(), n.axis, "concat'");
            int64_t out_block = static_cast<int64_t>(n.value.shape()[static_cast<size_t>(n.axis)]) * v.inner;
            int64_t offset = 0;
            const double* gp = g.data();
            for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
                const Tensor& in = nodes_[static_cast<size_t>(n.inputs[pi])].value;
                int64_t k = in.shape()[static_cast<size_t>(n.axis)];
                int64_t in_block = k * v.inner;
                if (nodes_[static_cast<size_t>(n.inputs[pi])].requires_grad) {
                    Tensor part(in.shape());
                    double* pp = part.data();
                    for (int64_t a = 0; a < v.outer; ++a)
                        std::memcpy(pp + a * in_block, gp + a * out_block + offset,
                                    sizeof(double) * static_cast<size_t>(in_block));
                    accumulate(n.inputs[pi], std::move(part));
                }
                offset += in_block;
            }
            break;
        }
        case Op::Broadcast: {
            if (!needs(0)) break;
            push(0, reduce_to_shape(g, in_val(0).shape()));
            break;
        }
        case Op::Unfold: {
            if (!needs(0)) break;
            const Tensor& in = in_val(0);
            int kh = n.iattr[0], kw = n.iattr[1], sh = n.iattr[2], sw = n.iattr[3],
                ph = n.iattr[4], pw = n.iattr[5];
            UnfoldDims d = unfold_dims(in.shape(), kh, kw, sh, sw, ph, pw);
            Tensor out(in.shape());
            const double* gp = g.data();
            double* op = out.data();
            for (int nn = 0; nn < d.n; ++nn) {
                for (int oh = 0; oh < d.oh; ++oh) {
                    for (int ow = 0; ow < d.ow; ++ow) {
                        for (int ky = 0; ky < kh; ++ky) {
                            int iy = oh * sh - ph + ky;
                            if (iy < 0 || iy >= d.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                int ix = ow * sw - pw + kx;
                                if (ix < 0 || ix >= d.w) continue;
                                const double* src =
                                    gp + ((((static_cast<int64_t>(nn) * d.oh + oh) * d.ow + ow) *
                                               (kh * kw) +
                                           (ky * kw + kx)) *
                                          d.rest);
                                double* dst =
                                    op + ((static_cast<int64_t>(nn) * d.h + iy) * d.w + ix) * d.rest;
                                for (int64_t i = 0; i < d.rest; ++i) dst[i] += src[i];
                            }
                        }
                    }
                }
            }
            push(0, std::move(out));
            break;
        }
        case Op::Stencil: {
            if (!needs(0)) break;
            const StencilPlan& plan = *n.plan;
            Tensor out(in_val(0).shape());
            const double* gp = g.data();
            double* op = out.data();
            size_t m = plan.weight.size();
            for (size_t k = 0; k < m; ++k)
                op[plan.in_idx[k]] += plan.weight[k] * gp[plan.out_idx[k]];
            push(0, std::move(out));
            break;
        }
    }
}

}  // namespace capsdet
