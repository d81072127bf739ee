#include "capsdet/nn.hpp"

#include <algorithm>
#include <cmath>

#include "capsdet/errors.hpp"

namespace capsdet {

Var conv2d(Var x, Var w, Var b, int stride_h, int stride_w, int pad_h, int pad_w) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4) throw ShapeError("conv2d: input must be [N,H,W,C], got " + shape_str(xs));
    if (ws.size() != 4)
        throw ShapeError("conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_str(ws));
    if (ws[2] != xs[3])
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(xs) + " kernel " +
                         shape_str(ws));
    int kh = ws[0], kw = ws[1], cin = ws[2], cout = ws[3];
    Var cols = unfold(x, kh, kw, stride_h, stride_w, pad_h, pad_w);  // [N,OH,OW,kh*kw,Cin]
    const Shape& cs = cols.shape();
    Var flat = reshape(cols, {cs[0], cs[1], cs[2], kh * kw * cin});
    Var wk = reshape(w, {kh * kw * cin, cout});
    Var out = matmul(flat, wk);  // [N,OH,OW,Cout]
    if (b.defined()) out = add(out, b);
    return out;
}

Var maxpool(Var x, int kh, int kw, int stride_h, int stride_w) {
    if (x.rank() != 4) throw ShapeError("maxpool: input must be [N,H,W,C]");
    Var cols = unfold(x, kh, kw, stride_h, stride_w, 0, 0);  // [N,OH,OW,kh*kw,C]
    return max(cols, 3);
}

Var dense(Var x, Var w, Var b) {
    if (x.rank() < 2) throw ShapeError("dense: input must be rank >= 2");
    Var out = matmul(x, w);
    if (b.defined()) out = add(out, b);
    return out;
}

Var softplus(Var x) {
    Var absx = relu(x) + relu(-x);
    return relu(x) + log(exp(-absx) + 1.0);
}

Var log_sigmoid(Var x) { return -softplus(-x); }

Var clamp_min(Var x, double floor) { return relu(x - floor) + floor; }

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
    Tensor out = Tensor::zeros({static_cast<int>(labels.size()), num_classes});
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw DomainError("one_hot: label out of range");
        out[static_cast<int64_t>(i) * num_classes + labels[i]] = 1.0;
    }
    return out;
}

Var logsumexp_last(Var x) {
    Var m = max(x, -1, true);
    Var z = sum(exp(sub(x, m)), -1, true);
    return add(m, log(z));
}

Var cross_entropy(Var logits, Var targets_onehot) {
    if (logits.rank() != 2 || logits.shape() != targets_onehot.shape())
        throw ShapeError("cross_entropy: want matching [N,K] logits/targets");
    int n = logits.shape()[0];
    Var lse = logsumexp_last(logits);                       // [N,1]
    Var picked = sum(mul(logits, targets_onehot), -1, true);  // [N,1]
    return sum(sub(lse, picked)) / static_cast<double>(n);
}

std::shared_ptr<const StencilPlan> make_bilinear_resize_plan(int h, int w, int c, int out_h,
                                                             int out_w) {
    if (h <= 0 || w <= 0 || c <= 0 || out_h <= 0 || out_w <= 0)
        throw ShapeError("resize: extents must be positive");
    auto plan = std::make_shared<StencilPlan>();
    plan->out_shape = {out_h, out_w, c};
    plan->in_numel = static_cast<int64_t>(h) * w * c;
    plan->base = Tensor::zeros(plan->out_shape);
    double sy = static_cast<double>(h) / out_h;
    double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, h - 1);
        int y1c = std::clamp(y0 + 1, 0, h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, w - 1);
            int x1c = std::clamp(x0 + 1, 0, w - 1);
            double tap[4] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
            int src[4][2] = {{y0c, x0c}, {y0c, x1c}, {y1c, x0c}, {y1c, x1c}};
            for (int t = 0; t < 4; ++t) {
                if (tap[t] == 0.0) continue;
                for (int ch = 0; ch < c; ++ch) {
                    plan->out_idx.push_back((static_cast<int64_t>(oy) * out_w + ox) * c + ch);
                    plan->in_idx.push_back(
                        (static_cast<int64_t>(src[t][0]) * w + src[t][1]) * c + ch);
                    plan->weight.push_back(tap[t]);
                }
            }
        }
    }
    return plan;
}

Tensor bilinear_resize(const Tensor& image_hwc, int out_h, int out_w) {
    if (image_hwc.rank() != 3) throw ShapeError("resize: image must be [H,W,C]");
    auto plan = make_bilinear_resize_plan(image_hwc.dim(0), image_hwc.dim(1), image_hwc.dim(2),
                                          out_h, out_w);
    return stencil_affine_tensor(image_hwc, *plan);
}

}  // namespace capsdet
