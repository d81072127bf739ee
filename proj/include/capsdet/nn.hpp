#pragma once

#include <memory>
#include <vector>

#include "capsdet/tape.hpp"

namespace capsdet {

// Composed layers and losses built from tape primitives. Everything here is
// differentiable end to end; no op writes to the tape except through the
// primitives in tape.hpp.

// x [N,H,W,Cin], w [kh,kw,Cin,Cout], b [Cout] -> [N,OH,OW,Cout].
// VALID when pad == 0.
Var conv2d(Var x, Var w, Var b, int stride_h, int stride_w, int pad_h = 0, int pad_w = 0);

// x [N,H,W,C] -> [N,OH,OW,C], window max, no padding.
Var maxpool(Var x, int kh, int kw, int stride_h, int stride_w);

// x [...,in], w [in,out], b [out] -> [...,out].
Var dense(Var x, Var w, Var b);

// Numerically stable softplus/log-sigmoid:
//   softplus(x) = relu(x) + log(1 + exp(-|x|))
//   log_sigmoid(x) = -softplus(-x)
Var softplus(Var x);
Var log_sigmoid(Var x);

// max(x, floor) elementwise via relu(x - floor) + floor.
Var clamp_min(Var x, double floor);

Tensor one_hot(const std::vector<int>& labels, int num_classes);

// logits [N,K], targets one-hot [N,K] -> scalar mean NLL, computed through
// logsumexp so large logits stay finite.
Var cross_entropy(Var logits, Var targets_onehot);

// logsumexp over the last axis, keepdim; [.., K] -> [.., 1].
Var logsumexp_last(Var x);

// Bilinear resize as a sparse affine plan ([h,w,c] -> [out_h,out_w,c], same
// weights per channel). Half-pixel centers, edge clamped.
std::shared_ptr<const StencilPlan> make_bilinear_resize_plan(int h, int w, int c, int out_h,
                                                             int out_w);

// Forward-only convenience for data pipelines.
Tensor bilinear_resize(const Tensor& image_hwc, int out_h, int out_w);

}  // namespace capsdet
