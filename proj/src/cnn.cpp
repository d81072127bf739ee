#include "capsdet/cnn.hpp"

#include <cmath>

#include "capsdet/errors.hpp"
#include "capsdet/nn.hpp"

namespace capsdet {

namespace {

int scaled(int base, double mult, int floor_ch = 4) {
    int v = static_cast<int>(std::lround(base * mult));
    return v < floor_ch ? floor_ch : v;
}

Tensor he_init(Rng& r, const Shape& s, int fan_in) {
    Tensor t(s);
    double sd = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.normal(0.0, sd);
    return t;
}

Tensor xavier_init(Rng& r, const Shape& s, int fan_in) {
    Tensor t(s);
    double sd = std::sqrt(1.0 / fan_in);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.normal(0.0, sd);
    return t;
}

int conv_out(int side, int kernel, int stride, int pad) {
    return (side + 2 * pad - kernel) / stride + 1;
}

// Spatial size after the conv stack; throws if the input is too small.
int stack_out_side(const CnnStack& stack, int side) {
    for (const ConvLayerDef& l : stack.convs) {
        side = conv_out(side, l.kernel, l.stride, l.pad);
        if (l.pool_after) side = conv_out(side, l.pool_k, l.pool_s, 0);
        if (side < 1) throw ShapeError("cnn: input too small for the stack");
    }
    return side;
}

}  // namespace

CnnStack cnn_stack_for(const CnnSpec& spec) {
    double w = spec.width_mult;
    CnnStack s;
    if (spec.input_side >= 64) {
        s.convs = {
            {scaled(96, w), 11, 4, 2, true, 3, 2},
            {scaled(256, w), 5, 1, 2, true, 3, 2},
            {scaled(384, w), 3, 1, 1, false, 0, 0},
            {scaled(384, w), 3, 1, 1, false, 0, 0},
            {scaled(256, w), 3, 1, 1, true, 3, 2},
        };
        s.fcs = {scaled(4096, w, 16), scaled(4096, w, 16)};
    } else {
        s.convs = {
            {scaled(32, w), 5, 2, 0, false, 0, 0},
            {scaled(64, w), 3, 1, 1, true, 2, 2},
            {scaled(96, w), 3, 1, 1, true, 2, 2},
        };
        s.fcs = {scaled(512, w, 16)};
    }
    return s;
}

ParamRegistry build_cnn_params(const CnnSpec& spec, Rng rng, double l2_conv_fc) {
    ParamRegistry reg;
    Rng r = rng.split("cnn-init");
    CnnStack stack = cnn_stack_for(spec);
    int ch = spec.image_channels;
    int li = 0;
    for (const ConvLayerDef& l : stack.convs) {
        std::string name = "cnn.conv" + std::to_string(li++);
        int fan = l.kernel * l.kernel * ch;
        reg.add(name + ".w", he_init(r, {l.kernel, l.kernel, ch, l.out_ch}, fan), l2_conv_fc);
        reg.add(name + ".b", Tensor::zeros({l.out_ch}), 0.0);
        ch = l.out_ch;
    }
    int side = stack_out_side(stack, spec.input_side);
    int feat = side * side * ch;
    int fi = 0;
    for (int width : stack.fcs) {
        std::string name = "cnn.fc" + std::to_string(fi++);
        reg.add(name + ".w", he_init(r, {feat, width}, feat), l2_conv_fc);
        reg.add(name + ".b", Tensor::zeros({width}), 0.0);
        feat = width;
    }
    reg.add("cnn.embed.w", xavier_init(r, {spec.classes, feat, spec.m}, feat), l2_conv_fc);
    reg.add("cnn.embed.b", Tensor::zeros({spec.classes, spec.m}), 0.0);
    reg.add("cnn.logit.w", xavier_init(r, {spec.classes, spec.m}, spec.m), l2_conv_fc);
    reg.add("cnn.logit.b", Tensor::zeros({spec.classes}), 0.0);
    return reg;
}

CnnForward cnn_forward(Tape&, Var images, const BoundParams& params, const CnnSpec& spec) {
    const Shape& is = images.shape();
    if (is.size() != 4 || is[1] != spec.image_side || is[2] != spec.image_side ||
        is[3] != spec.image_channels)
        throw ShapeError("cnn_forward: image shape " + shape_str(is) + " does not match spec");
    int n = is[0];

    Var x = images;
    if (spec.input_side != spec.image_side) {
        auto plan = make_bilinear_resize_plan(spec.image_side, spec.image_side,
                                              spec.image_channels, spec.input_side,
                                              spec.input_side);
        std::vector<Var> resized;
        resized.reserve(static_cast<size_t>(n));
        int64_t pix = static_cast<int64_t>(spec.image_side) * spec.image_side *
                      spec.image_channels;
        for (int i = 0; i < n; ++i) {
            Var img = slice(x, {i, 0, 0, 0}, {1, is[1], is[2], is[3]});
            Var flat = reshape(img, {static_cast<int>(pix)});
            Var out = stencil_affine(flat, plan);
            resized.push_back(
                reshape(out, {1, spec.input_side, spec.input_side, spec.image_channels}));
        }
        x = concat(resized, 0);
    }

    CnnStack stack = cnn_stack_for(spec);
    int li = 0;
    for (const ConvLayerDef& l : stack.convs) {
        std::string name = "cnn.conv" + std::to_string(li++);
        x = relu(conv2d(x, params[name + ".w"], params[name + ".b"], l.stride, l.stride, l.pad,
                        l.pad));
        if (l.pool_after) x = maxpool(x, l.pool_k, l.pool_k, l.pool_s, l.pool_s);
    }
    const Shape& xs = x.shape();
    Var feat = reshape(x, {n, xs[1] * xs[2] * xs[3]});
    for (size_t fi = 0; fi < stack.fcs.size(); ++fi) {
        std::string name = "cnn.fc" + std::to_string(fi);
        feat = relu(dense(feat, params[name + ".w"], params[name + ".b"]));
    }

    int f = feat.shape()[1];
    // k parallel affine maps onto m-dim logistic embeddings.
    Var fe = reshape(feat, {n, 1, 1, f});
    Var emb = matmul(fe, params["cnn.embed.w"]);  // [N, k, 1, m]
    emb = reshape(emb, {n, spec.classes, spec.m});
    emb = sigmoid(add(emb, params["cnn.embed.b"]));
    // Per-class affine map of its own embedding to a scalar logit.
    Var logits = add(sum(mul(emb, params["cnn.logit.w"]), -1), params["cnn.logit.b"]);

    CnnForward out;
    out.logits = logits;
    out.probs = softmax(logits, -1);
    out.embeddings = emb;
    return out;
}

}  // namespace capsdet
