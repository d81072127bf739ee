#pragma once

#include <vector>

#include "capsdet/params.hpp"
#include "capsdet/rng.hpp"
#include "capsdet/tape.hpp"

namespace capsdet {

// AlexNet-style baseline. input_side == image_side runs at native resolution;
// a larger input_side inserts a differentiable bilinear resize in front of
// the stack (the 224 mode). width_mult scales every channel/feature count.
struct CnnSpec {
    int image_side = 28;
    int image_channels = 1;
    int input_side = 28;
    int classes = 10;  // k
    int m = 16;        // embedding size, matches flattened pose
    double width_mult = 1.0;
};

struct ConvLayerDef {
    int out_ch;
    int kernel;
    int stride;
    int pad;
    bool pool_after;
    int pool_k;
    int pool_s;
};

struct CnnStack {
    std::vector<ConvLayerDef> convs;
    std::vector<int> fcs;
};

// Deep stack for 224-class inputs, compact three-conv stack at native
// dataset resolutions.
CnnStack cnn_stack_for(const CnnSpec& spec);

struct CnnForward {
    Var logits;      // [N, k] pre-softmax class scores
    Var probs;       // [N, k]
    Var embeddings;  // [N, k, m], each coordinate in (0,1)
};

ParamRegistry build_cnn_params(const CnnSpec& spec, Rng rng, double l2_conv_fc);

CnnForward cnn_forward(Tape& tape, Var images, const BoundParams& params, const CnnSpec& spec);

}  // namespace capsdet
