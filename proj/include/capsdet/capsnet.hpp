#pragma once

#include <vector>

#include "capsdet/params.hpp"
#include "capsdet/rng.hpp"
#include "capsdet/tape.hpp"

namespace capsdet {

enum class Voting { Linear, Affine };

// Capsule stack sizing. Kernels and strides are fixed by the architecture:
// Conv 5x5/2, PrimCaps 1x1/1, ConvCaps1 3x3/2, ConvCaps2 3x3/1, all VALID.
struct CapsNetSpec {
    int image_side = 28;
    int image_channels = 1;
    int conv_channels = 64;  // A
    int prim_caps = 8;       // B
    int conv_caps1 = 16;     // C
    int conv_caps2 = 16;     // D
    int class_caps = 10;     // E
    Voting voting = Voting::Linear;
    bool mcd_enabled = false;
    double mcd_p = 0.5;
    bool droproute_enabled = false;
    double droproute_p = 0.5;
    int routing_iterations = 2;
    double lambda_base = 0.01;  // routing inverse-temperature slope
};

struct RoutingOpts {
    int iterations = 2;
    double lambda_base = 0.01;
    double variance_floor = 1e-6;
    double mass_eps = 1e-12;
    bool droproute = false;
    double droproute_p = 0.5;
    Rng* rng = nullptr;  // consulted only when droproute is on
};

struct RoutingOut {
    Var mu;     // [..., parents, 16]
    Var act;    // [..., parents], logistic
    Var score;  // pre-logistic parent scores
    std::vector<Var> r_after_estep;  // [..., children, parents] per E-step
};

// Votes as pose x transform, plus a bias matrix in Affine mode. poses
// [..., 1, 4, 4] against transforms [children, parents, 4, 4] after the
// caller arranges broadcast axes; this helper covers the flat case:
// poses [N, children, 16], transforms [children, parents, 16] -> votes
// [N, children, parents, 16].
Var compute_votes(Var poses, Var transforms, Var bias_matrices, Voting mode);

// EM routing: iterations M-steps with an E-step between consecutive ones,
// starting from uniform assignments. votes [..., children, parents, 16],
// child_acts [..., children], beta_a/beta_u [parents].
RoutingOut em_routing(Var votes, Var child_acts, Var beta_a, Var beta_u, const RoutingOpts& opts);

// Train-mode zero-masking of activation probabilities, no rescaling; poses
// are never touched by this op. Inference mode returns the input Var itself.
Var matrix_capsule_dropout(Var activations, double p, Rng& rng, bool training);

// Zero R entries with probability p, then renormalize surviving rows over
// the parent axis; fully-zeroed rows stay zero.
Var droproute_mask(Var r, double p, Rng& rng);

struct SpreadSchedule {
    double margin_start = 0.2;
    double margin_end = 0.9;
    double temp_start = 1.0;
    double temp_end = 0.01;   // final temperature
    double temp_frac = 0.2;   // fraction of training over which temp anneals
};

double spread_margin_at(const SpreadSchedule& s, int64_t step, int64_t total_steps);
double spread_temperature_at(const SpreadSchedule& s, int64_t step, int64_t total_steps);

// L = mean_batch sum_{i != target} relu(margin - (a_t - a_i)/temperature)^2.
Var spread_loss(Var class_activations, const std::vector<int>& targets, double margin,
                double temperature);

// Trainable tensors for the stack; capsule transforms/biases carry
// l2_capsule, conv/dense weights carry l2_conv_fc.
ParamRegistry build_capsnet_params(const CapsNetSpec& spec, Rng rng, double l2_capsule,
                                   double l2_conv_fc);

// Voting parameters (transforms + bias matrices) per routed layer.
struct VotingParamCounts {
    int64_t conv_caps1 = 0;
    int64_t conv_caps2 = 0;
    int64_t class_caps = 0;
    int64_t total() const { return conv_caps1 + conv_caps2 + class_caps; }
};
VotingParamCounts capsnet_voting_params(const CapsNetSpec& spec);

struct CapsForward {
    Var scores;       // pre-logistic class scores [N, E]
    Var activations;  // [N, E]
    Var poses;        // [N, E, 16]
    std::vector<Var> routing_r;  // post-E-step assignments, all layers
};

// images [N, side, side, channels] in [0,1].
CapsForward capsnet_forward(Tape& tape, Var images, const BoundParams& params,
                            const CapsNetSpec& spec, bool training, Rng rng);

}  // namespace capsdet
