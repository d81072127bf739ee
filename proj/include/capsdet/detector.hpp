#pragma once

#include <vector>

#include "capsdet/params.hpp"
#include "capsdet/rng.hpp"
#include "capsdet/tape.hpp"

namespace capsdet {

// Class-conditional decoder: one shared network fed the selected class
// embedding (capsule pose or CNN embedding vector).
struct DecoderSpec {
    int fc1 = 512;   // X
    int fc2 = 1024;  // Y
    int out_h = 28;
    int out_w = 28;
    int out_c = 1;
    int64_t pixel_count() const {
        return static_cast<int64_t>(out_h) * out_w * out_c;
    }
};

void add_decoder_params(ParamRegistry& reg, const DecoderSpec& spec, Rng rng, double l2);

// embedding [N,16] -> image [N,h,w,c], pixels in (0,1).
Var decode(Var embedding, const BoundParams& params, const DecoderSpec& spec);

// Per-sample Delta_recon = ||x_recon - x||_2 / (h*w). Channels contribute to
// the norm but not the denominator (the formula divides by area only).
Var reconstruction_delta(Var x_recon, Var x);

// Scalar mean of per-sample deltas, for the training objective.
Var reconstruction_loss(Var x_recon, Var x);

struct DetectorState {
    double alpha_crit = 0.0;
    double percentile = 95.0;
    int calibration_count = 0;
};

// Empirical percentile with linear interpolation between order statistics.
double calibrate_threshold(std::vector<double> losses, double percentile);

DetectorState make_detector(const std::vector<double>& clean_losses, double percentile = 95.0);

// Eq-1 style decision with the boundary treated as benign: 1 iff delta > alpha.
int detect(double delta_recon, double alpha_crit);

}  // namespace capsdet
