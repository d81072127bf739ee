#pragma once

#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "capsdet/model.hpp"
#include "capsdet/rng.hpp"
#include "capsdet/tape.hpp"
#include "capsdet/tensor.hpp"

namespace capsdet {

// Unconstrained patch parameters. Rendered pixels are (tanh(theta)+1)/2, so
// the attack never needs a clipping step.
struct PatchParams {
    Tensor theta;  // [side, side, channels]
};

PatchParams init_patch(int side, int channels, Rng rng);

struct AttackConfig {
    int c_adv = 0;
    double kappa = 20.0;
    double lambda_a = 0.0;
    double scale_min = 0.10;                            // fraction of image area
    double scale_max = 0.50;
    double rotation_min = -std::numbers::pi / 8.0;      // radians
    double rotation_max = std::numbers::pi / 8.0;
    int patch_side = 64;                                // theta canvas resolution
    int steps = 500;
    int batch_size = 16;
    double lr = 0.003;
    uint64_t seed = 0;
};

struct TransformSample {
    double rotation = 0.0;  // radians
    double cx = 0.0;        // footprint center, pixel coordinates
    double cy = 0.0;
    double area_fraction = 0.0;
};

Var patch_pixels(Var theta);
Tensor patch_pixels_tensor(const Tensor& theta);

// Draw order is fixed: area, rotation, cx, cy. fixed_area skips the area draw
// (evaluation at a pinned scale). The center is sampled so the rotated
// footprint lies fully inside the image; a footprint that cannot fit at the
// drawn rotation is a contract error.
TransformSample sample_transform(Rng& rng, const AttackConfig& cfg, int image_side,
                                 std::optional<double> fixed_area = {});

// Sparse plan realizing x' = A(P, x, t, l): the patch is resampled bilinearly
// into a square footprint of side round(image_side * sqrt(area)), rotated
// about the snapped footprint center, and REPLACES the image there. Pixels
// outside the footprint ride along in the plan base bit-identically.
std::shared_ptr<const StencilPlan> build_apply_plan(int patch_h, int patch_w,
                                                    const Tensor& image,
                                                    const TransformSample& t);

// One plan over a whole batch: images [N,h,w,c], one transform per image.
std::shared_ptr<const StencilPlan> build_batch_apply_plan(int patch_h, int patch_w,
                                                          const Tensor& images,
                                                          const std::vector<TransformSample>& ts);

// patch: rendered pixels [ph,pw,c] (a Var for the attack path, a Tensor for
// plain evaluation). image: [h,w,c] in [0,1].
Var apply_patch(Var patch, const Tensor& image, const TransformSample& t);
Tensor apply_patch_tensor(const Tensor& patch, const Tensor& image, const TransformSample& t);

// Distinct image pixels a plan writes (footprint raster area).
int64_t plan_masked_pixels(const StencilPlan& plan, int channels);

// Hinge-floored margin per sample: max(max_{i != c_adv} Z_i - Z_{c_adv}, -kappa).
// scores [N,E] -> [N]. Minimizing drives Z_{c_adv} kappa above the field.
Var naive_cost(Var scores, int c_adv, double kappa);

// naive + lambda_a * delta_recon elementwise. lambda_a == 0 returns `naive`
// itself, so values and gradients match the naive attack exactly.
Var adaptive_cost(Var naive, Var delta_recon, double lambda_a);

struct PatchTrainResult {
    PatchParams patch;
    std::vector<double> loss_history;   // mean attack objective per step
    std::vector<double> naive_history;  // mean margin term per step
};

// EOT optimization of theta with ADAM: each step draws batch_size
// (image, transform) pairs, applies the patch, and minimizes the mean
// adaptive cost. The model (classifier + decoder) stays frozen. The decoder
// term uses the predicted-class embedding of the patched image. Reruns with
// the same seed and config are bit-identical.
PatchTrainResult train_patch(const Model& model, const Tensor& images, const AttackConfig& cfg);

}  // namespace capsdet
