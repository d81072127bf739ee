#include "capsdet/patch.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "capsdet/adam.hpp"
#include "capsdet/detector.hpp"
#include "capsdet/errors.hpp"

namespace capsdet {

namespace {

struct Footprint {
    int s_eff = 0;     // snapped side in pixels
    double ccx = 0.0;  // snapped center
    double ccy = 0.0;
};

// Snap the footprint to the pixel grid: integer side, corner rounded from the
// sampled center. At rotation 0 the mask is then exactly s_eff x s_eff.
Footprint snap_footprint(int image_side, const TransformSample& t) {
    Footprint f;
    f.s_eff = static_cast<int>(std::llround(image_side * std::sqrt(t.area_fraction)));
    double x0 = std::round(t.cx - 0.5 * f.s_eff);
    double y0 = std::round(t.cy - 0.5 * f.s_eff);
    f.ccx = x0 + 0.5 * f.s_eff;
    f.ccy = y0 + 0.5 * f.s_eff;
    return f;
}

// Append one image's scatter entries to the plan. base_out is the flat offset
// of this image inside plan.base; masked pixels of base are zeroed so the
// scatter replaces rather than blends.
void append_image_plan(StencilPlan& plan, int patch_h, int patch_w, int h, int w, int ch,
                       const TransformSample& t, int64_t base_out) {
    if (h != w) throw ShapeError("apply_patch: images must be square");
    Footprint f = snap_footprint(w, t);
    if (f.s_eff <= 0) return;

    double c = std::cos(t.rotation);
    double s = std::sin(t.rotation);
    double half = 0.5 * f.s_eff;
    double h_ext = half * (std::abs(c) + std::abs(s));

    int ylo = static_cast<int>(std::floor(f.ccy - h_ext - 0.5));
    int yhi = static_cast<int>(std::ceil(f.ccy + h_ext - 0.5));
    int xlo = static_cast<int>(std::floor(f.ccx - h_ext - 0.5));
    int xhi = static_cast<int>(std::ceil(f.ccx + h_ext - 0.5));

    for (int y = ylo; y <= yhi; ++y) {
        for (int x = xlo; x <= xhi; ++x) {
            double dx = x + 0.5 - f.ccx;
            double dy = y + 0.5 - f.ccy;
            double u = c * dx + s * dy;  // rotate by -rotation into the patch frame
            double v = -s * dx + c * dy;
            if (std::abs(u) > half || std::abs(v) > half) continue;
            if (y < 0 || y >= h || x < 0 || x >= w)
                throw ContractError("apply_patch: footprint out of bounds");

            double pu = (u + half) / f.s_eff * patch_w - 0.5;
            double pv = (v + half) / f.s_eff * patch_h - 0.5;
            int u0 = static_cast<int>(std::floor(pu));
            int v0 = static_cast<int>(std::floor(pv));
            double fu = pu - u0;
            double fv = pv - v0;
            int u0c = std::clamp(u0, 0, patch_w - 1);
            int u1c = std::clamp(u0 + 1, 0, patch_w - 1);
            int v0c = std::clamp(v0, 0, patch_h - 1);
            int v1c = std::clamp(v0 + 1, 0, patch_h - 1);

            int64_t out0 = base_out + (static_cast<int64_t>(y) * w + x) * ch;
            const int pr[4] = {v0c, v0c, v1c, v1c};
            const int pc[4] = {u0c, u1c, u0c, u1c};
            const double wt[4] = {(1 - fv) * (1 - fu), (1 - fv) * fu, fv * (1 - fu), fv * fu};
            for (int k = 0; k < ch; ++k) {
                plan.base[out0 + k] = 0.0;
                for (int tap = 0; tap < 4; ++tap) {
                    plan.out_idx.push_back(out0 + k);
                    plan.in_idx.push_back((static_cast<int64_t>(pr[tap]) * patch_w + pc[tap]) * ch + k);
                    plan.weight.push_back(wt[tap]);
                }
            }
        }
    }
}

}  // namespace

PatchParams init_patch(int side, int channels, Rng rng) {
    if (side < 1 || channels < 1) throw ContractError("init_patch: side and channels must be positive");
    Rng r = rng.split("patch-init");
    PatchParams p;
    p.theta = Tensor({side, side, channels});
    for (int64_t i = 0; i < p.theta.size(); ++i) p.theta[i] = r.normal(0.0, 0.1);
    return p;
}

Var patch_pixels(Var theta) { return (tanh(theta) + 1.0) * 0.5; }

Tensor patch_pixels_tensor(const Tensor& theta) {
    Tensor out(theta.shape());
    for (int64_t i = 0; i < theta.size(); ++i) out[i] = (std::tanh(theta[i]) + 1.0) * 0.5;
    return out;
}

TransformSample sample_transform(Rng& rng, const AttackConfig& cfg, int image_side,
                                 std::optional<double> fixed_area) {
    if (cfg.scale_min <= 0.0 || cfg.scale_max > 1.0 || cfg.scale_min > cfg.scale_max)
        throw ContractError("sample_transform: scale_range must lie in (0,1]");
    if (cfg.rotation_min > cfg.rotation_max)
        throw ContractError("sample_transform: empty rotation range");

    TransformSample t;
    t.area_fraction = fixed_area ? *fixed_area : rng.uniform(cfg.scale_min, cfg.scale_max);
    if (t.area_fraction < 0.0 || t.area_fraction > 1.0)
        throw ContractError("sample_transform: area fraction outside [0,1]");
    t.rotation = rng.uniform(cfg.rotation_min, cfg.rotation_max);

    int s_eff = static_cast<int>(std::llround(image_side * std::sqrt(t.area_fraction)));
    double h_ext = 0.5 * s_eff * (std::abs(std::cos(t.rotation)) + std::abs(std::sin(t.rotation)));
    double ext = h_ext + 0.5;
    if (2.0 * ext > image_side)
        throw ContractError("sample_transform: patch too large to fit at area " +
                            std::to_string(t.area_fraction));
    t.cx = rng.uniform(ext, image_side - ext);
    t.cy = rng.uniform(ext, image_side - ext);
    return t;
}

std::shared_ptr<const StencilPlan> build_apply_plan(int patch_h, int patch_w, const Tensor& image,
                                                    const TransformSample& t) {
    const Shape& is = image.shape();
    if (is.size() != 3) throw ShapeError("build_apply_plan: image must be [h,w,c]");
    auto plan = std::make_shared<StencilPlan>();
    plan->out_shape = is;
    plan->in_numel = static_cast<int64_t>(patch_h) * patch_w * is[2];
    plan->base = image;
    append_image_plan(*plan, patch_h, patch_w, is[0], is[1], is[2], t, 0);
    return plan;
}

std::shared_ptr<const StencilPlan> build_batch_apply_plan(int patch_h, int patch_w,
                                                          const Tensor& images,
                                                          const std::vector<TransformSample>& ts) {
    const Shape& is = images.shape();
    if (is.size() != 4) throw ShapeError("build_batch_apply_plan: images must be [N,h,w,c]");
    if (static_cast<size_t>(is[0]) != ts.size())
        throw ContractError("build_batch_apply_plan: one transform per image");
    auto plan = std::make_shared<StencilPlan>();
    plan->out_shape = is;
    plan->in_numel = static_cast<int64_t>(patch_h) * patch_w * is[3];
    plan->base = images;
    int64_t block = static_cast<int64_t>(is[1]) * is[2] * is[3];
    for (size_t i = 0; i < ts.size(); ++i)
        append_image_plan(*plan, patch_h, patch_w, is[1], is[2], is[3], ts[i],
                          static_cast<int64_t>(i) * block);
    return plan;
}

Var apply_patch(Var patch, const Tensor& image, const TransformSample& t) {
    const Shape& ps = patch.shape();
    if (ps.size() != 3) throw ShapeError("apply_patch: patch must be [ph,pw,c]");
    if (image.rank() != 3 || ps[2] != image.shape()[2])
        throw ShapeError("apply_patch: image must be [h,w,c] with matching channels");
    return stencil_affine(patch, build_apply_plan(ps[0], ps[1], image, t));
}

Tensor apply_patch_tensor(const Tensor& patch, const Tensor& image, const TransformSample& t) {
    const Shape& ps = patch.shape();
    if (ps.size() != 3) throw ShapeError("apply_patch: patch must be [ph,pw,c]");
    if (image.rank() != 3 || ps[2] != image.shape()[2])
        throw ShapeError("apply_patch: image must be [h,w,c] with matching channels");
    return stencil_affine_tensor(patch, *build_apply_plan(ps[0], ps[1], image, t));
}

int64_t plan_masked_pixels(const StencilPlan& plan, int channels) {
    std::vector<int64_t> out = plan.out_idx;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return static_cast<int64_t>(out.size()) / channels;
}

Var naive_cost(Var scores, int c_adv, double kappa) {
    const Shape& ss = scores.shape();
    if (ss.size() != 2) throw ShapeError("naive_cost: scores must be [N,E]");
    int n = ss[0];
    int e = ss[1];
    if (e < 2) throw ContractError("naive_cost: need at least 2 classes");
    if (c_adv < 0 || c_adv >= e) throw ContractError("naive_cost: c_adv out of range");

    std::vector<Var> parts;
    if (c_adv > 0) parts.push_back(slice(scores, {0, 0}, {n, c_adv}));
    if (c_adv < e - 1) parts.push_back(slice(scores, {0, c_adv + 1}, {n, e - c_adv - 1}));
    Var others = parts.size() == 1 ? parts[0] : concat(parts, 1);
    Var runner = max(others, 1);  // [N]
    Var zc = reshape(slice(scores, {0, c_adv}, {n, 1}), {n});
    // max(t, -kappa) written as relu(t + kappa) - kappa
    return relu(sub(runner, zc) + kappa) - kappa;
}

Var adaptive_cost(Var naive, Var delta_recon, double lambda_a) {
    if (lambda_a < 0.0) throw ContractError("adaptive_cost: lambda_a must be >= 0");
    if (lambda_a == 0.0) return naive;
    return naive + lambda_a * delta_recon;
}

PatchTrainResult train_patch(const Model& model, const Tensor& images, const AttackConfig& cfg) {
    const Shape& is = images.shape();
    if (is.size() != 4) throw ShapeError("train_patch: images must be [N,h,w,c]");
    int m = is[0];
    int h = is[1];
    int w = is[2];
    int ch = is[3];
    if (m < 1) throw ContractError("train_patch: empty image set");
    if (cfg.steps < 0 || cfg.batch_size < 1)
        throw ContractError("train_patch: steps must be >= 0 and batch_size >= 1");
    if (cfg.lambda_a < 0.0) throw ContractError("train_patch: lambda_a must be >= 0");

    Rng root = Rng::from_seed(cfg.seed);
    PatchTrainResult res;
    res.patch = init_patch(cfg.patch_side, ch, root);
    Adam opt(AdamConfig{.lr = cfg.lr});
    int64_t block = static_cast<int64_t>(h) * w * ch;

    for (int step = 0; step < cfg.steps; ++step) {
        Rng srng = root.split("step").split(static_cast<uint64_t>(step));
        Tape tape;
        BoundParams bp(tape, model.params, false);
        Var theta = tape.input(res.patch.theta, true);
        Var patch = patch_pixels(theta);

        Tensor batch({cfg.batch_size, h, w, ch});
        std::vector<TransformSample> ts(cfg.batch_size);
        for (int j = 0; j < cfg.batch_size; ++j) {
            int64_t bi = srng.uniform_int(m);
            std::memcpy(batch.data() + j * block, images.data() + bi * block,
                        static_cast<size_t>(block) * sizeof(double));
            ts[static_cast<size_t>(j)] = sample_transform(srng, cfg, w);
        }

        Var xprime = stencil_affine(patch, build_batch_apply_plan(cfg.patch_side, cfg.patch_side, batch, ts));
        ModelForward fwd = model_forward(tape, xprime, bp, model, false, srng.split("fwd"));
        Var naive = naive_cost(fwd.scores, cfg.c_adv, cfg.kappa);
        Var cost = naive;
        if (cfg.lambda_a > 0.0) {
            Var emb = select_embedding(fwd.embeddings, tape.value(fwd.scores), SelectMode::Predicted);
            Var recon = decode(emb, bp, model.spec.decoder);
            Var delta = reconstruction_delta(recon, xprime);
            cost = adaptive_cost(naive, delta, cfg.lambda_a);
        }
        Var loss = sum(cost) / static_cast<double>(cfg.batch_size);

        double lv = tape.value(loss)[0];
        if (!std::isfinite(lv))
            throw NumericError("train_patch: non-finite loss at step " + std::to_string(step));

        const Tensor& nv = tape.value(naive);
        double nsum = 0.0;
        for (int64_t i = 0; i < nv.size(); ++i) nsum += nv[i];

        tape.backward(loss);
        std::vector<Tensor*> params{&res.patch.theta};
        std::vector<Tensor> grads;
        grads.push_back(tape.grad(theta));
        opt.step(params, grads);

        res.loss_history.push_back(lv);
        res.naive_history.push_back(nsum / cfg.batch_size);
    }
    return res;
}

}  // namespace capsdet
