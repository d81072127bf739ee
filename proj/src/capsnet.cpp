#include "capsdet/capsnet.hpp"

#include <cmath>

#include "capsdet/errors.hpp"
#include "capsdet/nn.hpp"

namespace capsdet {

namespace {

constexpr double kTwoPi = 6.283185307179586;

Tensor normal_init(Rng& r, const Shape& s, double sd) {
    Tensor t(s);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.normal(0.0, sd);
    return t;
}

// Identity plus noise keeps initial votes on the pose scale so early routing
// produces informative clusters.
Tensor transform_init(Rng& r, int children, int parents, double sd) {
    Tensor t({children, parents, 4, 4});
    for (int c = 0; c < children; ++c)
        for (int p = 0; p < parents; ++p)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j)
                    t.at({c, p, i, j}) = (i == j ? 1.0 : 0.0) + r.normal(0.0, sd);
    return t;
}

Shape cat_shape(const Shape& batch, std::initializer_list<int> tail) {
    Shape out = batch;
    for (int v : tail) out.push_back(v);
    return out;
}

struct CapsGrid {
    Var poses;  // [N, h, w, caps*16]
    Var acts;   // [N, h, w, caps]
};

CapsGrid routed_conv_caps(CapsGrid in, int in_caps, int out_caps, int kernel, int stride, Var T,
                          Var bias, Var beta_a, Var beta_u, const RoutingOpts& opts,
                          std::vector<Var>& r_log) {
    Var cols = unfold(in.poses, kernel, kernel, stride, stride, 0, 0);
    const Shape& cs = cols.shape();  // [N, oh, ow, k*k, in_caps*16]
    int n = cs[0], oh = cs[1], ow = cs[2];
    int children = kernel * kernel * in_caps;
    Var child_pose = reshape(cols, {n, oh, ow, children, 1, 4, 4});
    Var votes = matmul(child_pose, T);  // [N, oh, ow, children, out_caps, 4, 4]
    if (bias.defined()) votes = add(votes, bias);
    Var votes16 = reshape(votes, {n, oh, ow, children, out_caps, 16});
    Var acols = unfold(in.acts, kernel, kernel, stride, stride, 0, 0);
    Var child_act = reshape(acols, {n, oh, ow, children});
    RoutingOut ro = em_routing(votes16, child_act, beta_a, beta_u, opts);
    for (Var r : ro.r_after_estep) r_log.push_back(r);
    return {reshape(ro.mu, {n, oh, ow, out_caps * 16}), ro.act};
}

}  // namespace

Var compute_votes(Var poses, Var transforms, Var bias_matrices, Voting mode) {
    if (mode == Voting::Linear && bias_matrices.defined())
        throw ContractError("compute_votes: bias matrices supplied in Linear mode");
    if (mode == Voting::Affine && !bias_matrices.defined())
        throw ContractError("compute_votes: Affine mode needs bias matrices");
    const Shape& ps = poses.shape();
    const Shape& ts = transforms.shape();
    if (ps.size() != 3 || ps[2] != 16)
        throw ShapeError("compute_votes: poses must be [N,children,16]");
    if (ts.size() != 4 || ts[0] != ps[1] || ts[2] != 4 || ts[3] != 4)
        throw ShapeError("compute_votes: transforms must be [children,parents,4,4]");
    int n = ps[0], children = ps[1], parents = ts[1];
    Var votes = matmul(reshape(poses, {n, children, 1, 4, 4}), transforms);
    if (mode == Voting::Affine) votes = add(votes, bias_matrices);
    return reshape(votes, {n, children, parents, 16});
}

RoutingOut em_routing(Var votes, Var child_acts, Var beta_a, Var beta_u,
                      const RoutingOpts& opts) {
    const Shape& vs = votes.shape();
    if (vs.size() < 3 || vs.back() != 16)
        throw ShapeError("em_routing: votes must be [...,children,parents,16], got " +
                         shape_str(vs));
    if (opts.iterations < 1) throw ContractError("em_routing: iterations must be >= 1");
    int rank = static_cast<int>(vs.size());
    int parents = vs[static_cast<size_t>(rank - 2)];
    int children = vs[static_cast<size_t>(rank - 3)];
    Shape batch(vs.begin(), vs.end() - 3);
    if (child_acts.shape() != cat_shape(batch, {children}))
        throw ShapeError("em_routing: child activations shape mismatch");
    if (opts.droproute && opts.rng == nullptr)
        throw ContractError("em_routing: droproute needs an rng");
    Tape* t = votes.tape;

    Var beta_u_e = reshape(beta_u, {parents, 1});
    Var r = t->constant(Tensor::full(cat_shape(batch, {children, parents}),
                                     1.0 / static_cast<double>(parents)));
    Var acts_col = reshape(child_acts, cat_shape(batch, {children, 1}));

    RoutingOut out;
    Var mu, var_f, score;
    for (int it = 0; it < opts.iterations; ++it) {
        double lambda = opts.lambda_base * (it + 1);
        Var rw = mul(r, acts_col);                       // [...,ch,par]
        Var mass = sum(rw, -2);                          // [...,par]
        Var denom = mass + opts.mass_eps;
        Var denom_col = reshape(denom, cat_shape(batch, {parents, 1}));
        Var rw_e = reshape(rw, cat_shape(batch, {children, parents, 1}));
        mu = div(sum(mul(rw_e, votes), -3), denom_col);  // [...,par,16]
        Var mu_e = reshape(mu, cat_shape(batch, {1, parents, 16}));
        Var diff2 = square(sub(votes, mu_e));            // [...,ch,par,16]
        Var var = div(sum(mul(rw_e, diff2), -3), denom_col);
        var_f = clamp_min(var, opts.variance_floor);
        Var mass_col = reshape(mass, cat_shape(batch, {parents, 1}));
        Var cost_h = mul(add(beta_u_e, log(var_f) * 0.5), mass_col);
        score = mul(sub(beta_a, sum(cost_h, -1)), t->scalar(lambda));
        if (it + 1 < opts.iterations) {
            Var var_e = reshape(var_f, cat_shape(batch, {1, parents, 16}));
            Var logvar = reshape(log(var_f * kTwoPi), cat_shape(batch, {1, parents, 16}));
            Var logp = sum(add(div(diff2, var_e), logvar), -1) * -0.5;  // [...,ch,par]
            Var logprior = reshape(log_sigmoid(score), cat_shape(batch, {1, parents}));
            r = softmax(add(logprior, logp), -1);
            out.r_after_estep.push_back(r);
            if (opts.droproute) r = droproute_mask(r, opts.droproute_p, *opts.rng);
        }
    }
    out.mu = mu;
    out.score = score;
    out.act = sigmoid(score);
    return out;
}

Var matrix_capsule_dropout(Var activations, double p, Rng& rng, bool training) {
    if (p < 0.0 || p > 1.0) throw DomainError("matrix_capsule_dropout: p outside [0,1]");
    if (!training || p == 0.0) return activations;
    Tensor mask(activations.shape());
    for (int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : 1.0;
    return mul(activations, activations.tape->constant(std::move(mask)));
}

Var droproute_mask(Var r, double p, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw DomainError("droproute_mask: p outside [0,1]");
    if (p == 0.0) return r;
    Tensor mask(r.shape());
    for (int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : 1.0;
    Var masked = mul(r, r.tape->constant(std::move(mask)));
    Var rows = sum(masked, -1, true);
    return div(masked, rows + 1e-12);
}

double spread_margin_at(const SpreadSchedule& s, int64_t step, int64_t total_steps) {
    double progress = total_steps <= 0 ? 1.0
                                       : std::min(1.0, static_cast<double>(step) /
                                                           static_cast<double>(total_steps));
    return s.margin_start + (s.margin_end - s.margin_start) * progress;
}

double spread_temperature_at(const SpreadSchedule& s, int64_t step, int64_t total_steps) {
    double window = s.temp_frac * static_cast<double>(total_steps);
    double progress = window <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(step) / window);
    return s.temp_start + (s.temp_end - s.temp_start) * progress;
}

Var spread_loss(Var class_activations, const std::vector<int>& targets, double margin,
                double temperature) {
    const Shape& as = class_activations.shape();
    if (as.size() != 2) throw ShapeError("spread_loss: activations must be [N,E]");
    int n = as[0], e = as[1];
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("spread_loss: one target per row required");
    if (temperature <= 0.0) throw DomainError("spread_loss: temperature must be positive");
    Tape* t = class_activations.tape;
    Tensor oh = one_hot(targets, e);
    Tensor others(oh.shape());
    for (int64_t i = 0; i < oh.size(); ++i) others[i] = 1.0 - oh[i];
    Var voh = t->constant(std::move(oh));
    Var a_t = sum(mul(class_activations, voh), -1, true);  // [N,1]
    Var gap = div(sub(a_t, class_activations), t->scalar(temperature));
    Var viol = relu(sub(t->scalar(margin), gap));
    return sum(mul(square(viol), t->constant(std::move(others)))) / static_cast<double>(n);
}

ParamRegistry build_capsnet_params(const CapsNetSpec& spec, Rng rng, double l2_capsule,
                                   double l2_conv_fc) {
    ParamRegistry reg;
    int a = spec.conv_channels, b = spec.prim_caps, c = spec.conv_caps1, d = spec.conv_caps2,
        e = spec.class_caps;
    int ch = spec.image_channels;
    Rng r = rng.split("capsnet-init");

    double conv_sd = std::sqrt(2.0 / (5.0 * 5.0 * ch));
    reg.add("conv.w", normal_init(r, {5, 5, ch, a}, conv_sd), l2_conv_fc);
    reg.add("conv.b", Tensor::zeros({a}), 0.0);

    double prim_sd = std::sqrt(1.0 / a);
    reg.add("prim.pose.w", normal_init(r, {1, 1, a, b * 16}, prim_sd), l2_conv_fc);
    reg.add("prim.pose.b", Tensor::zeros({b * 16}), 0.0);
    reg.add("prim.act.w", normal_init(r, {1, 1, a, b}, prim_sd), l2_conv_fc);
    reg.add("prim.act.b", Tensor::zeros({b}), 0.0);

    auto add_caps = [&](const std::string& prefix, int children, int parents) {
        reg.add(prefix + ".T", transform_init(r, children, parents, 0.1), l2_capsule);
        if (spec.voting == Voting::Affine)
            reg.add(prefix + ".bias", Tensor::zeros({children, parents, 4, 4}), l2_capsule);
        reg.add(prefix + ".beta_a", Tensor::zeros({parents}), 0.0);
        reg.add(prefix + ".beta_u", Tensor::zeros({parents}), 0.0);
    };
    add_caps("cc1", 9 * b, c);
    add_caps("cc2", 9 * c, d);
    add_caps("class", d, e);
    return reg;
}

VotingParamCounts capsnet_voting_params(const CapsNetSpec& spec) {
    int mult = spec.voting == Voting::Affine ? 2 : 1;
    VotingParamCounts out;
    out.conv_caps1 = static_cast<int64_t>(9) * spec.prim_caps * spec.conv_caps1 * 16 * mult;
    out.conv_caps2 = static_cast<int64_t>(9) * spec.conv_caps1 * spec.conv_caps2 * 16 * mult;
    out.class_caps = static_cast<int64_t>(spec.conv_caps2) * spec.class_caps * 16 * mult;
    return out;
}

CapsForward capsnet_forward(Tape& tape, Var images, const BoundParams& params,
                            const CapsNetSpec& spec, bool training, Rng rng) {
    const Shape& is = images.shape();
    if (is.size() != 4 || is[1] != spec.image_side || is[2] != spec.image_side ||
        is[3] != spec.image_channels)
        throw ShapeError("capsnet_forward: image shape " + shape_str(is) +
                         " does not match spec");
    int n = is[0], d = spec.conv_caps2, e = spec.class_caps;

    RoutingOpts ropts;
    ropts.iterations = spec.routing_iterations;
    ropts.lambda_base = spec.lambda_base;
    ropts.droproute = training && spec.droproute_enabled;
    ropts.droproute_p = spec.droproute_p;
    Rng droproute_rng = rng.split("droproute");
    ropts.rng = &droproute_rng;

    CapsForward out;

    Var h = relu(conv2d(images, params["conv.w"], params["conv.b"], 2, 2));
    CapsGrid prim{conv2d(h, params["prim.pose.w"], params["prim.pose.b"], 1, 1),
                  sigmoid(conv2d(h, params["prim.act.w"], params["prim.act.b"], 1, 1))};

    CapsGrid cc1 = routed_conv_caps(prim, spec.prim_caps, spec.conv_caps1, 3, 2, params["cc1.T"],
                                    spec.voting == Voting::Affine ? params["cc1.bias"] : Var{},
                                    params["cc1.beta_a"], params["cc1.beta_u"], ropts,
                                    out.routing_r);
    if (spec.mcd_enabled) {
        Rng mrng = rng.split("mcd-cc1");
        cc1.acts = matrix_capsule_dropout(cc1.acts, spec.mcd_p, mrng, training);
    }

    CapsGrid cc2 = routed_conv_caps(cc1, spec.conv_caps1, spec.conv_caps2, 3, 1, params["cc2.T"],
                                    spec.voting == Voting::Affine ? params["cc2.bias"] : Var{},
                                    params["cc2.beta_a"], params["cc2.beta_u"], ropts,
                                    out.routing_r);
    if (spec.mcd_enabled) {
        Rng mrng = rng.split("mcd-cc2");
        cc2.acts = matrix_capsule_dropout(cc2.acts, spec.mcd_p, mrng, training);
    }

    const Shape& gs = cc2.poses.shape();  // [N, gh, gw, D*16]
    int gh = gs[1], gw = gs[2];
    Var pose_g = reshape(cc2.poses, {n, gh, gw, d, 1, 4, 4});
    Var votes = matmul(pose_g, params["class.T"]);  // [N,gh,gw,D,E,4,4]
    if (spec.voting == Voting::Affine) votes = add(votes, params["class.bias"]);
    Var votes16 = reshape(votes, {n, gh, gw, d, e, 16});

    // Coordinate addition: receptive-field centers enter two vote dims so the
    // shared class transforms stay position aware.
    Tensor coord = Tensor::zeros({1, gh, gw, 1, 1, 16});
    for (int yy = 0; yy < gh; ++yy)
        for (int xx = 0; xx < gw; ++xx) {
            coord.at({0, yy, xx, 0, 0, 3}) = (yy + 0.5) / gh;
            coord.at({0, yy, xx, 0, 0, 7}) = (xx + 0.5) / gw;
        }
    votes16 = add(votes16, tape.constant(std::move(coord)));
    votes16 = reshape(votes16, {n, gh * gw * d, e, 16});
    Var child_act = reshape(cc2.acts, {n, gh * gw * d});

    RoutingOut ro =
        em_routing(votes16, child_act, params["class.beta_a"], params["class.beta_u"], ropts);
    for (Var rr : ro.r_after_estep) out.routing_r.push_back(rr);

    out.scores = ro.score;
    out.activations = ro.act;
    out.poses = ro.mu;
    return out;
}

}  // namespace capsdet
