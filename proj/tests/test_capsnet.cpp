#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "capsdet/capsnet.hpp"
#include "capsdet/errors.hpp"
#include "capsdet/nn.hpp"
#include "capsdet/rng.hpp"

using namespace capsdet;

namespace {

Tensor random_tensor(Rng& r, const Shape& s, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.uniform(lo, hi);
    return t;
}

// Straight-line scalar transcription of one M-step from uniform assignments;
// written independently of the tape implementation.
struct ScalarEm {
    std::vector<double> mu;   // [par*16]
    std::vector<double> act;  // [par]
};

ScalarEm scalar_em_1iter(const Tensor& votes, const Tensor& acts, const Tensor& beta_a,
                         const Tensor& beta_u, double lambda) {
    int ch = votes.dim(0), par = votes.dim(1);
    ScalarEm out;
    out.mu.assign(static_cast<size_t>(par) * 16, 0.0);
    out.act.assign(static_cast<size_t>(par), 0.0);
    double r0 = 1.0 / par;
    for (int p = 0; p < par; ++p) {
        double mass = 0.0;
        for (int c = 0; c < ch; ++c) mass += r0 * acts[c];
        double denom = mass + 1e-12;
        for (int h = 0; h < 16; ++h) {
            double num = 0.0;
            for (int c = 0; c < ch; ++c) num += r0 * acts[c] * votes.at({c, p, h});
            out.mu[static_cast<size_t>(p) * 16 + h] = num / denom;
        }
        double cost = 0.0;
        for (int h = 0; h < 16; ++h) {
            double varnum = 0.0;
            for (int c = 0; c < ch; ++c) {
                double d = votes.at({c, p, h}) - out.mu[static_cast<size_t>(p) * 16 + h];
                varnum += r0 * acts[c] * d * d;
            }
            double var = varnum / denom;
            if (var < 1e-6) var = 1e-6;
            cost += (beta_u[p] + 0.5 * std::log(var)) * mass;
        }
        double score = lambda * (beta_a[p] - cost);
        out.act[static_cast<size_t>(p)] = 1.0 / (1.0 + std::exp(-score));
    }
    return out;
}

CapsNetSpec tiny_spec() {
    CapsNetSpec s;
    s.image_side = 17;
    s.image_channels = 1;
    s.conv_channels = 4;
    s.prim_caps = 2;
    s.conv_caps1 = 2;
    s.conv_caps2 = 2;
    s.class_caps = 3;
    return s;
}

}  // namespace

TEST_CASE("em routing matches the scalar transcription over 100 seeded cases") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng r = Rng::from_seed(seed).split("em-oracle");
        int ch = 3, par = 2;
        Tensor votes = random_tensor(r, {ch, par, 16}, -2, 2);
        Tensor acts = random_tensor(r, {ch}, 0, 1);
        Tensor ba = random_tensor(r, {par}, -1, 1);
        Tensor bu = random_tensor(r, {par}, -1, 1);
        ScalarEm want = scalar_em_1iter(votes, acts, ba, bu, 0.01);

        Tape t;
        RoutingOpts opts;
        opts.iterations = 1;
        RoutingOut got = em_routing(t.input(votes), t.input(acts), t.input(ba), t.input(bu), opts);
        for (int p = 0; p < par; ++p) {
            CHECK(std::abs(got.act.value()[p] - want.act[static_cast<size_t>(p)]) < 1e-9);
            for (int h = 0; h < 16; ++h)
                CHECK(std::abs(got.mu.value().at({p, h}) -
                               want.mu[static_cast<size_t>(p) * 16 + h]) < 1e-9);
        }
    }
}

TEST_CASE("routing invariants over random calls") {
    for (uint64_t seed = 0; seed < 60; ++seed) {
        Rng r = Rng::from_seed(seed).split("em-inv");
        int ch = 2 + static_cast<int>(r.uniform_int(6));
        int par = 2 + static_cast<int>(r.uniform_int(4));
        Tape t;
        RoutingOpts opts;
        opts.iterations = 3;
        RoutingOut out = em_routing(t.input(random_tensor(r, {ch, par, 16}, -2, 2)),
                                    t.input(random_tensor(r, {ch}, 0, 1)),
                                    t.input(random_tensor(r, {par}, -1, 1)),
                                    t.input(random_tensor(r, {par}, -1, 1)), opts);
        CHECK(out.r_after_estep.size() == 2);
        for (Var rv : out.r_after_estep) {
            const Tensor& rm = rv.value();
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (int p = 0; p < par; ++p) s += rm.at({c, p});
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
        }
        const Tensor& a = out.act.value();
        for (int64_t i = 0; i < a.size(); ++i) {
            CHECK(a[i] >= 0.0);
            CHECK(a[i] <= 1.0);
        }
    }
}

TEST_CASE("degenerate routing inputs produce no NaN") {
    Tape t;
    // Identical votes everywhere, zero child activations.
    Tensor votes = Tensor::full({4, 3, 16}, 0.7);
    Tensor acts = Tensor::zeros({4});
    RoutingOpts opts;
    opts.iterations = 2;
    RoutingOut out = em_routing(t.input(votes), t.input(acts), t.input(Tensor::zeros({3})),
                                t.input(Tensor::zeros({3})), opts);
    CHECK(out.mu.value().all_finite());
    CHECK(out.act.value().all_finite());
}

TEST_CASE("identical votes with unit activations collapse to that vote") {
    Tape t;
    Rng r = Rng::from_seed(4);
    Tensor one_vote = random_tensor(r, {1, 1, 16}, -1, 1);
    Tensor votes({5, 2, 16});
    for (int c = 0; c < 5; ++c)
        for (int p = 0; p < 2; ++p)
            for (int h = 0; h < 16; ++h) votes.at({c, p, h}) = one_vote.at({0, 0, h});
    RoutingOpts opts;
    opts.iterations = 2;
    RoutingOut out = em_routing(t.input(votes), t.input(Tensor::ones({5})),
                                t.input(Tensor::zeros({2})), t.input(Tensor::zeros({2})), opts);
    for (int p = 0; p < 2; ++p)
        for (int h = 0; h < 16; ++h)
            CHECK(out.mu.value().at({p, h}) == doctest::Approx(one_vote.at({0, 0, h})).epsilon(1e-12));
}

TEST_CASE("single child single parent routes everything") {
    Tape t;
    Rng r = Rng::from_seed(5);
    RoutingOpts opts;
    opts.iterations = 3;
    RoutingOut out = em_routing(t.input(random_tensor(r, {1, 1, 16})),
                                t.input(Tensor({1}, {0.8})), t.input(Tensor::zeros({1})),
                                t.input(Tensor::zeros({1})), opts);
    for (Var rv : out.r_after_estep) CHECK(rv.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("compute_votes modes") {
    Tape t;
    Rng r = Rng::from_seed(6);
    Tensor poses = random_tensor(r, {2, 3, 16});
    Tensor ident({3, 2, 4, 4});
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 2; ++p)
            for (int i = 0; i < 4; ++i) ident.at({c, p, i, i}) = 1.0;
    Var vp = t.input(poses);
    Var vt = t.input(ident);
    Var zero_bias = t.input(Tensor::zeros({3, 2, 4, 4}));
    Tensor votes = compute_votes(vp, vt, zero_bias, Voting::Affine).value();
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < 2; ++p)
                for (int h = 0; h < 16; ++h)
                    CHECK(votes.at({n, c, p, h}) == poses.at({n, c, h}));

    Tensor bias = random_tensor(r, {3, 2, 4, 4});
    Tensor votes_b =
        compute_votes(vp, t.input(Tensor::zeros({3, 2, 4, 4})), t.input(bias), Voting::Affine)
            .value();
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 16; ++h)
            CHECK(votes_b.at({0, c, 0, h}) == bias.at({c, 0, h / 4, h % 4}));

    CHECK_THROWS_AS(compute_votes(vp, vt, zero_bias, Voting::Linear), ContractError);
    CHECK_THROWS_AS(compute_votes(vp, vt, Var{}, Voting::Affine), ContractError);
}

TEST_CASE("affine voting doubles parameters for every published config") {
    struct Row {
        int a, b, c, d, e;
    };
    Row rows[] = {{64, 8, 16, 16, 10},   // mnist
                  {128, 32, 24, 32, 10},  // svhn
                  {128, 24, 24, 32, 10},  // cifar10
                  {64, 8, 16, 16, 5}};    // smallnorb
    for (const Row& row : rows) {
        CapsNetSpec lin;
        lin.conv_channels = row.a;
        lin.prim_caps = row.b;
        lin.conv_caps1 = row.c;
        lin.conv_caps2 = row.d;
        lin.class_caps = row.e;
        CapsNetSpec aff = lin;
        aff.voting = Voting::Affine;
        VotingParamCounts l = capsnet_voting_params(lin);
        VotingParamCounts a = capsnet_voting_params(aff);
        CHECK(a.conv_caps1 == 2 * l.conv_caps1);
        CHECK(a.conv_caps2 == 2 * l.conv_caps2);
        CHECK(a.class_caps == 2 * l.class_caps);

        // Registry agrees with the closed-form count.
        ParamRegistry lr = build_capsnet_params(lin, Rng::from_seed(1), 0, 0);
        ParamRegistry ar = build_capsnet_params(aff, Rng::from_seed(1), 0, 0);
        auto voting_scalars = [](const ParamRegistry& reg) {
            int64_t n = 0;
            for (size_t i = 0; i < reg.count(); ++i) {
                const std::string& nm = reg.name(i);
                if (nm.ends_with(".T") || nm.ends_with(".bias")) n += reg.value(i).size();
            }
            return n;
        };
        CHECK(voting_scalars(lr) == l.total());
        CHECK(voting_scalars(ar) == a.total());
        CHECK(voting_scalars(ar) == 2 * voting_scalars(lr));
    }
}

TEST_CASE("matrix capsule dropout semantics") {
    Tape t;
    Rng r = Rng::from_seed(30);
    Var acts = t.input(random_tensor(r, {10000}, 0, 1));

    Rng r0 = r.split("a");
    Var inference = matrix_capsule_dropout(acts, 0.5, r0, false);
    CHECK(inference.id == acts.id);  // identity, not even a new node
    Rng r1 = r.split("b");
    Var p0 = matrix_capsule_dropout(acts, 0.0, r1, true);
    CHECK(p0.id == acts.id);

    Rng r2 = r.split("c");
    Var p1 = matrix_capsule_dropout(acts, 1.0, r2, true);
    for (int64_t i = 0; i < p1.value().size(); ++i) CHECK(p1.value()[i] == 0.0);

    for (double p : {0.25, 0.5, 0.75}) {
        Rng rp = r.split("p").split(static_cast<uint64_t>(p * 100));
        Var masked = matrix_capsule_dropout(acts, p, rp, true);
        int zeroed = 0;
        for (int64_t i = 0; i < masked.value().size(); ++i)
            if (masked.value()[i] == 0.0) ++zeroed;
        double frac = zeroed / 10000.0;
        double sigma = std::sqrt(p * (1 - p) / 10000.0);
        CHECK(std::abs(frac - p) < 4 * sigma + 1e-4);
    }
}

TEST_CASE("droproute masking renormalizes surviving rows") {
    Tape t;
    Var r4 = t.input(Tensor::full({4, 4}, 0.25));
    Rng rng = Rng::from_seed(31);
    Var masked = droproute_mask(r4, 0.5, rng);
    const Tensor& m = masked.value();
    for (int c = 0; c < 4; ++c) {
        double s = 0.0;
        bool any = false;
        for (int p = 0; p < 4; ++p) {
            s += m.at({c, p});
            if (m.at({c, p}) != 0.0) any = true;
        }
        if (any)
            CHECK(std::abs(s - 1.0) < 1e-9);
        else
            CHECK(s == 0.0);
    }
    Rng rng2 = Rng::from_seed(32);
    Var same = droproute_mask(r4, 0.0, rng2);
    CHECK(same.id == r4.id);
    Rng rng3 = Rng::from_seed(33);
    Var gone = droproute_mask(r4, 1.0, rng3);
    for (int64_t i = 0; i < gone.value().size(); ++i) CHECK(gone.value()[i] == 0.0);
}

TEST_CASE("spread loss values") {
    Tape t;
    // Perfect separation: target 1, others 0, temperature 1.
    Var a = t.input(Tensor({1, 3}, {1.0, 0.0, 0.0}));
    CHECK(spread_loss(a, {0}, 0.9, 1.0).value().item() == 0.0);
    // Tied competitor contributes margin^2.
    Var tie = t.input(Tensor({1, 2}, {0.5, 0.5}));
    CHECK(spread_loss(tie, {0}, 0.7, 1.0).value().item() ==
          doctest::Approx(0.49).epsilon(1e-12));
    // Random activations match a scalar recomputation within 1e-12.
    Rng r = Rng::from_seed(40);
    Tensor acts = random_tensor(r, {4, 5}, 0, 1);
    std::vector<int> targets{3, 0, 2, 4};
    double margin = 0.5, tau = 0.37;
    double want = 0.0;
    for (int n = 0; n < 4; ++n) {
        double at = acts.at({n, targets[static_cast<size_t>(n)]});
        for (int i = 0; i < 5; ++i) {
            if (i == targets[static_cast<size_t>(n)]) continue;
            double v = margin - (at - acts.at({n, i})) / tau;
            if (v > 0) want += v * v;
        }
    }
    want /= 4.0;
    CHECK(spread_loss(t.input(acts), targets, margin, tau).value().item() ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("spread schedules hit their endpoints") {
    SpreadSchedule s;
    CHECK(spread_margin_at(s, 0, 1000) == doctest::Approx(0.2));
    CHECK(spread_margin_at(s, 500, 1000) == doctest::Approx(0.55));
    CHECK(spread_margin_at(s, 1000, 1000) == doctest::Approx(0.9));
    CHECK(spread_temperature_at(s, 0, 1000) == doctest::Approx(1.0));
    CHECK(spread_temperature_at(s, 200, 1000) == doctest::Approx(0.01));
    CHECK(spread_temperature_at(s, 1000, 1000) == doctest::Approx(0.01));
}

TEST_CASE("forward pass shapes, ranges, and inference determinism") {
    CapsNetSpec spec = tiny_spec();
    ParamRegistry reg = build_capsnet_params(spec, Rng::from_seed(50), 0.0, 0.0);
    Rng r = Rng::from_seed(51);
    Tensor images = random_tensor(r, {2, 17, 17, 1}, 0, 1);

    auto run = [&]() {
        Tape t;
        BoundParams bp(t, reg, false);
        CapsForward f = capsnet_forward(t, t.input(images), bp, spec, false, Rng::from_seed(0));
        return std::pair<Tensor, Tensor>(f.activations.value(), f.poses.value());
    };
    auto [a1, p1] = run();
    auto [a2, p2] = run();
    CHECK(a1.shape() == Shape{2, 3});
    CHECK(p1.shape() == Shape{2, 3, 16});
    for (int64_t i = 0; i < a1.size(); ++i) {
        CHECK(a1[i] >= 0.0);
        CHECK(a1[i] <= 1.0);
    }
    CHECK(bitwise_equal(a1, a2));
    CHECK(bitwise_equal(p1, p2));
}

TEST_CASE("affine forward with zero bias is bit-identical to linear forward") {
    CapsNetSpec lin = tiny_spec();
    CapsNetSpec aff = lin;
    aff.voting = Voting::Affine;
    ParamRegistry lr = build_capsnet_params(lin, Rng::from_seed(60), 0.0, 0.0);
    ParamRegistry ar = build_capsnet_params(aff, Rng::from_seed(60), 0.0, 0.0);
    // Same seed: transforms identical; affine adds zero-initialized biases.
    Rng r = Rng::from_seed(61);
    Tensor images = random_tensor(r, {2, 17, 17, 1}, 0, 1);
    Tape t1, t2;
    BoundParams b1(t1, lr, false), b2(t2, ar, false);
    CapsForward f1 = capsnet_forward(t1, t1.input(images), b1, lin, false, Rng::from_seed(0));
    CapsForward f2 = capsnet_forward(t2, t2.input(images), b2, aff, false, Rng::from_seed(0));
    CHECK(bitwise_equal(f1.activations.value(), f2.activations.value()));
    CHECK(bitwise_equal(f1.poses.value(), f2.poses.value()));
}

TEST_CASE("mcd changes training forward but never inference") {
    CapsNetSpec spec = tiny_spec();
    spec.mcd_enabled = true;
    spec.mcd_p = 0.5;
    ParamRegistry reg = build_capsnet_params(spec, Rng::from_seed(70), 0.0, 0.0);
    Rng r = Rng::from_seed(71);
    Tensor images = random_tensor(r, {2, 17, 17, 1}, 0, 1);
    auto run = [&](bool training, uint64_t rng_seed) {
        Tape t;
        BoundParams bp(t, reg, false);
        return capsnet_forward(t, t.input(images), bp, spec, training, Rng::from_seed(rng_seed))
            .activations.value();
    };
    CHECK(bitwise_equal(run(false, 1), run(false, 2)));
    CHECK_FALSE(bitwise_equal(run(true, 1), run(false, 1)));
}

TEST_CASE("spread loss gradient through tiny capsnet passes spot checks") {
    CapsNetSpec spec = tiny_spec();
    ParamRegistry reg = build_capsnet_params(spec, Rng::from_seed(80), 0.0, 0.0);
    Rng r = Rng::from_seed(81);
    Tensor images = random_tensor(r, {2, 17, 17, 1}, 0, 1);
    std::vector<int> targets{1, 2};

    // Analytic grads once.
    Tape t;
    BoundParams bp(t, reg, true);
    CapsForward f = capsnet_forward(t, t.input(images), bp, spec, false, Rng::from_seed(0));
    Var loss = spread_loss(f.activations, targets, 0.5, 0.5);
    t.backward(loss, true);

    double eps = 1e-5;
    Rng pick = Rng::from_seed(82);
    for (size_t pi = 0; pi < reg.count(); ++pi) {
        const Tensor& g = t.grad(bp.at(pi));
        Tensor& pt = reg.value(pi);
        int probes = static_cast<int>(std::min<int64_t>(4, pt.size()));
        for (int k = 0; k < probes; ++k) {
            int64_t idx = pick.uniform_int(pt.size());
            double orig = pt[idx];
            auto eval = [&]() {
                Tape tt;
                BoundParams bb(tt, reg, false);
                CapsForward ff =
                    capsnet_forward(tt, tt.input(images), bb, spec, false, Rng::from_seed(0));
                return spread_loss(ff.activations, targets, 0.5, 0.5).value().item();
            };
            pt[idx] = orig + eps;
            double hi = eval();
            pt[idx] = orig - eps;
            double lo = eval();
            pt[idx] = orig;
            double numeric = (hi - lo) / (2 * eps);
            double analytic = g[idx];
            double rel = std::abs(analytic - numeric) /
                         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            CAPTURE(reg.name(pi));
            CHECK(rel < 1e-3);
        }
    }
}
