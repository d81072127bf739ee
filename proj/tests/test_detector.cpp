#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "capsdet/detector.hpp"
#include "capsdet/errors.hpp"
#include "capsdet/gradcheck.hpp"
#include "capsdet/nn.hpp"
#include "capsdet/rng.hpp"

using namespace capsdet;

namespace {

Tensor random_tensor(Rng& r, const Shape& s, double lo = 0.0, double hi = 1.0) {
    Tensor t(s);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("decoder output size and range") {
    DecoderSpec spec{8, 12, 7, 5, 2};
    ParamRegistry reg;
    add_decoder_params(reg, spec, Rng::from_seed(1), 0.0);
    Rng r = Rng::from_seed(2);
    Tape t;
    BoundParams bp(t, reg, false);
    Var img = decode(t.input(random_tensor(r, {3, 16}, -1, 1)), bp, spec);
    CHECK(img.shape() == Shape{3, 7, 5, 2});
    for (int64_t i = 0; i < img.value().size(); ++i) {
        CHECK(img.value()[i] > 0.0);
        CHECK(img.value()[i] < 1.0);
    }
}

TEST_CASE("reconstruction delta hand values") {
    Tape t;
    Rng r = Rng::from_seed(3);
    Tensor x = random_tensor(r, {1, 28, 28, 1});
    Var vx = t.input(x);
    CHECK(reconstruction_delta(vx, vx).value()[0] == 0.0);

    // All-ones versus all-zeros at 28x28: sqrt(784)/784 = 1/28.
    Var ones = t.input(Tensor::ones({1, 28, 28, 1}));
    Var zeros = t.input(Tensor::zeros({1, 28, 28, 1}));
    CHECK(reconstruction_delta(ones, zeros).value()[0] ==
          doctest::Approx(1.0 / 28.0).epsilon(1e-12));

    // Homogeneity: doubling differences doubles the delta.
    Tensor a = random_tensor(r, {1, 6, 6, 1});
    Tensor b = random_tensor(r, {1, 6, 6, 1});
    Tensor b2(b.shape());
    for (int64_t i = 0; i < b.size(); ++i) b2[i] = a[i] + 2.0 * (b[i] - a[i]);
    double d1 = reconstruction_delta(t.input(b), t.input(a)).value()[0];
    double d2 = reconstruction_delta(t.input(b2), t.input(a)).value()[0];
    CHECK(d2 == doctest::Approx(2.0 * d1).epsilon(1e-12));

    // Channels enter the norm, not the denominator.
    Var ones3 = t.input(Tensor::ones({1, 28, 28, 3}));
    Var zeros3 = t.input(Tensor::zeros({1, 28, 28, 3}));
    CHECK(reconstruction_delta(ones3, zeros3).value()[0] ==
          doctest::Approx(std::sqrt(3.0 * 784.0) / 784.0).epsilon(1e-12));
}

TEST_CASE("delta gradient w.r.t. embedding passes finite differences") {
    DecoderSpec spec{6, 8, 5, 5, 1};
    ParamRegistry reg;
    add_decoder_params(reg, spec, Rng::from_seed(4), 0.0);
    Rng r = Rng::from_seed(5);
    Tensor emb = random_tensor(r, {2, 16}, -1, 1);
    Tensor target = random_tensor(r, {2, 5, 5, 1});
    auto loss = [&](const Tensor& e) {
        Tape t;
        BoundParams bp(t, reg, false);
        Var recon = decode(t.input(e, true), bp, spec);
        return sum(reconstruction_delta(recon, t.input(target))).value().item();
    };
    Tape t;
    BoundParams bp(t, reg, false);
    Var ve = t.input(emb, true);
    Var recon = decode(ve, bp, spec);
    t.backward(sum(reconstruction_delta(recon, t.input(target))));
    CHECK(finite_difference_check(loss, emb, t.grad(ve)) < 1e-4);
}

TEST_CASE("calibration percentile uses linear interpolation") {
    std::vector<double> losses;
    for (int i = 1; i <= 100; ++i) losses.push_back(i);
    CHECK(calibrate_threshold(losses, 95.0) == doctest::Approx(95.05).epsilon(1e-12));
    CHECK(calibrate_threshold(losses, 100.0) == 100.0);
    CHECK(calibrate_threshold(losses, 0.0) == 1.0);
    CHECK(calibrate_threshold({3.0, 1.0, 2.0}, 50.0) == 2.0);
    CHECK(calibrate_threshold({0.7, 0.7, 0.7}, 95.0) == 0.7);
    CHECK_THROWS_AS(calibrate_threshold({}, 95.0), ContractError);
}

TEST_CASE("detect boundary is benign and monotone") {
    CHECK(detect(0.5, 0.5) == 0);
    CHECK(detect(0.5 + 1e-12, 0.5) == 1);
    CHECK(detect(0.0, 0.0) == 0);
    CHECK_THROWS_AS(detect(-0.1, 0.5), DomainError);
    double last = 0;
    for (double d = 0.0; d <= 1.0; d += 0.01) {
        double now = detect(d, 0.37);
        CHECK(now >= last);
        last = now;
    }
}

TEST_CASE("calibration on its own split controls the flag rate") {
    Rng r = Rng::from_seed(6);
    std::vector<double> losses;
    for (int i = 0; i < 2000; ++i) losses.push_back(std::abs(r.normal(0.1, 0.03)));
    DetectorState st = make_detector(losses, 95.0);
    int flagged = 0;
    for (double d : losses) flagged += detect(d, st.alpha_crit);
    double rate = flagged / 2000.0;
    CHECK(rate <= 0.05 + 1.0 / 2000.0);
    CHECK(rate >= 0.04);
    // All-equal losses never self-flag.
    DetectorState flat = make_detector(std::vector<double>(100, 0.2), 95.0);
    CHECK(detect(0.2, flat.alpha_crit) == 0);
}
