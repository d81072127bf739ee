#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "capsdet/errors.hpp"
#include "capsdet/gradcheck.hpp"
#include "capsdet/nn.hpp"
#include "capsdet/rng.hpp"
#include "capsdet/tape.hpp"

using namespace capsdet;

namespace {

Tensor random_tensor(Rng& r, const Shape& s, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = r.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv2d all-ones oracle: 5x5 ones, 3x3 ones kernel -> 3x3 all 9") {
    Tape t;
    Var x = t.input(Tensor::ones({1, 5, 5, 1}));
    Var w = t.input(Tensor::ones({3, 3, 1, 1}));
    Var y = conv2d(x, w, Var{}, 1, 1);
    CHECK(y.shape() == Shape{1, 3, 3, 1});
    for (int64_t i = 0; i < y.value().size(); ++i) CHECK(y.value()[i] == 9.0);
}

TEST_CASE("conv2d stride and valid padding shrink as expected") {
    Tape t;
    // 28 -> (28-5)/2+1 = 12 matches the capsule stack's first layer.
    Var x = t.input(Tensor::ones({1, 28, 28, 1}));
    Var w = t.input(Tensor::ones({5, 5, 1, 3}));
    Var b = t.input(Tensor::ones({3}));
    Var y = conv2d(x, w, b, 2, 2);
    CHECK(y.shape() == Shape{1, 12, 12, 3});
    CHECK(y.value().at({0, 0, 0, 0}) == 26.0);  // 25 ones + bias
}

TEST_CASE("conv2d gradient check") {
    Rng r = Rng::from_seed(31);
    Tensor x = random_tensor(r, {2, 5, 5, 2});
    Tensor w = random_tensor(r, {3, 3, 2, 3});
    Tensor b = random_tensor(r, {3});
    auto loss_x = [&](const Tensor& xx) {
        Tape t;
        Var y = conv2d(t.input(xx, true), t.input(w), t.input(b), 2, 2);
        return sum(square(y)).value().item();
    };
    Tape t;
    Var vx = t.input(x, true);
    Var vw = t.input(w, true);
    Var y = conv2d(vx, vw, t.input(b), 2, 2);
    t.backward(sum(square(y)), true);
    CHECK(finite_difference_check(loss_x, x, t.grad(vx)) < 1e-4);
    auto loss_w = [&](const Tensor& ww) {
        Tape t2;
        Var y2 = conv2d(t2.input(x), t2.input(ww, true), t2.input(b), 2, 2);
        return sum(square(y2)).value().item();
    };
    CHECK(finite_difference_check(loss_w, w, t.grad(vw)) < 1e-4);
}

TEST_CASE("maxpool picks window maxima") {
    Tape t;
    Tensor x({1, 4, 4, 1}, {1, 2, 3, 4,   //
                            5, 6, 7, 8,   //
                            9, 10, 11, 12,  //
                            13, 14, 15, 16});
    Var y = maxpool(t.input(x), 2, 2, 2, 2);
    CHECK(y.shape() == Shape{1, 2, 2, 1});
    CHECK(y.value()[0] == 6.0);
    CHECK(y.value()[1] == 8.0);
    CHECK(y.value()[2] == 14.0);
    CHECK(y.value()[3] == 16.0);
}

TEST_CASE("softplus and log_sigmoid stay finite and match references") {
    Tape t;
    double xs[] = {-50.0, -3.0, -0.5, 0.7, 4.0, 50.0};
    for (double v : xs) {
        double sp = softplus(t.scalar(v)).value().item();
        double ref = v > 30 ? v : std::log1p(std::exp(v));
        CHECK(sp == doctest::Approx(ref).epsilon(1e-12));
        double ls = log_sigmoid(t.scalar(v)).value().item();
        CHECK(ls == doctest::Approx(std::log(1.0 / (1.0 + std::exp(-v)))).epsilon(1e-9));
    }
    // No overflow at extreme inputs.
    CHECK(softplus(t.scalar(700.0)).value().item() == doctest::Approx(700.0));
    CHECK(log_sigmoid(t.scalar(-700.0)).value().item() == doctest::Approx(-700.0));
}

TEST_CASE("clamp_min floors values") {
    Tape t;
    Var y = clamp_min(t.input(Tensor({3}, {-2.0, 0.5, 3.0})), 1.0);
    CHECK(y.value()[0] == 1.0);
    CHECK(y.value()[1] == 1.0);
    CHECK(y.value()[2] == 3.0);
}

TEST_CASE("one_hot layout and range check") {
    Tensor oh = one_hot({2, 0}, 3);
    CHECK(oh.shape() == Shape{2, 3});
    CHECK(oh.at({0, 2}) == 1.0);
    CHECK(oh.at({1, 0}) == 1.0);
    CHECK(oh.at({0, 0}) == 0.0);
    CHECK_THROWS_AS(one_hot({3}, 3), DomainError);
}

TEST_CASE("cross entropy hand value and numerical stability") {
    Tape t;
    // Uniform logits over K classes -> loss = log K.
    Var l = t.input(Tensor::zeros({2, 4}));
    Var y = t.input(one_hot({1, 3}, 4));
    CHECK(cross_entropy(l, y).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    // Huge logits must not overflow.
    Var big = t.input(Tensor({1, 3}, {1000.0, 0.0, -1000.0}));
    double v = cross_entropy(big, t.input(one_hot({0}, 3))).value().item();
    CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
    double w = cross_entropy(big, t.input(one_hot({2}, 3))).value().item();
    CHECK(w == doctest::Approx(2000.0).epsilon(1e-9));
}

TEST_CASE("cross entropy gradient is softmax minus target") {
    Rng r = Rng::from_seed(40);
    Tensor logits = random_tensor(r, {3, 5}, -2, 2);
    Tensor targets = one_hot({0, 2, 4}, 5);
    Tape t;
    Var vl = t.input(logits, true);
    Var ce = cross_entropy(vl, t.input(targets));
    t.backward(ce);
    Tensor g = t.grad(vl);
    Tape t2;
    Tensor sm = softmax(t2.input(logits), -1).value();
    for (int64_t i = 0; i < g.size(); ++i)
        CHECK(g[i] == doctest::Approx((sm[i] - targets[i]) / 3.0).epsilon(1e-9));
}

TEST_CASE("bilinear resize: identity at same size, constant preserved") {
    Rng r = Rng::from_seed(50);
    Tensor img = random_tensor(r, {6, 6, 2}, 0, 1);
    Tensor same = bilinear_resize(img, 6, 6);
    CHECK(bitwise_equal(same, img));
    Tensor flat = Tensor::full({5, 7, 1}, 0.37);
    Tensor up = bilinear_resize(flat, 11, 13);
    for (int64_t i = 0; i < up.size(); ++i) CHECK(up[i] == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("bilinear resize gradient flows through the plan") {
    Rng r = Rng::from_seed(51);
    Tensor img = random_tensor(r, {4, 5, 1}, 0, 1);
    auto plan = make_bilinear_resize_plan(4, 5, 1, 9, 7);
    auto loss = [&](const Tensor& x) {
        Tape t;
        Var y = stencil_affine(reshape(t.input(x, true), {20}), plan);
        return sum(square(y)).value().item();
    };
    Tape t;
    Var vx = t.input(img, true);
    Var y = stencil_affine(reshape(vx, {20}), plan);
    t.backward(sum(square(y)));
    CHECK(finite_difference_check(loss, img, t.grad(vx)) < 1e-4);
}
