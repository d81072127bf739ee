#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "capsdet/errors.hpp"
#include "capsdet/tensor.hpp"

using namespace capsdet;

TEST_CASE("construction and shape invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.dim(0) == 2);
    CHECK(t.dim(-1) == 3);
    for (int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);

    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("scalar tensor") {
    Tensor s = Tensor::scalar(4.5);
    CHECK(s.rank() == 0);
    CHECK(s.size() == 1);
    CHECK(s.item() == 4.5);
}

TEST_CASE("at uses row-major order") {
    Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
    CHECK(t.at({0, 0}) == 0.0);
    CHECK(t.at({0, 2}) == 2.0);
    CHECK(t.at({1, 0}) == 3.0);
    CHECK(t.at({1, 2}) == 5.0);
}

TEST_CASE("reshape preserves data") {
    Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at({2, 1}) == 5.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("argmax_rows picks first maximum") {
    Tensor t({3, 4}, {0, 3, 3, 1,  //
                      5, 2, 2, 2,  //
                      1, 1, 1, 9});
    auto idx = argmax_rows(t);
    CHECK(idx == std::vector<int>{1, 0, 3});
}

TEST_CASE("all_finite flags nan and inf") {
    Tensor t({2}, {1.0, 2.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("bitwise_equal distinguishes -0.0") {
    Tensor a({1}, {0.0});
    Tensor b({1}, {-0.0});
    CHECK(bitwise_equal(a, a));
    CHECK_FALSE(bitwise_equal(a, b));
}

TEST_CASE("row_major_strides") {
    auto s = row_major_strides({2, 3, 4});
    CHECK(s == std::vector<int64_t>{12, 4, 1});
}
