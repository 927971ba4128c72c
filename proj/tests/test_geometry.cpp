#include "oracles.hpp"

#include "smalldet/geometry.hpp"

#include <doctest.h>

#include <limits>

using namespace smalldet;

TEST_CASE("iou hand cases")
{
    CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0f);
    CHECK(iou({0, 0, 1, 1}, {5, 5, 6, 6}) == 0.0f);
    CHECK(iou({0, 0, 2, 2}, {1, 0, 3, 2}) == doctest::Approx(1.0 / 3.0));
    CHECK(iou({1, 1, 1, 1}, {1, 1, 1, 1}) == 0.0f);
}

TEST_CASE("iou is symmetric, bounded and agrees with the definition")
{
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        auto box = [&] {
            const float x = static_cast<float>(rng.uniform(0, 50)), y = static_cast<float>(rng.uniform(0, 50));
            return CornerBox{x, y, x + static_cast<float>(rng.uniform(0, 30)), y + static_cast<float>(rng.uniform(0, 30))};
        };
        const auto a = box(), b = box();
        const float ab = iou(a, b);
        CHECK(ab == iou(b, a));
        CHECK(ab >= 0.0f);
        CHECK(ab <= 1.0f);
        CHECK(ab == doctest::Approx(oracle::iou(a, b)).epsilon(1e-5));
        if (a.area() > 0.0f) {
            CHECK(iou(a, a) == doctest::Approx(1.0f));
        }
    }
}

TEST_CASE("wh_iou hand cases and co-centered cross-check")
{
    CHECK(wh_iou(10, 10, 10, 10) == 1.0f);
    CHECK(wh_iou(10, 10, 20, 20) == doctest::Approx(0.25));
    CHECK(wh_iou(4, 8, 8, 4) == doctest::Approx(1.0 / 3.0));
    CHECK(wh_iou(0, 0, 0, 0) == 0.0f);
    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
        const float wa = static_cast<float>(rng.uniform(0.1, 40)), ha = static_cast<float>(rng.uniform(0.1, 40));
        const float wb = static_cast<float>(rng.uniform(0.1, 40)), hb = static_cast<float>(rng.uniform(0.1, 40));
        const CornerBox a{-wa / 2, -ha / 2, wa / 2, ha / 2}, b{-wb / 2, -hb / 2, wb / 2, hb / 2};
        CHECK(wh_iou(wa, ha, wb, hb) == doctest::Approx(oracle::iou(a, b)).epsilon(1e-5));
    }
}

TEST_CASE("corner conversion")
{
    const auto full = to_corner({0.5f, 0.5f, 1.0f, 1.0f}, 416, 416, BoxUnits::normalized);
    CHECK(full == CornerBox{0, 0, 416, 416});
    const auto px = to_corner({100, 250, 50, 30}, 1, 1, BoxUnits::pixels);
    CHECK(px == CornerBox{75, 235, 125, 265});
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const Box b{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                    static_cast<float>(rng.uniform())};
        const auto back = from_corner(to_corner(b, 640, 480, BoxUnits::normalized), 640, 480, BoxUnits::normalized);
        CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-6));
        CHECK(back.cy == doctest::Approx(b.cy).epsilon(1e-6));
        CHECK(back.w == doctest::Approx(b.w).epsilon(1e-5));
        CHECK(back.h == doctest::Approx(b.h).epsilon(1e-5));
    }
}

TEST_CASE("conversion rejects non-finite input and empty images")
{
    const float nan = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(to_corner({nan, 0, 1, 1}, 10, 10, BoxUnits::normalized), GeometryError);
    CHECK_THROWS_AS(to_corner({0, 0, 1, 1}, 0, 10, BoxUnits::normalized), GeometryError);
    CHECK_THROWS_AS(from_corner({0, 0, 1, 1}, 10, -1, BoxUnits::normalized), GeometryError);
}

TEST_CASE("clamp_to_image clips to the frame")
{
    const auto c = clamp_to_image({-5, 3, 120, 140}, 100, 100);
    CHECK(c == CornerBox{0, 3, 100, 100});
}
