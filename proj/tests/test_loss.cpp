#include "generators.hpp"
#include "oracles.hpp"

#include "smalldet/assign.hpp"
#include "smalldet/loss.hpp"

#include <doctest.h>

using namespace smalldet;

namespace {

// One 1x1 head, one anchor of 32x32 px, K classes.
ScaleSpec unit_head(int classes_unused = 0)
{
    (void)classes_unused;
    ScaleSpec s;
    s.stride = 32;
    s.grid = 1;
    s.mask = {0};
    s.anchors = {{32.0f, 32.0f}};
    return s;
}

ScaleTargets empty_targets(int A, int S, int K)
{
    ScaleTargets t;
    t.anchors = A;
    t.grid = S;
    t.classes = K;
    const std::size_t n = static_cast<std::size_t>(A) * S * S;
    t.obj.assign(n, 0);
    t.noobj.assign(n, 1);
    t.tx.assign(n, 0.0f);
    t.ty.assign(n, 0.0f);
    t.tw.assign(n, 0.0f);
    t.th.assign(n, 0.0f);
    t.cls.assign(n * K, 0.0f);
    return t;
}

double logit(double p)
{
    return std::log(p / (1.0 - p));
}

}  // namespace

TEST_CASE("perfect predictions give zero loss and zero gradient")
{
    const auto head = unit_head();
    auto t = empty_targets(1, 1, 2);
    t.obj[0] = 1;
    t.noobj[0] = 0;
    t.tx[0] = 0.25f;
    t.ty[0] = 0.75f;
    t.tw[0] = 0.5f;
    t.th[0] = -0.25f;
    t.cls[1] = 1.0f;
    TargetTensor tt{{t}};
    // Saturated objectness/class logits reach the targets to double precision.
    Tensor64 raw({1, 7, 1, 1}, std::vector<double>{logit(0.25), logit(0.75), 0.5, -0.25, 60.0, -60.0, 60.0});
    std::vector<Tensor64> grads;
    const auto l = detection_loss<double>(std::span(&raw, 1), std::span(&tt, 1), std::span(&head, 1), LossWeights{}, &grads);
    CHECK(l.total == doctest::Approx(0.0).epsilon(1e-12));
    for (double g : grads[0].data()) {
        CHECK(std::abs(g) < 1e-12);
    }
}

TEST_CASE("single-cell localization error is lambda_coord * dx^2")
{
    const auto head = unit_head();
    auto t = empty_targets(1, 1, 1);
    t.obj[0] = 1;
    t.noobj[0] = 0;
    t.tx[0] = 0.5f;
    t.ty[0] = 0.5f;
    t.cls[0] = 1.0f;
    TargetTensor tt{{t}};
    Tensor64 raw({1, 6, 1, 1}, std::vector<double>{logit(0.6), 0.0, 0.0, 0.0, 60.0, 60.0});
    const auto l = detection_loss<double>(std::span(&raw, 1), std::span(&tt, 1), std::span(&head, 1), LossWeights{});
    CHECK(l.loc == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(l.total == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("an image without objects only pays the background term")
{
    const auto head = unit_head();
    TargetTensor tt{{empty_targets(1, 1, 2)}};
    Tensor64 raw({1, 7, 1, 1}, std::vector<double>{0.3, -0.2, 0.1, 0.4, 0.5, 0.2, -0.7});
    const auto l = detection_loss<double>(std::span(&raw, 1), std::span(&tt, 1), std::span(&head, 1), LossWeights{});
    CHECK(l.loc == 0.0);
    CHECK(l.conf_obj == 0.0);
    CHECK(l.cls == 0.0);
    const double s = 1.0 / (1.0 + std::exp(-0.5));
    CHECK(l.conf_noobj == doctest::Approx(0.5 * s * s));
}

TEST_CASE("ignore-band slots contribute neither loss nor gradient")
{
    const auto head = unit_head();
    auto t = empty_targets(1, 1, 2);
    t.noobj[0] = 0;
    TargetTensor tt{{t}};
    Tensor64 raw({1, 7, 1, 1}, 0.7);
    std::vector<Tensor64> grads;
    const auto l = detection_loss<double>(std::span(&raw, 1), std::span(&tt, 1), std::span(&head, 1), LossWeights{}, &grads);
    CHECK(l.total == 0.0);
    for (double g : grads[0].data()) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("loss gradients match central differences on random instances")
{
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto in = gen::random_loss_instance(rng, trial % 4 == 3 ? ClassLoss::cross_entropy : ClassLoss::squared_error);
        const auto analytic = loss_gradients<double>(in.raw, in.targets, in.heads, in.cfg.loss);
        for (std::size_t h = 0; h < in.raw.size(); ++h) {
            std::vector<double> flat = oracle::to_vec(in.raw[h]);
            auto f = [&] {
                std::copy(flat.begin(), flat.end(), in.raw[h].raw());
                return detection_loss<double>(in.raw, in.targets, in.heads, in.cfg.loss).total;
            };
            const auto num = oracle::numeric_grad(flat, f);
            std::copy(flat.begin(), flat.end(), in.raw[h].raw());
            CHECK(oracle::rel_error(oracle::to_vec(analytic[h]), num) < 1e-4);
        }
    }
}

TEST_CASE("loss components are non-negative and sum to the total")
{
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const auto in = gen::random_loss_instance(rng, ClassLoss::squared_error);
        const auto l = detection_loss<double>(in.raw, in.targets, in.heads, in.cfg.loss);
        CHECK(l.loc >= 0.0);
        CHECK(l.conf_obj >= 0.0);
        CHECK(l.conf_noobj >= 0.0);
        CHECK(l.cls >= 0.0);
        CHECK(l.total == doctest::Approx(l.loc + l.conf_obj + l.conf_noobj + l.cls));
    }
}

TEST_CASE("scaling lambda_noobj scales only the background term")
{
    Rng rng(9);
    const auto in = gen::random_loss_instance(rng, ClassLoss::squared_error);
    LossWeights w = in.cfg.loss;
    const auto a = detection_loss<double>(in.raw, in.targets, in.heads, w);
    w.lambda_noobj *= 2.0f;
    const auto b = detection_loss<double>(in.raw, in.targets, in.heads, w);
    CHECK(b.conf_noobj == doctest::Approx(2.0 * a.conf_noobj));
    CHECK(b.loc == a.loc);
    CHECK(b.conf_obj == a.conf_obj);
    CHECK(b.cls == a.cls);
}

TEST_CASE("loss is invariant to batch order")
{
    Rng rng(10);
    gen::LossInstance in;
    do {
        in = gen::random_loss_instance(rng, ClassLoss::squared_error);
    } while (in.targets.size() < 2);
    const auto a = detection_loss<double>(in.raw, in.targets, in.heads, in.cfg.loss);
    std::swap(in.targets[0], in.targets[1]);
    for (auto& r : in.raw) {
        const std::size_t half = r.size() / 2;
        std::swap_ranges(r.raw(), r.raw() + half, r.raw() + half);
    }
    const auto b = detection_loss<double>(in.raw, in.targets, in.heads, in.cfg.loss);
    CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
}

TEST_CASE("a fixed absolute width error costs less on a large box")
{
    auto loc_for = [](double gt_w, double pred_w) {
        ScaleSpec head = unit_head();
        head.anchors = {{20.0f, 20.0f}};
        auto t = empty_targets(1, 1, 1);
        t.obj[0] = 1;
        t.noobj[0] = 0;
        t.tx[0] = t.ty[0] = 0.5f;
        t.tw[0] = static_cast<float>(std::log(gt_w / 20.0));
        t.cls[0] = 1.0f;
        TargetTensor tt{{t}};
        Tensor64 raw({1, 6, 1, 1}, std::vector<double>{0.0, 0.0, std::log(pred_w / 20.0), 0.0, 60.0, 60.0});
        return detection_loss<double>(std::span(&raw, 1), std::span(&tt, 1), std::span(&head, 1), LossWeights{}).loc;
    };
    CHECK(loc_for(100.0, 105.0) < loc_for(10.0, 15.0));
}

TEST_CASE("mismatched shapes are rejected")
{
    const auto head = unit_head();
    TargetTensor tt{{empty_targets(1, 1, 2)}};
    Tensor64 raw({1, 7, 2, 2});
    CHECK_THROWS_AS(detection_loss<double>(std::span(&raw, 1), std::span(&tt, 1), std::span(&head, 1), LossWeights{}),
                    LossError);
}
