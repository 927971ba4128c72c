#include "generators.hpp"
#include "oracles.hpp"

#include "smalldet/eval.hpp"

#include <doctest.h>

#include <json.hpp>

using namespace smalldet;

TEST_CASE("hand-traced three detection case is exactly five sixths")
{
    const std::vector<std::vector<LabeledBox>> gts{{{0, gen::square(0, 0, 10)}, {0, gen::square(50, 50, 10)}}};
    const std::vector<std::vector<Detection>> dets{
        {{0, 0.9f, gen::square(0, 0, 10)}, {0, 0.8f, gen::square(100, 100, 10)}, {0, 0.7f, gen::square(50, 50, 10)}}};
    const auto r = evaluate(dets, gts, 1);
    const auto& c = r.classes.at(0);
    REQUIRE(c.curve.size() == 3);
    CHECK(c.curve[0].precision == 1.0);
    CHECK(c.curve[0].recall == 0.5);
    CHECK(c.curve[1].precision == 0.5);
    CHECK(c.curve[1].recall == 0.5);
    CHECK(c.curve[2].precision == 2.0 / 3.0);
    CHECK(c.curve[2].recall == 1.0);
    CHECK(c.true_positives == 2);
    CHECK(c.ap == 5.0 / 6.0);
    CHECK(r.map == 5.0 / 6.0);
}

TEST_CASE("perfect and empty detectors")
{
    Rng rng(3);
    const auto in = gen::random_eval_instance(rng, 6, 4, 5, 0);
    std::vector<std::vector<Detection>> perfect;
    for (const auto& g : in.gts) {
        auto& d = perfect.emplace_back();
        for (const auto& b : g) d.push_back({b.class_id, 1.0f, b.box});
    }
    const auto r = evaluate(perfect, in.gts, 4);
    for (const auto& [cls, res] : r.classes) {
        if (res.num_gt > 0) CHECK(res.ap == 1.0);
    }
    CHECK(r.map == 1.0);
    CHECK(evaluate(in.dets, in.gts, 4).map == 0.0);
}

TEST_CASE("mAP averages only classes that have ground truth")
{
    const std::vector<std::vector<LabeledBox>> gts{{{1, gen::square(0, 0, 10)}}};
    const std::vector<std::vector<Detection>> dets{{{1, 0.9f, gen::square(0, 0, 10)}, {2, 0.9f, gen::square(30, 30, 10)}}};
    const auto r = evaluate(dets, gts, 3);
    CHECK(r.map == 1.0);
    CHECK(r.classes.size() == 3);
    CHECK(r.classes.at(2).num_det == 1);
    CHECK(r.classes.at(2).ap == 0.0);
}

TEST_CASE("matching takes the highest-IoU unmatched gt")
{
    const std::vector<std::vector<LabeledBox>> gts{{{0, gen::square(0, 0, 10)}, {0, gen::square(3, 0, 10)}}};
    // The first detection overlaps both but the second gt more.
    const std::vector<std::vector<Detection>> dets{{{0, 0.9f, gen::square(2, 0, 10)}, {0, 0.8f, gen::square(0, 0, 10)}}};
    const auto flags = match_class(dets, gts, 0, 0.5);
    REQUIRE(flags.size() == 2);
    CHECK(flags[0].gt == 1);
    CHECK(flags[1].gt == 0);
    CHECK(flags[1].tp);
}

TEST_CASE("true positives agree with the exhaustive matcher on tiny instances")
{
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const auto in = gen::random_eval_instance(rng, 1, 1, 4, 4);
        const double thr = rng.uniform(0.3, 0.7);
        const auto flags = match_class(in.dets, in.gts, 0, thr);
        std::vector<CornerBox> ranked, gts;
        for (const auto& f : flags) ranked.push_back(in.dets[0][f.det].box);
        for (const auto& g : in.gts[0]) gts.push_back(g.box);
        const int tp = static_cast<int>(std::count_if(flags.begin(), flags.end(), [](const MatchFlag& f) { return f.tp; }));
        CHECK(tp == oracle::brute_force_tp(ranked, gts, thr));
    }
}

TEST_CASE("AP depends on score ranks only")
{
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const auto in = gen::random_eval_instance(rng, 4, 3, 4, 6);
        auto warped = in.dets;
        for (auto& img : warped)
            for (auto& d : img) d.score = std::pow(d.score, 3.0f) * 0.5f;
        const auto a = evaluate(in.dets, in.gts, 3);
        const auto b = evaluate(warped, in.gts, 3);
        for (int c = 0; c < 3; ++c) CHECK(a.classes.at(c).ap == b.classes.at(c).ap);
    }
}

TEST_CASE("duplicating a matched detection never raises AP")
{
    // Holds whenever the copy cannot claim a second gt, i.e. the original
    // overlaps no other same-class gt of its image at the match IoU.
    Rng rng(29);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto in = gen::random_eval_instance(rng, 3, 2, 4, 5);
        const auto before = evaluate(in.dets, in.gts, 2);
        for (int c = 0; c < 2; ++c) {
            for (const auto& f : match_class(in.dets, in.gts, c, 0.5)) {
                if (!f.tp) continue;
                const auto& d = in.dets[f.image][f.det];
                const auto& g = in.gts[f.image];
                const bool lone = std::none_of(g.begin(), g.end(), [&](const LabeledBox& o) {
                    return &o != &g[f.gt] && o.class_id == c && oracle::iou(o.box, d.box) >= 0.5;
                });
                if (!lone) continue;
                auto dup = in.dets;
                dup[f.image].push_back(d);
                CHECK(evaluate(dup, in.gts, 2).classes.at(c).ap <= before.classes.at(c).ap);
                ++checked;
            }
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("a duplicate overlapping a second gt can claim it")
{
    const std::vector<std::vector<LabeledBox>> gts{{{0, gen::square(0, 0, 10)}, {0, gen::square(1, 0, 10)}}};
    const std::vector<std::vector<Detection>> one{{{0, 0.9f, gen::square(0, 0, 10)}}};
    const std::vector<std::vector<Detection>> two{{{0, 0.9f, gen::square(0, 0, 10)}, {0, 0.9f, gen::square(0, 0, 10)}}};
    CHECK(evaluate(one, gts, 1).map == 0.5);
    CHECK(evaluate(two, gts, 1).map == 1.0);
}

TEST_CASE("average precision envelope")
{
    CHECK(average_precision({}) == 0.0);
    CHECK(average_precision({{1.0, 1.0}}) == 1.0);
    // Later higher precision lifts earlier points.
    CHECK(average_precision({{0.5, 0.5}, {1.0, 1.0}}) == 1.0);
}

TEST_CASE("evaluate input errors")
{
    const std::vector<std::vector<LabeledBox>> gts{{{3, gen::square(0, 0, 10)}}};
    const std::vector<std::vector<Detection>> none{{}};
    CHECK_THROWS_AS(evaluate(none, gts, 3), EvalError);
    const std::vector<std::vector<Detection>> bad{{{-1, 0.5f, gen::square(0, 0, 1)}}};
    CHECK_THROWS_AS(evaluate(bad, {{}}, 3), EvalError);
    CHECK_THROWS_AS(evaluate(none, {{}, {}}, 3), EvalError);
    CHECK_THROWS_AS(evaluate(none, {{}}, 3, 1.5), EvalError);
}

TEST_CASE("report json and table")
{
    const std::vector<std::vector<LabeledBox>> gts{{{0, gen::square(0, 0, 10)}}};
    const std::vector<std::vector<Detection>> dets{{{0, 0.9f, gen::square(0, 0, 10)}}};
    const auto r = evaluate(dets, gts, 2);
    const auto j = nlohmann::json::parse(report_json(r, {"cat", "dog"}));
    CHECK(j["mAP"].get<double>() == 1.0);
    CHECK(j["match_iou"].get<double>() == 0.5);
    const auto table = report_table(r, {"cat", "dog"});
    CHECK(table.find("cat") != std::string::npos);
    CHECK(table.find("mAP") != std::string::npos);
}

TEST_CASE("latency bench reports consistent statistics")
{
    int calls = 0;
    const auto s = fps_bench([&] { ++calls; }, 30);
    CHECK(calls == 31);
    CHECK(s.repetitions == 30);
    CHECK(s.p50_ms <= s.p99_ms);
    CHECK(s.implied_fps == doctest::Approx(1000.0 / s.p50_ms));
    CHECK_THROWS(fps_bench([] {}, 29));

    const auto cfg = profile_config("tiny");
    const auto raw = bench_frame(cfg, 20, 1);
    std::size_t kept = 0;
    const auto full = fps_bench([&] { kept = postprocess(raw, cfg, {}).size(); }, 30);
    CHECK(kept > 0);
    const Detection one{0, 0.9f, gen::square(0, 0, 5)};
    const auto tiny = fps_bench([&] { kept = nms(std::span(&one, 1), 0.45f).size(); }, 30);
    CHECK(tiny.p50_ms < full.p50_ms);
}
