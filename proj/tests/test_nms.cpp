#include "generators.hpp"
#include "oracles.hpp"

#include "smalldet/decode.hpp"
#include "smalldet/nms.hpp"

#include <doctest.h>

using namespace smalldet;

namespace {

RawPredictions flat_raw(const ModelConfig& cfg, float value)
{
    RawPredictions raw;
    for (const auto& h : head_layout(cfg)) {
        Tensor t({1, cfg.head_channels(), h.grid, h.grid});
        t.fill(value);
        raw.push_back(std::move(t));
    }
    return raw;
}

}  // namespace

TEST_CASE("hand cases")
{
    const Detection a{0, 0.9f, {0, 0, 10, 10}};
    CHECK(nms(std::span(&a, 1), 0.45f) == std::vector<Detection>{a});

    // 10x10 against 10x8 inside it: IoU 0.8.
    const Detection b{0, 0.7f, {0, 0, 10, 8}};
    CHECK(oracle::iou(a.box, b.box) == doctest::Approx(0.8));
    const std::vector<Detection> pair{b, a};
    CHECK(nms(pair, 0.45f) == std::vector<Detection>{a});

    Detection c = b;
    c.class_id = 1;
    const std::vector<Detection> mixed{a, c};
    CHECK(nms(mixed, 0.45f).size() == 2);

    // IoU exactly at the threshold survives.
    CHECK(nms(pair, 0.8f).size() == 2);
    CHECK(nms(std::span<const Detection>{}, 0.5f).empty());
}

TEST_CASE("ties: smaller area first, then input order")
{
    const Detection big{0, 0.5f, {0, 0, 10, 10}};
    const Detection small{0, 0.5f, {0, 0, 10, 9}};
    const std::vector<Detection> in{big, small};
    CHECK(nms(in, 0.45f) == std::vector<Detection>{small});
    const Detection twin{0, 0.5f, {0, 0, 10, 10}};
    Detection other = twin;
    other.box.x1 = 0.0f;
    const std::vector<Detection> same{twin, other};
    CHECK(nms(same, 0.45f).size() == 1);
}

TEST_CASE("greedy NMS set-equals the quadratic reference")
{
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(0, 500);
        const float thr = static_cast<float>(rng.uniform(0.1, 0.9));
        const auto dets = gen::random_dets(rng, n, rng.uniform_int(1, 4));
        const auto got = nms(dets, thr);
        std::vector<Detection> want;
        for (auto i : oracle::nms_indices(dets, thr)) want.push_back(dets[i]);
        CHECK(gen::sorted_copy(got) == gen::sorted_copy(want));
    }
}

TEST_CASE("postconditions: subset, untouched scores, no surviving overlap, ranked, idempotent")
{
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const auto dets = gen::random_dets(rng, rng.uniform_int(1, 300), 3);
        const float thr = 0.45f;
        const auto kept = nms(dets, thr);
        for (const auto& k : kept) {
            CHECK(std::find(dets.begin(), dets.end(), k) != dets.end());
        }
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (i > 0) CHECK(kept[i - 1].score >= kept[i].score);
            for (std::size_t j = i + 1; j < kept.size(); ++j) {
                if (kept[i].class_id == kept[j].class_id) CHECK(iou(kept[i].box, kept[j].box) <= thr);
            }
        }
        CHECK(nms(kept, thr) == kept);
    }
}

TEST_CASE("all-zero raw scores exactly one quarter everywhere")
{
    // Direct evaluation: objectness and every class score are sigmoid(0), so
    // each candidate scores 0.5 * 0.5, which sits on the inclusive 0.25 cut.
    CHECK(sigmoid(0.0f) * sigmoid(0.0f) == 0.25f);
    const auto cfg = profile_config("tiny");
    const auto raw = flat_raw(cfg, 0.0f);
    const auto cands = threshold(decode_all(raw, cfg), 0.25f);
    CHECK(cands.size() == decode_all(raw, cfg).size());
    for (const auto& c : cands) CHECK(c.score == 0.25f);
    CHECK(!postprocess(raw, cfg, {}).empty());
    PostprocessOptions above;
    above.conf_threshold = std::nextafter(0.25f, 1.0f);
    CHECK(postprocess(raw, cfg, above).empty());
    CHECK(postprocess_reference(raw, cfg, above).empty());
    const auto paper = profile_config("paper");
    CHECK(postprocess(flat_raw(paper, 0.0f), paper, above).empty());
}

TEST_CASE("one strong planted box gives one detection at its location")
{
    const auto cfg = profile_config("tiny");
    auto raw = flat_raw(cfg, -10.0f);
    const auto heads = head_layout(cfg);
    // Head 1 (stride 8), anchor 2, cell (x=5, y=9); offsets 0 -> centre of the cell.
    auto& t = raw[1];
    const int per = 5 + cfg.num_classes, S = heads[1].grid, a = 2, x = 5, y = 9;
    auto at = [&](int ch) -> float& { return t.at(0, a * per + ch, y, x); };
    at(0) = 0.0f;
    at(1) = 0.0f;
    at(2) = 0.0f;
    at(3) = 0.0f;
    at(4) = 10.0f;
    at(5 + 2) = 10.0f;
    (void)S;
    const auto dets = postprocess(raw, cfg, {});
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].class_id == 2);
    const Anchor anc = heads[1].anchors[a];
    const float cx = (x + 0.5f) * 8, cy = (y + 0.5f) * 8;
    CHECK(dets[0].box.x1 == doctest::Approx(cx - anc.w / 2));
    CHECK(dets[0].box.y2 == doctest::Approx(cy + anc.h / 2));
    CHECK(dets[0].score == doctest::Approx(sigmoid(10.0f) * sigmoid(10.0f)));
}

TEST_CASE("fused postprocess equals the literal composition")
{
    Rng rng(5);
    for (const char* name : {"tiny", "paper"}) {
        const auto cfg = profile_config(name);
        for (int trial = 0; trial < (std::string(name) == "paper" ? 3 : 20); ++trial) {
            auto raw = bench_frame(cfg, rng.uniform_int(0, 60), rng.next());
            PostprocessOptions opt;
            opt.conf_threshold = static_cast<float>(rng.uniform(0.0005, 0.6));
            opt.iou_threshold = static_cast<float>(rng.uniform(0.2, 0.8));
            CHECK(postprocess(raw, cfg, opt) == postprocess_reference(raw, cfg, opt));
        }
    }
    const auto cfg = profile_config("tiny");
    for (int trial = 0; trial < 20; ++trial) {
        auto raw = flat_raw(cfg, 0.0f);
        for (auto& r : raw)
            for (auto& v : r.data()) v = static_cast<float>(3.0 * rng.normal());
        PostprocessOptions opt;
        opt.conf_threshold = static_cast<float>(rng.uniform(0.05, 0.9));
        CHECK(postprocess(raw, cfg, opt) == postprocess_reference(raw, cfg, opt));
    }
}

TEST_CASE("postprocess reads the requested batch image")
{
    const auto cfg = profile_config("tiny");
    const auto single = bench_frame(cfg, 5, 3);
    RawPredictions batch;
    for (const auto& h : single) {
        Tensor t({2, h.dim(1), h.dim(2), h.dim(3)}, -10.0f);
        std::copy(h.data().begin(), h.data().end(), t.data().begin() + static_cast<std::ptrdiff_t>(h.size()));
        batch.push_back(std::move(t));
    }
    CHECK(postprocess(batch, cfg, {}, 1) == postprocess(single, cfg, {}));
    CHECK(postprocess(batch, cfg, {}, 0).empty());
}
