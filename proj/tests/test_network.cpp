#include "oracles.hpp"

#include "smalldet/assign.hpp"
#include "smalldet/loss.hpp"
#include "smalldet/network.hpp"

#include <doctest.h>

#include <string>

using namespace smalldet;

namespace {

const char* kSmallNet = R"(
[net]
input_size=32
classes=2
strides=16,8
anchors_per_scale=1
anchors=6,6, 14,12
seed=3

[convolutional]
filters=4
size=3
stride=2
activation=leaky

[convolutional]
filters=8
size=3
stride=2
activation=leaky

[convolutional]
filters=8
size=3
stride=2
activation=leaky

[convolutional]
filters=4
size=1
stride=1
pad=0
activation=leaky

[convolutional]
filters=8
size=3
stride=1
activation=leaky

[shortcut]
from=-3

[convolutional]
filters=8
size=3
stride=2
activation=leaky

[convolutional]
filters=7
size=1
stride=1
pad=0
activation=linear

[detection]
mask=1

[route]
layers=-3

[upsample]
stride=2

[route]
layers=-1,5

[convolutional]
filters=7
size=1
stride=1
pad=0
activation=linear

[detection]
mask=0
)";

ModelConfig small_net()
{
    return parse_config(kSmallNet);
}

std::string replace_once(std::string s, const std::string& from, const std::string& to)
{
    const auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    return s.replace(pos, from.size(), to);
}

Tensor random_images(int n, int size, Rng& rng)
{
    Tensor t({n, 3, size, size});
    for (auto& v : t.data()) {
        v = static_cast<float>(rng.uniform());
    }
    return t;
}

}  // namespace

TEST_CASE("paper profile layer census")
{
    const Network net(profile_config("paper"));
    const auto c = net.census();
    CHECK(c.convolutional == 60);
    CHECK(c.shortcut == 20);
    CHECK(c.upsample == 6);
    CHECK(c.detection == 5);
    CHECK(c.route == 9);
    CHECK(net.head_layers().size() == 5);
}

TEST_CASE("paper profile heads sit at strides 32..2 with A(5+K) channels")
{
    const Network net(profile_config("paper"));
    const int grids[] = {13, 26, 52, 104, 208};
    for (std::size_t h = 0; h < 5; ++h) {
        const auto& s = net.shapes()[net.head_layers()[h]];
        CHECK(s.h == grids[h]);
        CHECK(s.w == grids[h]);
        CHECK(s.c == 5 * (5 + 80));
    }
    CHECK(candidate_count(net.config()) == 288145);
}

TEST_CASE("tiny profile builds")
{
    const Network net(profile_config("tiny"));
    CHECK(net.head_layers().size() == 2);
    CHECK(candidate_count(net.config()) == 5 * (8 * 8 + 16 * 16));
}

TEST_CASE("unresolvable references are reported with the layer")
{
    const auto text = replace_once(kSmallNet, "layers=-1,5", "layers=-1,50");
    try {
        Network net(parse_config(text));
        FAIL("expected a NetworkError");
    } catch (const NetworkError& e) {
        CHECK(std::string(e.what()).find("does not resolve") != std::string::npos);
    }
    CHECK_THROWS_AS(Network(parse_config(replace_once(kSmallNet, "from=-3", "from=5"))), NetworkError);
}

TEST_CASE("declared census must match the built graph")
{
    auto cfg = small_net();
    cfg.census = LayerCensus{60, 20, 6, 0, 5};
    CHECK_THROWS_WITH_AS(Network{cfg}, doctest::Contains("census"), NetworkError);
}

TEST_CASE("detection channel count must equal A(5+K)")
{
    CHECK_THROWS_AS(Network(parse_config(replace_once(kSmallNet, "filters=7\nsize=1\nstride=1\npad=0\nactivation=linear\n\n[detection]\nmask=1",
                                                      "filters=9\nsize=1\nstride=1\npad=0\nactivation=linear\n\n[detection]\nmask=1"))),
                    NetworkError);
}

TEST_CASE("shortcut shape mismatch is rejected")
{
    CHECK_THROWS_AS(Network(parse_config(replace_once(kSmallNet, "from=-3", "from=-4"))), NetworkError);
}

TEST_CASE("initialization is deterministic in the seed")
{
    const Network a(small_net()), b(small_net());
    CHECK(a.save_weights() == b.save_weights());
    auto cfg = small_net();
    cfg.seed = 4;
    const Network c(cfg);
    CHECK(a.save_weights() != c.save_weights());
}

TEST_CASE("weights round-trip bitwise")
{
    Network a(small_net());
    const auto bytes = a.save_weights();
    auto cfg = small_net();
    cfg.seed = 99;
    Network b(cfg);
    b.load_weights(bytes);
    CHECK(b.save_weights() == bytes);
    CHECK(bytes.size() == 4 + 4 + 4 * a.params().size() + 4 * a.parameter_count());
}

TEST_CASE("corrupt weight files are rejected without touching the model")
{
    Network net(small_net());
    const auto good = net.save_weights();
    auto bad = good;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(net.load_weights(bad), doctest::Contains("magic"), NetworkError);
    auto truncated = good;
    truncated.resize(good.size() - 3);
    CHECK_THROWS_AS(net.load_weights(truncated), NetworkError);
    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_WITH_AS(net.load_weights(trailing), doctest::Contains("trailing"), NetworkError);
    CHECK(net.save_weights() == good);
    const Network other(profile_config("tiny"));
    CHECK_THROWS_AS(net.load_weights(other.save_weights()), NetworkError);
}

TEST_CASE("inference and recorded forward agree")
{
    const Network net(small_net());
    Rng rng(2);
    const Tensor x = random_images(2, 32, rng);
    const auto raw = net.forward(x);
    Tape<float> tape;
    std::vector<ParamVars> vars;
    const auto outs = net.forward(tape, x, vars);
    REQUIRE(raw.size() == outs.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        CHECK(raw[i] == tape.value(outs[i]));
    }
}

TEST_CASE("input shape is validated")
{
    const Network net(small_net());
    CHECK_THROWS_AS(net.forward(Tensor({1, 3, 16, 16})), NetworkError);
    CHECK_THROWS_AS(net.forward(Tensor({1, 1, 32, 32})), NetworkError);
}

TEST_CASE("parameter gradients through the whole graph match finite differences")
{
    Network net(small_net());
    Rng rng(4);
    const Tensor x = random_images(2, 32, rng);
    const auto& cfg = net.config();
    std::vector<TargetTensor> targets;
    for (int n = 0; n < 2; ++n) {
        std::vector<GroundTruth> gt{{{0.3f, 0.4f, 0.2f, 0.25f}, 0}, {{0.7f, 0.6f, 0.45f, 0.4f}, 1}};
        targets.push_back(assign_targets(gt, cfg));
    }
    const auto heads = net.heads();
    auto total = [&] {
        const auto raw = net.forward(x);
        return detection_loss<float>(raw, targets, heads, cfg.loss).total;
    };

    Tape<float> tape;
    std::vector<ParamVars> vars;
    const auto outs = net.forward(tape, x, vars);
    std::vector<Tensor> raw, grads;
    for (Var v : outs) raw.push_back(tape.value(v));
    detection_loss<float>(raw, targets, heads, cfg.loss, &grads);
    tape.backward(outs, grads);

    // Float forward: compare the strongest gradient entries of every layer.
    int compared = 0;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        if (!vars[i].present) continue;
        Tensor& w = net.params()[i].weight;
        const Tensor& g = tape.grad(vars[i].weight);
        std::size_t best = 0;
        for (std::size_t k = 1; k < g.size(); ++k) {
            if (std::abs(g[k]) > std::abs(g[best])) best = k;
        }
        const float keep = w[best];
        const float eps = 1e-2f;
        w[best] = keep + eps;
        const double up = total();
        w[best] = keep - eps;
        const double down = total();
        w[best] = keep;
        const double numeric = (up - down) / (2.0 * eps);
        CHECK(numeric == doctest::Approx(g[best]).epsilon(0.05));
        ++compared;
    }
    CHECK(compared == 8);
}
