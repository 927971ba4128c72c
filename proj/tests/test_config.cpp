#include "generators.hpp"
#include "oracles.hpp"

#include "smalldet/config.hpp"
#include "smalldet/network.hpp"

#include <doctest.h>

#include <clocale>

using namespace smalldet;

namespace {

const char* kMinimal = R"([net]
classes=4
stride=32,16,8,4,2

[convolutional]
filters=16
size=3
stride=2
activation=leaky

[detection]
mask=20,21,22,23,24

[detection]
mask=15,16,17,18,19

[detection]
mask=10,11,12,13,14

[detection]
mask=5,6,7,8,9

[detection]
mask=0,1,2,3,4
)";

}  // namespace

TEST_CASE("minimal config with the stride alias and defaults")
{
    const auto c = parse_config(kMinimal);
    CHECK(c.strides == std::vector<int>{32, 16, 8, 4, 2});
    CHECK(c.ignore_threshold == 0.7f);
    CHECK(c.truth_threshold == 1.0f);
    CHECK(c.jitter == 0.3f);
    CHECK(c.random == 1);
    CHECK(c.pad == 1);
    CHECK(c.filters == std::vector<int>{32, 64, 128, 256});
    CHECK(c.anchors_per_scale == 5);
    CHECK(c.total_anchors() == 25);
    CHECK(c.loss.lambda_coord == 5.0f);
    CHECK(c.loss.lambda_noobj == 0.5f);
    CHECK(c.num_classes == 4);
    CHECK(c.layers.size() == 6);
}

TEST_CASE("syntax and semantic errors")
{
    CHECK_THROWS_WITH_AS(parse_config(""), doctest::Contains("no [net] section"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[net]\nstrides=32\n"), doctest::Contains("classes"), ConfigError);
    try {
        parse_config("[net]\nclasses=2\nbogus=1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("[net]\nclasses=2\nclasses=3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[net]\nclasses=2\n[maxpool]\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[net]\nclasses=2\ninput_size=416\nstrides=32,24\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[net]\nclasses=2\nstrides=16,32\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[net]\nclasses=2\nignore_threshold=1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[net]\nclasses=2\nlambda_coord=x\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[net]\nclasses=2\nstrides=32\nanchors_per_scale=1\n[detection]\nmask=7\n"), ConfigError);
}

TEST_CASE("CRLF line endings and comments are accepted")
{
    const auto c = parse_config("# model\r\n[net]\r\nclasses=3  # three\r\nstrides=32\r\nanchors_per_scale=2\r\n[detection]\r\nmask=0,1\r\n");
    CHECK(c.num_classes == 3);
    CHECK(c.total_anchors() == 2);
}

TEST_CASE("num is overridden by the masks with a warning")
{
    std::vector<std::string> warnings;
    const auto c = parse_config(paper_profile_text(), &warnings);
    CHECK(c.total_anchors() == 25);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("num=9") != std::string::npos);
}

TEST_CASE("paper profile anchors and masks")
{
    const auto c = profile_config("paper");
    CHECK(c.total_anchors() == 25);
    REQUIRE(c.masks.size() == 5);
    for (std::size_t h = 0; h < 5; ++h) {
        CHECK(c.masks[h].size() == 5);
        CHECK(c.masks[h].front() == static_cast<int>(20 - 5 * h));
    }
    CHECK(c.strides == std::vector<int>{32, 16, 8, 4, 2});
    CHECK(c.input_size == 416);
    CHECK(c.num_classes == 80);
}

TEST_CASE("emit then parse is the identity on shipped profiles")
{
    for (const char* name : {"paper", "tiny"}) {
        const auto c = profile_config(name);
        CHECK(parse_config(emit_config(c)) == c);
    }
}

TEST_CASE("emit then parse is the identity on generated configs")
{
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        const auto c = gen::random_config(rng);
        const auto text = emit_config(c);
        const auto back = parse_config(text);
        CHECK(back == c);
        CHECK(emit_config(back) == text);
    }
}

TEST_CASE("parsing ignores the C locale decimal separator")
{
    const char* old = std::setlocale(LC_NUMERIC, nullptr);
    const std::string saved = old ? old : "C";
    if (std::setlocale(LC_NUMERIC, "de_DE.UTF-8")) {
        const auto c = parse_config("[net]\nclasses=1\nstrides=32\nignore_threshold=0.25\n");
        CHECK(c.ignore_threshold == 0.25f);
    }
    std::setlocale(LC_NUMERIC, saved.c_str());
}

TEST_CASE("default anchor ladder is area sorted and spans the input")
{
    const auto a = default_anchors(416, 25);
    REQUIRE(a.size() == 25);
    for (std::size_t i = 1; i < a.size(); ++i) {
        CHECK(a[i - 1].w * a[i - 1].h <= a[i].w * a[i].h);
    }
}
