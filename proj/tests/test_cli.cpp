// Drives the smalldet binary end to end. SMALLDET_CLI is its path.
#include "smalldet/data.hpp"
#include "smalldet/image.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace smalldet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args)
{
    const std::string cmd = std::string(SMALLDET_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("smalldet_cli_" + name))
    {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

}  // namespace

TEST_CASE("usage errors exit with 2")
{
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("bench --no-such-flag").code == 2);
    CHECK(run("bench --reps 5").code == 2);
    CHECK(run("stats --manifest /nonexistent/manifest.jsonl").code == 2);
    CHECK(run("train-toy --anchors magic --dry-run").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("missing or mismatched weights exit with 2")
{
    Scratch s("weights");
    Image img(64, 64);
    write_pnm(s / "a.ppm", img);
    const auto r = run("detect --weights " + (s / "none.tsw") + " " + (s / "a.ppm"));
    CHECK(r.code == 2);
    CHECK(r.out.find("none.tsw") != std::string::npos);
    spit(s.dir / "junk.tsw", "not weights");
    CHECK(run("detect --weights " + (s / "junk.tsw") + " " + (s / "a.ppm")).code == 2);
}

TEST_CASE("bench emits every report field")
{
    Scratch s("bench");
    const auto r = run("bench --profile tiny --reps 30 --out " + (s / "bench.json"));
    REQUIRE(r.code == 0);
    const auto j = json::parse(slurp(s.dir / "bench.json"));
    for (const char* key : {"profile", "candidates", "conf_threshold", "nms_iou", "detections", "repetitions",
                            "mean_ms", "p50_ms", "p99_ms", "implied_fps"}) {
        CHECK(j.contains(key));
    }
    CHECK(j["repetitions"] == 30);
    CHECK(j["implied_fps"].get<double>() == doctest::Approx(1000.0 / j["p50_ms"].get<double>()));
}

TEST_CASE("eval reproduces the hand-traced 5/6 through files")
{
    Scratch s("eval");
    spit(s.dir / "gt.jsonl",
         R"({"image": "a.ppm", "width": 100, "height": 100, "boxes": [{"class": 0, "cx": 0.05, "cy": 0.05, "w": 0.1, "h": 0.1}, {"class": 0, "cx": 0.55, "cy": 0.55, "w": 0.1, "h": 0.1}]})"
         "\n");
    spit(s.dir / "dets.jsonl",
         R"({"image": "a.ppm", "class": 0, "score": 0.9, "box": [0, 0, 10, 10]})"
         "\n"
         R"({"image": "a.ppm", "class": 0, "score": 0.8, "box": [80, 80, 90, 90]})"
         "\n"
         R"({"image": "a.ppm", "class": 0, "score": 0.7, "box": [50, 50, 60, 60]})"
         "\n");
    const auto r = run("eval --manifest " + (s / "gt.jsonl") + " --detections " + (s / "dets.jsonl") +
                       " --out-dir " + (s / "out"));
    REQUIRE(r.code == 0);
    const auto j = json::parse(slurp(s.dir / "out" / "eval.json"));
    CHECK(j["mAP"].get<double>() == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(fs::exists(s.dir / "out" / "eval.txt"));

    spit(s.dir / "bad.jsonl", R"({"image": "zzz.ppm", "class": 0, "score": 0.9, "box": [0, 0, 1, 1]})");
    CHECK(run("eval --manifest " + (s / "gt.jsonl") + " --detections " + (s / "bad.jsonl") + " --out-dir " +
              (s / "out")).code == 2);
}

TEST_CASE("train, detect and stats round trip")
{
    Scratch s("pipeline");
    const auto t = run("train-toy --images 4 --iterations 2 --batch 2 --anchors kmeans --out-dir " + (s / "run") +
                       " --write-dataset " + (s / "data"));
    REQUIRE(t.code == 0);
    for (const char* f : {"weights.tsw", "model.cfg", "loss.csv", "train_eval.json"}) {
        CHECK(fs::exists(s.dir / "run" / f));
    }
    const auto img = s / "data/img_0000.ppm";
    const auto d = run("detect --config " + (s / "run/model.cfg") + " --weights " + (s / "run/weights.tsw") +
                       " --conf 1.0 --out-dir " + (s / "det") + " " + img);
    REQUIRE(d.code == 0);
    CHECK(slurp(s.dir / "det" / "detections.jsonl").empty());
    CHECK(fs::exists(s.dir / "det" / "img_0000_det.ppm"));

    const auto low = run("detect --config " + (s / "run/model.cfg") + " --weights " + (s / "run/weights.tsw") +
                         " --conf 0.0 --out-dir " + (s / "det0") + " " + img);
    REQUIRE(low.code == 0);
    std::istringstream lines(slurp(s.dir / "det0" / "detections.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = json::parse(line);
        CHECK(j["box"].size() == 4);
        CHECK(j.contains("score"));
        ++n;
    }
    CHECK(n > 0);

    const auto st = run("stats --manifest " + (s / "data/manifest.jsonl") + " --out " + (s / "stats.json"));
    REQUIRE(st.code == 0);
    CHECK(json::parse(slurp(s.dir / "stats.json"))["num_images"] == 4);

    const auto an = run("anchors --manifest " + (s / "data/manifest.jsonl") + " --k 5 --per-scale 5 --input-size 128 --out " +
                        (s / "anchors.json"));
    REQUIRE(an.code == 0);
    const auto aj = json::parse(slurp(s.dir / "anchors.json"));
    CHECK(aj["anchors"].size() == 5);
    CHECK(aj["masks"].size() == 1);
    CHECK(aj.contains("mean_best_iou"));
}

TEST_CASE("iteration accounting through the CLI")
{
    const auto r = run("train-toy --images 2 --examples 128000 --batch 16 --epochs 1 --dry-run");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("8000") != std::string::npos);
}
