// smalldet: command-line front end for the detector pipeline.
//
// Exit codes: 0 success (including empty results), 2 usage or validation
// error, 3 internal failure.

#include "smalldet/anchors.hpp"
#include "smalldet/config.hpp"
#include "smalldet/data.hpp"
#include "smalldet/eval.hpp"
#include "smalldet/network.hpp"
#include "smalldet/nms.hpp"
#include "smalldet/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace smalldet;

namespace {

/// Validation failures that map to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelArgs {
    std::string profile;
    std::string config;

    void add(CLI::App* cmd, const std::string& default_profile)
    {
        profile = default_profile;
        cmd->add_option("--profile", profile, "Shipped model profile (paper, tiny)");
        cmd->add_option("--config", config, "Model config file; overrides --profile");
    }

    ModelConfig load() const
    {
        std::vector<std::string> warnings;
        ModelConfig cfg;
        if (!config.empty()) {
            std::ifstream in(config, std::ios::binary);
            if (!in) {
                throw UsageError("cannot open config " + config);
            }
            std::stringstream ss;
            ss << in.rdbuf();
            try {
                cfg = parse_config(ss.str(), &warnings);
            } catch (const ConfigError& e) {
                throw UsageError(config + ": " + e.what());
            }
        } else {
            if (profile != "paper" && profile != "tiny") {
                throw UsageError("unknown profile '" + profile + "' (expected paper or tiny)");
            }
            cfg = parse_config(profile == "paper" ? paper_profile_text() : tiny_profile_text(), &warnings);
        }
        for (const auto& w : warnings) {
            std::cerr << "warning: " << w << '\n';
        }
        return cfg;
    }
};

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw UsageError("cannot write " + path.string());
    }
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot open " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_file(const std::string& path, const char* what)
{
    if (!fs::is_regular_file(path)) {
        throw UsageError(std::string(what) + " not found: " + path);
    }
}

Rgb class_color(int c)
{
    static const Rgb palette[] = {{255, 64, 64}, {64, 255, 64}, {64, 128, 255}, {255, 255, 0},
                                  {255, 0, 255}, {0, 255, 255}, {255, 160, 0}, {160, 96, 255}};
    return palette[static_cast<std::size_t>(c) % std::size(palette)];
}

/// Runs the model on one original-resolution image and maps boxes back to
/// its pixel frame.
std::vector<Detection> detect_image(const Network& net, const Image& img, const PreprocessOptions& pre,
                                    const PostprocessOptions& post)
{
    const Tensor input = preprocess(image_to_tensor(img), pre);
    const Tensor batch = stack_images({&input});
    auto dets = postprocess(net.forward(batch), net.config(), post);
    const float sx = static_cast<float>(img.width) / net.config().input_size;
    const float sy = static_cast<float>(img.height) / net.config().input_size;
    for (auto& d : dets) {
        d.box = {d.box.x1 * sx, d.box.y1 * sy, d.box.x2 * sx, d.box.y2 * sy};
        d.box = clamp_to_image(d.box, static_cast<float>(img.width), static_cast<float>(img.height));
    }
    return dets;
}

json detection_json(const std::string& image, const Detection& d)
{
    return {{"image", image}, {"class", d.class_id}, {"score", d.score}, {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}};
}

void annotate(Image& img, const std::vector<Detection>& dets)
{
    const int thick = std::max(1, std::min(img.width, img.height) / 200);
    const int scale = std::max(1, std::min(img.width, img.height) / 160);
    for (const auto& d : dets) {
        const Rgb color = class_color(d.class_id);
        const int x1 = static_cast<int>(std::lround(d.box.x1)), y1 = static_cast<int>(std::lround(d.box.y1));
        const int x2 = static_cast<int>(std::lround(d.box.x2)) - 1, y2 = static_cast<int>(std::lround(d.box.y2)) - 1;
        draw_rect(img, x1, y1, x2, y2, color, thick);
        char label[32];
        std::snprintf(label, sizeof label, "%d %.2f", d.class_id, static_cast<double>(d.score));
        const int ty = y1 - 6 * scale >= 0 ? y1 - 6 * scale : y2 + 2;
        draw_text(img, x1, ty, label, color, scale);
    }
}

std::vector<std::vector<LabeledBox>> manifest_truth(const Manifest& m)
{
    std::vector<std::vector<LabeledBox>> gts;
    for (const auto& r : m.records) {
        auto& g = gts.emplace_back();
        for (const auto& a : r.boxes) {
            g.push_back({a.class_id, to_corner(a.box, static_cast<float>(r.width), static_cast<float>(r.height),
                                               BoxUnits::normalized)});
        }
    }
    return gts;
}

void print_warnings(const std::vector<std::string>& warnings)
{
    for (const auto& w : warnings) {
        std::cerr << "warning: " << w << '\n';
    }
}

// ---------------------------------------------------------------- anchors

struct AnchorsArgs {
    std::string manifest;
    int k = 25;
    int per_scale = 5;
    std::uint64_t seed = 1;
    int input_size = 416;
    std::string out;
};

int cmd_anchors(const AnchorsArgs& a)
{
    require_file(a.manifest, "manifest");
    const Manifest m = load_manifest(a.manifest);
    print_warnings(m.warnings);
    std::vector<Extent> boxes;
    for (const auto& r : m.records) {
        for (const auto& b : r.boxes) {
            boxes.push_back({b.box.w * a.input_size, b.box.h * a.input_size});
        }
    }
    const auto res = kmeans_anchors(boxes, a.k, a.seed, a.per_scale);
    std::string line = "anchors=";
    json j;
    j["anchors"] = json::array();
    for (std::size_t i = 0; i < res.set.anchors.size(); ++i) {
        const auto& an = res.set.anchors[i];
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? ", " : "", static_cast<double>(an.w), static_cast<double>(an.h));
        line += buf;
        j["anchors"].push_back({an.w, an.h});
    }
    j["masks"] = res.set.masks;
    j["mean_best_iou"] = mean_best_iou(boxes, res.set.anchors);
    j["iterations"] = res.iterations;
    j["objective_history"] = res.objective_history;
    j["boxes"] = boxes.size();
    std::cout << line << '\n' << "mean best IoU: " << j["mean_best_iou"].get<double>() << '\n';
    if (!a.out.empty()) {
        write_text(a.out, j.dump(2) + "\n");
    }
    return 0;
}

// ---------------------------------------------------------------- train-toy

struct TrainArgs {
    ModelArgs model;
    std::string manifest;
    int images = 32;
    TrainConfig tcfg;
    std::string out_dir = "train_out";
    std::string write_dataset_dir;
    std::int64_t examples = -1;
    int epochs = -1;
    bool dry_run = false;
    bool denoise = false;
    std::string anchors = "config";
};

int cmd_train(TrainArgs a)
{
    ModelConfig cfg = a.model.load();
    std::vector<Sample> samples;
    std::vector<SampleRecord> records;
    if (!a.manifest.empty()) {
        require_file(a.manifest, "manifest");
        const Manifest m = load_manifest(a.manifest, cfg.num_classes);
        print_warnings(m.warnings);
        PreprocessOptions pre;
        pre.input_size = cfg.input_size;
        pre.denoise = a.denoise;
        for (const auto& r : m.records) {
            samples.push_back(load_sample(m, r, pre));
        }
        records = m.records;
    } else {
        if (cfg.num_classes < static_cast<int>(synthetic_class_names().size())) {
            throw UsageError("the synthetic dataset needs a model with at least 3 classes");
        }
        const auto set = synth_small_objects(a.images, cfg.input_size, a.tcfg.seed);
        if (!a.write_dataset_dir.empty()) {
            write_dataset(set, a.write_dataset_dir);
            std::cout << "wrote " << set.images.size() << " images to " << a.write_dataset_dir << '\n';
        }
        samples = to_samples(set);
        records = set.records;
    }
    if (a.epochs >= 0) {
        const std::int64_t examples = a.examples >= 0 ? a.examples : static_cast<std::int64_t>(samples.size());
        const std::int64_t iters = iterations_for(examples, a.tcfg.batch_size, a.epochs);
        std::cout << "examples=" << examples << " batch=" << a.tcfg.batch_size << " epochs=" << a.epochs
                  << " iterations=" << iters << '\n';
        if (iters > std::numeric_limits<int>::max() || iters < 1) {
            throw UsageError("iteration count out of range");
        }
        a.tcfg.iterations = static_cast<int>(iters);
    }
    if (a.dry_run) {
        return 0;
    }
    if (samples.empty()) {
        throw UsageError("no training samples");
    }
    if (a.anchors == "kmeans") {
        std::vector<Extent> boxes;
        for (const auto& s : samples) {
            for (const auto& b : s.boxes) {
                boxes.push_back({b.box.w * cfg.input_size, b.box.h * cfg.input_size});
            }
        }
        const auto fit = kmeans_anchors(boxes, cfg.total_anchors(), a.tcfg.seed, cfg.anchors_per_scale);
        cfg = with_anchors(cfg, fit.set);
        std::printf("k-means anchors: mean best IoU %.3f over %zu boxes\n", mean_best_iou(boxes, cfg.anchors),
                    boxes.size());
    }

    fs::create_directories(a.out_dir);
    a.tcfg.checkpoint_dir = a.out_dir;
    Network net(cfg);
    const auto result = train(net, samples, a.tcfg, [&](int it, const LossBreakdown& l) {
        if (it % 25 == 0 || it + 1 == a.tcfg.iterations) {
            std::printf("iter %5d  total %10.4f  loc %9.4f  obj %8.4f  noobj %8.4f  cls %8.4f\n", it, l.total,
                        l.loc, l.conf_obj, l.conf_noobj, l.cls);
            std::fflush(stdout);
        }
    });
    print_warnings(result.warnings);
    net.save_weights_file((fs::path(a.out_dir) / "weights.tsw").string());
    write_text(fs::path(a.out_dir) / "model.cfg", emit_config(cfg));
    write_text(fs::path(a.out_dir) / "loss.csv", history_csv(result.history));

    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<LabeledBox>> gts;
    PostprocessOptions post;
    post.conf_threshold = 0.005f;
    for (const auto& s : samples) {
        dets.push_back(postprocess(net.forward(stack_images({&s.image})), cfg, post));
        auto& g = gts.emplace_back();
        for (const auto& b : s.boxes) {
            g.push_back({b.class_id, to_corner(b.box, static_cast<float>(cfg.input_size),
                                               static_cast<float>(cfg.input_size), BoxUnits::normalized)});
        }
    }
    const auto report = evaluate(dets, gts, cfg.num_classes, 0.5);
    const auto& names = a.manifest.empty() ? synthetic_class_names() : std::vector<std::string>{};
    write_text(fs::path(a.out_dir) / "train_eval.json", report_json(report, names) + "\n");
    std::cout << report_table(report, names, "AP (train)");
    std::printf("initial loss %.4f  final loss %.4f  ratio %.4f\n", result.history.front().total,
                result.history.back().total, result.history.back().total / result.history.front().total);
    return 0;
}

// ---------------------------------------------------------------- detect

struct DetectArgs {
    ModelArgs model;
    std::string weights;
    std::vector<std::string> images;
    PostprocessOptions post;
    std::string out_dir = "detect_out";
    bool denoise = false;
};

int cmd_detect(const DetectArgs& a)
{
    const ModelConfig cfg = a.model.load();
    require_file(a.weights, "weights file");
    for (const auto& p : a.images) {
        require_file(p, "image");
    }
    Network net(cfg);
    try {
        net.load_weights_file(a.weights);
    } catch (const NetworkError& e) {
        throw UsageError(a.weights + ": " + e.what());
    }
    PreprocessOptions pre;
    pre.input_size = cfg.input_size;
    pre.denoise = a.denoise;
    fs::create_directories(a.out_dir);
    std::string lines;
    std::size_t total = 0;
    for (const auto& path : a.images) {
        Image img = read_pnm(path);
        const auto dets = detect_image(net, img, pre, a.post);
        for (const auto& d : dets) {
            lines += detection_json(path, d).dump() + "\n";
        }
        total += dets.size();
        annotate(img, dets);
        if (img.channels == 1) {
            Image rgb(img.width, img.height, 3);
            for (std::size_t i = 0; i < img.pixels.size(); ++i) {
                rgb.pixels[3 * i] = rgb.pixels[3 * i + 1] = rgb.pixels[3 * i + 2] = img.pixels[i];
            }
            img = std::move(rgb);
        }
        write_pnm((fs::path(a.out_dir) / (fs::path(path).stem().string() + "_det.ppm")).string(), img);
    }
    write_text(fs::path(a.out_dir) / "detections.jsonl", lines);
    std::cout << total << " detections in " << a.images.size() << " image(s)\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    ModelArgs model;
    std::string manifest;
    std::string detections;
    std::string weights;
    double match_iou = 0.5;
    PostprocessOptions post{0.005f, 0.45f};
    int num_classes = 0;
    std::string out_dir = "eval_out";
    std::string column = "AP";
    bool denoise = false;
};

std::vector<std::vector<Detection>> read_detections(const std::string& path, const Manifest& m)
{
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        index.emplace(m.records[i].image, i);
        index.emplace(m.image_path(m.records[i]), i);
    }
    std::vector<std::vector<Detection>> dets(m.records.size());
    std::istringstream in(read_text(path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto where = path + " line " + std::to_string(line_no) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw UsageError(where + e.what());
        }
        if (!j.is_object() || !j.contains("image") || !j["image"].is_string() || !j.contains("class") ||
            !j["class"].is_number_integer() || !j.contains("score") || !j["score"].is_number() ||
            !j.contains("box") || !j["box"].is_array() || j["box"].size() != 4) {
            throw UsageError(where + "expected {\"image\": str, \"class\": int, \"score\": num, \"box\": [x1,y1,x2,y2]}");
        }
        for (const auto& v : j["box"]) {
            if (!v.is_number()) {
                throw UsageError(where + "box entries must be numbers");
            }
        }
        const auto it = index.find(j["image"].get<std::string>());
        if (it == index.end()) {
            throw UsageError(where + "image '" + j["image"].get<std::string>() + "' is not in the manifest");
        }
        Detection d;
        d.class_id = j["class"].get<int>();
        d.score = j["score"].get<float>();
        if (!(d.score >= 0.0f && d.score <= 1.0f)) {
            throw UsageError(where + "score must lie in [0, 1]");
        }
        d.box = {j["box"][0].get<float>(), j["box"][1].get<float>(), j["box"][2].get<float>(), j["box"][3].get<float>()};
        dets[it->second].push_back(d);
    }
    return dets;
}

int cmd_eval(const EvalArgs& a)
{
    require_file(a.manifest, "manifest");
    if (a.detections.empty() == a.weights.empty()) {
        throw UsageError("give exactly one of --detections or --weights");
    }
    const Manifest m = load_manifest(a.manifest);
    print_warnings(m.warnings);
    std::vector<std::vector<Detection>> dets;
    int num_classes = a.num_classes;
    if (!a.detections.empty()) {
        require_file(a.detections, "detections file");
        dets = read_detections(a.detections, m);
    } else {
        const ModelConfig cfg = a.model.load();
        require_file(a.weights, "weights file");
        Network net(cfg);
        try {
            net.load_weights_file(a.weights);
        } catch (const NetworkError& e) {
            throw UsageError(a.weights + ": " + e.what());
        }
        PreprocessOptions pre;
        pre.input_size = cfg.input_size;
        pre.denoise = a.denoise;
        for (const auto& r : m.records) {
            dets.push_back(detect_image(net, read_pnm(m.image_path(r)), pre, a.post));
        }
        if (num_classes == 0) {
            num_classes = cfg.num_classes;
        }
    }
    if (num_classes == 0) {
        for (const auto& r : m.records) {
            for (const auto& b : r.boxes) {
                num_classes = std::max(num_classes, b.class_id + 1);
            }
        }
        for (const auto& img : dets) {
            for (const auto& d : img) {
                num_classes = std::max(num_classes, d.class_id + 1);
            }
        }
        num_classes = std::max(num_classes, 1);
    }
    EvalReport report;
    try {
        report = evaluate(dets, manifest_truth(m), num_classes, a.match_iou);
    } catch (const EvalError& e) {
        throw UsageError(e.what());
    }
    fs::create_directories(a.out_dir);
    const std::string table = report_table(report, {}, a.column);
    write_text(fs::path(a.out_dir) / "eval.json", report_json(report) + "\n");
    write_text(fs::path(a.out_dir) / "eval.txt", table);
    std::cout << table;
    return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string profile = "paper";
    int reps = 50;
    int objects = 50;
    std::uint64_t seed = 1;
    PostprocessOptions post;
    std::string out;
};

int cmd_bench(const BenchArgs& a)
{
    if (a.reps < 30) {
        throw UsageError("--reps must be >= 30");
    }
    ModelArgs m;
    m.profile = a.profile;
    const ModelConfig cfg = m.load();
    const auto raw = bench_frame(cfg, a.objects, a.seed);
    std::size_t kept = 0;
    const auto stats = fps_bench([&] { kept = postprocess(raw, cfg, a.post).size(); }, a.reps);
    json j{{"profile", a.profile},
           {"candidates", candidate_count(cfg)},
           {"conf_threshold", a.post.conf_threshold},
           {"nms_iou", a.post.iou_threshold},
           {"detections", kept},
           {"repetitions", stats.repetitions},
           {"mean_ms", stats.mean_ms},
           {"p50_ms", stats.p50_ms},
           {"p99_ms", stats.p99_ms},
           {"implied_fps", stats.implied_fps}};
    std::printf("profile      %s\ncandidates   %zu\ndetections   %zu\nmean         %.3f ms\np50          %.3f ms\n"
                "p99          %.3f ms\nimplied FPS  %.1f\n",
                a.profile.c_str(), candidate_count(cfg), kept, stats.mean_ms, stats.p50_ms, stats.p99_ms,
                stats.implied_fps);
    std::cout << j.dump() << '\n';
    if (!a.out.empty()) {
        write_text(a.out, j.dump(2) + "\n");
    }
    return 0;
}

// ---------------------------------------------------------------- stats

int cmd_stats(const std::string& manifest, const std::string& out)
{
    require_file(manifest, "manifest");
    const Manifest m = load_manifest(manifest);
    print_warnings(m.warnings);
    const auto s = dataset_stats(m.records);
    std::printf("images                      %d\nclasses                     %d\nobjects                     %d\n"
                "avg resolution              %.1f x %.1f\navg object classes / image  %.3f\n"
                "avg object scale            %.3f\nskipped records             %d\n",
                s.num_images, s.num_classes, s.num_objects, s.avg_width, s.avg_height, s.avg_classes_per_image,
                s.avg_object_scale, m.skipped_records);
    if (!out.empty()) {
        write_text(out, stats_json(s) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"smalldet: multi-scale small-object detector toolkit"};
    app.require_subcommand(1);

    AnchorsArgs anchors;
    auto* c_anchors = app.add_subcommand("anchors", "Cluster manifest boxes into anchor priors");
    c_anchors->add_option("--manifest", anchors.manifest, "JSON-lines manifest")->required();
    c_anchors->add_option("--k", anchors.k, "Number of anchors")->capture_default_str();
    c_anchors->add_option("--per-scale", anchors.per_scale, "Anchors per detection head")->capture_default_str();
    c_anchors->add_option("--seed", anchors.seed, "Seed for k-means++")->capture_default_str();
    c_anchors->add_option("--input-size", anchors.input_size, "Network input size in pixels")->capture_default_str();
    c_anchors->add_option("--out", anchors.out, "Write the anchor set as JSON");

    TrainArgs tr;
    tr.model.profile = "tiny";
    tr.tcfg.batch_size = 16;
    tr.tcfg.learning_rate = 0.01f;
    auto* c_train = app.add_subcommand("train-toy", "Train on the synthetic small-object set (or a manifest)");
    tr.model.add(c_train, "tiny");
    c_train->add_option("--manifest", tr.manifest, "Train on this manifest instead of synthetic data");
    c_train->add_option("--images", tr.images, "Synthetic images to generate")->capture_default_str();
    c_train->add_option("--iterations", tr.tcfg.iterations, "Training iterations")->capture_default_str();
    c_train->add_option("--batch", tr.tcfg.batch_size, "Batch size")->capture_default_str();
    c_train->add_option("--lr", tr.tcfg.learning_rate, "Learning rate")->capture_default_str();
    c_train->add_option("--momentum", tr.tcfg.momentum, "SGD momentum")->capture_default_str();
    c_train->add_option("--weight-decay", tr.tcfg.weight_decay, "L2 weight decay")->capture_default_str();
    c_train->add_option("--grad-clip", tr.tcfg.grad_clip, "Gradient norm limit (0: off)")->capture_default_str();
    c_train->add_option("--warmup", tr.tcfg.warmup, "Linear warmup iterations")->capture_default_str();
    c_train->add_option("--seed", tr.tcfg.seed, "Data and training seed")->capture_default_str();
    c_train->add_option("--checkpoint-every", tr.tcfg.checkpoint_every, "Checkpoint period (0: final only)")
        ->capture_default_str();
    c_train->add_option("--anchors", tr.anchors, "kmeans: fit anchors to the training boxes; config: keep them")
        ->check(CLI::IsMember({"kmeans", "config"}))
        ->capture_default_str();
    c_train->add_flag("--jitter", tr.tcfg.jitter, "Apply crop/pad jitter from the model config");
    c_train->add_flag("--denoise", tr.denoise, "Gaussian-blur manifest images");
    c_train->add_option("--out-dir", tr.out_dir, "Output directory")->capture_default_str();
    c_train->add_option("--write-dataset", tr.write_dataset_dir, "Also write the synthetic set (PPM + manifest)");
    c_train->add_option("--examples", tr.examples, "Example count for iteration accounting");
    c_train->add_option("--epochs", tr.epochs, "Derive iterations as ceil(examples / batch) * epochs");
    c_train->add_flag("--dry-run", tr.dry_run, "Stop after data preparation and accounting");

    DetectArgs det;
    auto* c_detect = app.add_subcommand("detect", "Detect objects in PPM/PGM images");
    det.model.add(c_detect, "tiny");
    c_detect->add_option("--weights", det.weights, "Weights file")->required();
    c_detect->add_option("images", det.images, "Input images")->required();
    c_detect->add_option("--conf", det.post.conf_threshold, "Score threshold")->capture_default_str();
    c_detect->add_option("--nms-iou", det.post.iou_threshold, "NMS IoU threshold")->capture_default_str();
    c_detect->add_option("--out-dir", det.out_dir, "Output directory")->capture_default_str();
    c_detect->add_flag("--denoise", det.denoise, "Gaussian-blur inputs");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Score detections against a manifest");
    ev.model.add(c_eval, "tiny");
    c_eval->add_option("--manifest", ev.manifest, "Ground-truth manifest")->required();
    c_eval->add_option("--detections", ev.detections, "Detections JSON-lines file");
    c_eval->add_option("--weights", ev.weights, "Run the model with these weights instead");
    c_eval->add_option("--match-iou", ev.match_iou, "IoU needed for a true positive")->capture_default_str();
    c_eval->add_option("--conf", ev.post.conf_threshold, "Score threshold (model mode)")->capture_default_str();
    c_eval->add_option("--nms-iou", ev.post.iou_threshold, "NMS IoU threshold (model mode)")->capture_default_str();
    c_eval->add_option("--classes", ev.num_classes, "Class count (default: from model or data)");
    c_eval->add_option("--column", ev.column, "Column title in the text table")->capture_default_str();
    c_eval->add_option("--out-dir", ev.out_dir, "Output directory")->capture_default_str();
    c_eval->add_flag("--denoise", ev.denoise, "Gaussian-blur inputs (model mode)");

    BenchArgs bench;
    auto* c_bench = app.add_subcommand("bench", "Time postprocessing of a synthetic full-size frame");
    c_bench->add_option("--profile", bench.profile, "paper or tiny")->capture_default_str();
    c_bench->add_option("--reps", bench.reps, "Timed repetitions (>= 30)")->capture_default_str();
    c_bench->add_option("--objects", bench.objects, "Planted objects in the frame")->capture_default_str();
    c_bench->add_option("--seed", bench.seed, "Frame seed")->capture_default_str();
    c_bench->add_option("--conf", bench.post.conf_threshold, "Score threshold")->capture_default_str();
    c_bench->add_option("--nms-iou", bench.post.iou_threshold, "NMS IoU threshold")->capture_default_str();
    c_bench->add_option("--out", bench.out, "Write the report as JSON");

    std::string stats_manifest, stats_out;
    auto* c_stats = app.add_subcommand("stats", "Dataset statistics for a manifest");
    c_stats->add_option("--manifest", stats_manifest, "JSON-lines manifest")->required();
    c_stats->add_option("--out", stats_out, "Write the statistics as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (c_anchors->parsed()) {
            return cmd_anchors(anchors);
        }
        if (c_train->parsed()) {
            return cmd_train(tr);
        }
        if (c_detect->parsed()) {
            return cmd_detect(det);
        }
        if (c_eval->parsed()) {
            return cmd_eval(ev);
        }
        if (c_bench->parsed()) {
            return cmd_bench(bench);
        }
        if (c_stats->parsed()) {
            return cmd_stats(stats_manifest, stats_out);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ImageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NetworkError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const TrainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const AnchorError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 3;
    }
    return 3;
}
