#include "smalldet/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "smalldet/random.hpp"

#include <json.hpp>

namespace smalldet {

namespace {

void check_class(int class_id, int num_classes, const char* what)
{
    if (class_id < 0 || class_id >= num_classes) {
        throw EvalError(std::string("evaluate: ") + what + " class id " + std::to_string(class_id) +
                        " out of range [0, " + std::to_string(num_classes) + ")");
    }
}

std::string class_label(int c, const std::vector<std::string>& names)
{
    if (c >= 0 && static_cast<std::size_t>(c) < names.size()) {
        return names[c];
    }
    return "class " + std::to_string(c);
}

}  // namespace

std::vector<MatchFlag> match_class(const std::vector<std::vector<Detection>>& dets_by_image,
                                   const std::vector<std::vector<LabeledBox>>& gts_by_image,
                                   int class_id, double match_iou)
{
    std::vector<MatchFlag> flags;
    for (std::size_t im = 0; im < dets_by_image.size(); ++im) {
        for (std::size_t d = 0; d < dets_by_image[im].size(); ++d) {
            const auto& det = dets_by_image[im][d];
            if (det.class_id == class_id) {
                flags.push_back({im, d, det.score, false, -1});
            }
        }
    }
    std::stable_sort(flags.begin(), flags.end(), [&](const MatchFlag& a, const MatchFlag& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        const float aa = dets_by_image[a.image][a.det].box.area();
        const float ba = dets_by_image[b.image][b.det].box.area();
        return aa < ba;
    });

    std::vector<std::vector<char>> used(gts_by_image.size());
    for (std::size_t im = 0; im < gts_by_image.size(); ++im) {
        used[im].assign(gts_by_image[im].size(), 0);
    }
    for (auto& f : flags) {
        if (f.image >= gts_by_image.size()) {
            continue;
        }
        const auto& gts = gts_by_image[f.image];
        const CornerBox& box = dets_by_image[f.image][f.det].box;
        double best_iou = -1.0;
        int best = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].class_id != class_id || used[f.image][g]) {
                continue;
            }
            const double v = iou(box, gts[g].box);
            if (v >= match_iou && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            used[f.image][best] = 1;
            f.tp = true;
            f.gt = best;
        }
    }
    return flags;
}

double average_precision(const std::vector<PrPoint>& curve)
{
    // Envelope from the right, then integrate over recall steps.
    std::vector<double> env(curve.size());
    double running = 0.0;
    for (std::size_t i = curve.size(); i-- > 0;) {
        running = std::max(running, curve[i].precision);
        env[i] = running;
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (curve[i].recall > prev_recall) {
            ap += (curve[i].recall - prev_recall) * env[i];
            prev_recall = curve[i].recall;
        }
    }
    return std::clamp(ap, 0.0, 1.0);
}

namespace {

// Same integral as average_precision, but from the raw counts in extended
// precision so that rational results such as 5/6 round only once.
double ap_from_counts(const std::vector<int>& tp_at, int num_gt)
{
    std::vector<long double> env(tp_at.size());
    long double running = 0.0L;
    for (std::size_t i = tp_at.size(); i-- > 0;) {
        running = std::max(running, static_cast<long double>(tp_at[i]) / static_cast<long double>(i + 1));
        env[i] = running;
    }
    long double area = 0.0L;
    int prev = 0;
    for (std::size_t i = 0; i < tp_at.size(); ++i) {
        if (tp_at[i] > prev) {
            area += static_cast<long double>(tp_at[i] - prev) * env[i];
            prev = tp_at[i];
        }
    }
    return std::clamp(static_cast<double>(area / num_gt), 0.0, 1.0);
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_by_image,
                    const std::vector<std::vector<LabeledBox>>& gts_by_image, int num_classes,
                    double match_iou)
{
    if (num_classes < 1) {
        throw EvalError("evaluate: num_classes must be >= 1");
    }
    if (!(match_iou >= 0.0 && match_iou <= 1.0)) {
        throw EvalError("evaluate: match_iou must lie in [0, 1]");
    }
    if (dets_by_image.size() != gts_by_image.size()) {
        throw EvalError("evaluate: " + std::to_string(dets_by_image.size()) + " detection lists for " +
                        std::to_string(gts_by_image.size()) + " images");
    }
    for (const auto& img : dets_by_image) {
        for (const auto& d : img) {
            check_class(d.class_id, num_classes, "detection");
        }
    }
    for (const auto& img : gts_by_image) {
        for (const auto& g : img) {
            check_class(g.class_id, num_classes, "ground-truth");
        }
    }

    EvalReport report;
    report.match_iou = match_iou;
    double ap_sum = 0.0;
    int with_gt = 0;
    for (int c = 0; c < num_classes; ++c) {
        ClassResult r;
        for (const auto& img : gts_by_image) {
            r.num_gt += static_cast<int>(
                std::count_if(img.begin(), img.end(), [c](const LabeledBox& g) { return g.class_id == c; }));
        }
        const auto flags = match_class(dets_by_image, gts_by_image, c, match_iou);
        r.num_det = static_cast<int>(flags.size());
        int tp = 0;
        std::vector<int> tp_at;
        for (std::size_t i = 0; i < flags.size(); ++i) {
            tp += flags[i].tp ? 1 : 0;
            tp_at.push_back(tp);
            PrPoint p;
            p.precision = static_cast<double>(tp) / static_cast<double>(i + 1);
            p.recall = r.num_gt > 0 ? static_cast<double>(tp) / r.num_gt : 0.0;
            r.curve.push_back(p);
        }
        r.true_positives = tp;
        if (r.num_gt > 0) {
            r.ap = ap_from_counts(tp_at, r.num_gt);
            ap_sum += r.ap;
            ++with_gt;
        }
        report.classes.emplace(c, std::move(r));
    }
    report.map = with_gt > 0 ? ap_sum / with_gt : 0.0;
    return report;
}

std::string report_json(const EvalReport& report, const std::vector<std::string>& class_names)
{
    nlohmann::json j;
    j["match_iou"] = report.match_iou;
    j["mAP"] = report.map;
    auto& classes = j["classes"] = nlohmann::json::array();
    for (const auto& [c, r] : report.classes) {
        nlohmann::json e;
        e["class"] = c;
        e["name"] = class_label(c, class_names);
        e["num_gt"] = r.num_gt;
        e["num_det"] = r.num_det;
        e["true_positives"] = r.true_positives;
        e["ap"] = r.ap;
        auto& pr = e["pr"] = nlohmann::json::array();
        for (const auto& p : r.curve) {
            pr.push_back({p.precision, p.recall});
        }
        classes.push_back(std::move(e));
    }
    return j.dump(2);
}

std::string report_table(const EvalReport& report, const std::vector<std::string>& class_names,
                         const std::string& column)
{
    std::size_t width = 5;
    for (const auto& [c, r] : report.classes) {
        width = std::max(width, class_label(c, class_names).size());
    }
    std::ostringstream out;
    char buf[64];
    auto row = [&](const std::string& name, const std::string& value) {
        out << name << std::string(width - name.size() + 2, ' ') << value << '\n';
    };
    row("Class", column);
    out << std::string(width + 2 + std::max<std::size_t>(column.size(), 6), '-') << '\n';
    for (const auto& [c, r] : report.classes) {
        if (r.num_gt == 0) {
            row(class_label(c, class_names), "-");
            continue;
        }
        std::snprintf(buf, sizeof buf, "%.4f", r.ap);
        row(class_label(c, class_names), buf);
    }
    std::snprintf(buf, sizeof buf, "%.4f", report.map);
    row("mAP", buf);
    return out.str();
}

LatencyStats fps_bench(const std::function<void()>& pipeline, int repetitions)
{
    if (repetitions < 30) {
        throw EvalError("fps_bench: repetitions must be >= 30");
    }
    using clock = std::chrono::steady_clock;
    pipeline();
    std::vector<double> ms;
    ms.reserve(repetitions);
    for (int i = 0; i < repetitions; ++i) {
        const auto t0 = clock::now();
        pipeline();
        const auto t1 = clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    LatencyStats s;
    s.repetitions = repetitions;
    s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / repetitions;
    std::sort(ms.begin(), ms.end());
    auto pct = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * repetitions)) - 1;
        return ms[std::min(idx, ms.size() - 1)];
    };
    s.p50_ms = pct(0.50);
    s.p99_ms = pct(0.99);
    s.implied_fps = s.p50_ms > 0.0 ? 1000.0 / s.p50_ms : 0.0;
    return s;
}

RawPredictions bench_frame(const ModelConfig& cfg, int objects, std::uint64_t seed)
{
    const auto heads = head_layout(cfg);
    const int K = cfg.num_classes;
    const int per_anchor = 5 + K;
    Rng rng(seed);
    RawPredictions raw;
    for (const auto& h : heads) {
        const int A = static_cast<int>(h.anchors.size());
        Tensor t({1, A * per_anchor, h.grid, h.grid});
        const std::size_t plane = static_cast<std::size_t>(h.grid) * h.grid;
        for (int a = 0; a < A; ++a) {
            float* ch = t.raw() + static_cast<std::size_t>(a) * per_anchor * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                ch[p] = static_cast<float>(rng.normal());
                ch[plane + p] = static_cast<float>(rng.normal());
                ch[2 * plane + p] = static_cast<float>(0.5 * rng.normal());
                ch[3 * plane + p] = static_cast<float>(0.5 * rng.normal());
                ch[4 * plane + p] = static_cast<float>(-8.0 + 1.5 * rng.normal());
            }
            for (int k = 0; k < K; ++k) {
                for (std::size_t p = 0; p < plane; ++p) {
                    ch[(5 + k) * plane + p] = static_cast<float>(-4.0 + rng.normal());
                }
            }
        }
        raw.push_back(std::move(t));
    }
    auto set_slot = [&](std::size_t head, int a, int y, int x, int cls, float obj, float logit) {
        const int S = heads[head].grid;
        if (x < 0 || y < 0 || x >= S || y >= S) {
            return;
        }
        const std::size_t plane = static_cast<std::size_t>(S) * S;
        float* ch = raw[head].raw() + static_cast<std::size_t>(a) * per_anchor * plane;
        const std::size_t p = static_cast<std::size_t>(y) * S + x;
        ch[4 * plane + p] = obj;
        ch[(5 + cls) * plane + p] = logit;
    };
    for (int o = 0; o < objects; ++o) {
        const auto head = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(heads.size()) - 1));
        const int S = heads[head].grid;
        const int A = static_cast<int>(heads[head].anchors.size());
        const int x = rng.uniform_int(0, S - 1), y = rng.uniform_int(0, S - 1);
        const int a = rng.uniform_int(0, A - 1);
        const int cls = rng.uniform_int(0, K - 1);
        set_slot(head, a, y, x, cls, static_cast<float>(4.0 + 0.5 * rng.normal()), 4.0f);
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx != 0 || dy != 0) {
                    set_slot(head, a, y + dy, x + dx, cls, static_cast<float>(1.0 + 0.5 * rng.normal()), 3.0f);
                }
            }
        }
        for (int b = 0; b < A; ++b) {
            if (b != a) {
                set_slot(head, b, y, x, cls, static_cast<float>(0.5 + 0.5 * rng.normal()), 3.0f);
            }
        }
    }
    return raw;
}

}  // namespace smalldet
