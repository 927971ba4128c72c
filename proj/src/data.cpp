#include "smalldet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace smalldet {

namespace {

using nlohmann::json;

constexpr float kBoxTolerance = 1e-5f;

// Shortest decimal that reads back as the same float, held as a double so
// the JSON writer prints it compactly.
double compact(float v)
{
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    double d = 0.0;
    std::from_chars(buf, res.ptr, d);
    return d;
}

bool box_in_unit_square(const Box& b)
{
    if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !std::isfinite(b.w) || !std::isfinite(b.h)) {
        return false;
    }
    if (b.w <= 0.0f || b.h <= 0.0f) {
        return false;
    }
    return b.cx - b.w / 2 >= -kBoxTolerance && b.cx + b.w / 2 <= 1.0f + kBoxTolerance &&
           b.cy - b.h / 2 >= -kBoxTolerance && b.cy + b.h / 2 <= 1.0f + kBoxTolerance;
}

template <typename T>
T field(const json& obj, const char* key, int line)
{
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw DataError("manifest line " + std::to_string(line) + ": missing field \"" + key + "\"");
    }
    if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) {
            throw DataError("manifest line " + std::to_string(line) + ": \"" + key + "\" must be a string");
        }
    } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) {
            throw DataError("manifest line " + std::to_string(line) + ": \"" + key + "\" must be an integer");
        }
    } else {
        if (!it->is_number()) {
            throw DataError("manifest line " + std::to_string(line) + ": \"" + key + "\" must be a number");
        }
    }
    return it->get<T>();
}

// Separable [1, e^-0.5, 1]-style taps for sigma 1, normalized.
std::array<float, 3> gaussian_taps()
{
    const double side = std::exp(-0.5);
    const double sum = 1.0 + 2.0 * side;
    return {static_cast<float>(side / sum), static_cast<float>(1.0 / sum), static_cast<float>(side / sum)};
}

// Samples the window [x0,x1)x[y0,y1) of `chw` (pixel units, may exceed the
// image) into an out_w x out_h grid; outside samples take `fill`.
Tensor crop_resize(const Tensor& chw, double x0, double y0, double x1, double y1, int out_w, int out_h, float fill)
{
    const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    Tensor out({C, out_h, out_w}, fill);
    const double sx = (x1 - x0) / out_w, sy = (y1 - y0) / out_h;
    for (int oy = 0; oy < out_h; ++oy) {
        const double fy = y0 + (oy + 0.5) * sy - 0.5;
        if (fy < -0.5 || fy > H - 0.5) {
            continue;
        }
        const double cy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
        const int iy = std::min(static_cast<int>(cy), H - 2 < 0 ? 0 : H - 2);
        const double wy = H > 1 ? cy - iy : 0.0;
        for (int ox = 0; ox < out_w; ++ox) {
            const double fx = x0 + (ox + 0.5) * sx - 0.5;
            if (fx < -0.5 || fx > W - 0.5) {
                continue;
            }
            const double cx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
            const int ix = std::min(static_cast<int>(cx), W - 2 < 0 ? 0 : W - 2);
            const double wx = W > 1 ? cx - ix : 0.0;
            const int ix1 = std::min(ix + 1, W - 1), iy1 = std::min(iy + 1, H - 1);
            for (int c = 0; c < C; ++c) {
                const float* p = chw.raw() + static_cast<std::size_t>(c) * H * W;
                const double v = (1 - wy) * ((1 - wx) * p[iy * W + ix] + wx * p[iy * W + ix1]) +
                                 wy * ((1 - wx) * p[iy1 * W + ix] + wx * p[iy1 * W + ix1]);
                out[(static_cast<std::size_t>(c) * out_h + oy) * out_w + ox] = static_cast<float>(v);
            }
        }
    }
    return out;
}

}  // namespace

std::string Manifest::image_path(const SampleRecord& r) const
{
    std::filesystem::path p(r.image);
    if (p.is_absolute() || base_dir.empty()) {
        return p.string();
    }
    return (std::filesystem::path(base_dir) / p).string();
}

Manifest parse_manifest(std::string_view text, std::string base_dir, int num_classes)
{
    Manifest m;
    m.base_dir = std::move(base_dir);
    int line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        }
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object()) {
            throw DataError("manifest line " + std::to_string(line_no) + ": expected an object");
        }
        SampleRecord r;
        r.image = field<std::string>(obj, "image", line_no);
        r.width = field<int>(obj, "width", line_no);
        r.height = field<int>(obj, "height", line_no);
        if (r.width <= 0 || r.height <= 0) {
            throw DataError("manifest line " + std::to_string(line_no) + ": width and height must be positive");
        }
        auto boxes = obj.find("boxes");
        if (boxes == obj.end() || !boxes->is_array()) {
            throw DataError("manifest line " + std::to_string(line_no) + ": \"boxes\" must be an array");
        }
        std::string problem;
        for (const auto& b : *boxes) {
            if (!b.is_object()) {
                throw DataError("manifest line " + std::to_string(line_no) + ": box must be an object");
            }
            Annotation a;
            a.class_id = field<int>(b, "class", line_no);
            a.box.cx = field<float>(b, "cx", line_no);
            a.box.cy = field<float>(b, "cy", line_no);
            a.box.w = field<float>(b, "w", line_no);
            a.box.h = field<float>(b, "h", line_no);
            if (problem.empty()) {
                if (a.class_id < 0 || (num_classes > 0 && a.class_id >= num_classes)) {
                    problem = "class " + std::to_string(a.class_id) + " out of range";
                } else if (!box_in_unit_square(a.box)) {
                    problem = "box outside the unit square";
                }
            }
            r.boxes.push_back(a);
        }
        if (!problem.empty()) {
            m.warnings.push_back("manifest line " + std::to_string(line_no) + ": " + problem + "; record skipped");
            ++m.skipped_records;
            continue;
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

Manifest load_manifest(const std::string& path, int num_classes)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open manifest " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), std::filesystem::path(path).parent_path().string(), num_classes);
}

std::string emit_manifest(const std::vector<SampleRecord>& records)
{
    std::string out;
    for (const auto& r : records) {
        json obj;
        obj["image"] = r.image;
        obj["width"] = r.width;
        obj["height"] = r.height;
        obj["boxes"] = json::array();
        for (const auto& a : r.boxes) {
            obj["boxes"].push_back({{"class", a.class_id},
                                    {"cx", compact(a.box.cx)},
                                    {"cy", compact(a.box.cy)},
                                    {"w", compact(a.box.w)},
                                    {"h", compact(a.box.h)}});
        }
        out += obj.dump();
        out += '\n';
    }
    return out;
}

Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w)
{
    if (chw.rank() != 3 || out_h <= 0 || out_w <= 0) {
        throw DataError("resize_bilinear: expected [C,H,W] input and a positive size");
    }
    if (chw.dim(1) == out_h && chw.dim(2) == out_w) {
        return chw;
    }
    return crop_resize(chw, 0.0, 0.0, chw.dim(2), chw.dim(1), out_w, out_h, 0.0f);
}

Tensor gaussian_blur3(const Tensor& chw)
{
    const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    const auto k = gaussian_taps();
    Tensor tmp(chw.shape()), out(chw.shape());
    for (int c = 0; c < C; ++c) {
        const float* src = chw.raw() + static_cast<std::size_t>(c) * H * W;
        float* t = tmp.raw() + static_cast<std::size_t>(c) * H * W;
        float* dst = out.raw() + static_cast<std::size_t>(c) * H * W;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const int xl = std::max(x - 1, 0), xr = std::min(x + 1, W - 1);
                t[y * W + x] = k[0] * src[y * W + xl] + k[1] * src[y * W + x] + k[2] * src[y * W + xr];
            }
        }
        for (int y = 0; y < H; ++y) {
            const int yu = std::max(y - 1, 0), yd = std::min(y + 1, H - 1);
            for (int x = 0; x < W; ++x) {
                dst[y * W + x] = k[0] * t[yu * W + x] + k[1] * t[y * W + x] + k[2] * t[yd * W + x];
            }
        }
    }
    return out;
}

Tensor preprocess(const Tensor& chw, const PreprocessOptions& opt)
{
    if (chw.rank() != 3 || chw.dim(0) != 3) {
        throw DataError("preprocess: expected [3,H,W], got " + shape_string(chw.shape()));
    }
    Tensor t = resize_bilinear(chw, opt.input_size, opt.input_size);
    for (auto& v : t.data()) {
        v = std::clamp(v, 0.0f, 1.0f);
    }
    if (opt.binarize) {
        for (auto& v : t.data()) {
            v = v >= opt.binarize_threshold ? 1.0f : 0.0f;
        }
    }
    if (opt.denoise) {
        t = gaussian_blur3(t);
    }
    if (opt.standardize) {
        const std::size_t plane = static_cast<std::size_t>(opt.input_size) * opt.input_size;
        for (int c = 0; c < 3; ++c) {
            if (!(opt.stddev[c] > 0.0f)) {
                throw DataError("preprocess: standardization stddev must be positive");
            }
            for (std::size_t i = 0; i < plane; ++i) {
                float& v = t[c * plane + i];
                v = (v - opt.mean[c]) / opt.stddev[c];
            }
        }
    }
    return t;
}

std::vector<GroundTruth> to_ground_truth(const std::vector<Annotation>& boxes)
{
    std::vector<GroundTruth> gt;
    gt.reserve(boxes.size());
    for (const auto& a : boxes) {
        gt.push_back({a.box, a.class_id});
    }
    return gt;
}

Sample load_sample(const Manifest& manifest, const SampleRecord& record, const PreprocessOptions& opt)
{
    const std::string path = manifest.image_path(record);
    Image img = read_pnm(path);
    if (img.width != record.width || img.height != record.height) {
        throw DataError(path + ": image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " but the manifest says " + std::to_string(record.width) + "x" + std::to_string(record.height));
    }
    return {preprocess(image_to_tensor(img), opt), to_ground_truth(record.boxes), path};
}

Sample jitter(const Sample& sample, float amount, Rng& rng)
{
    const int H = sample.image.dim(1), W = sample.image.dim(2);
    const double l = rng.uniform(-amount, amount) * W, r = rng.uniform(-amount, amount) * W;
    const double t = rng.uniform(-amount, amount) * H, b = rng.uniform(-amount, amount) * H;
    // Positive values crop inward, negative pad outward.
    const double x0 = l, x1 = W - r, y0 = t, y1 = H - b;
    Sample out;
    out.source = sample.source;
    out.image = crop_resize(sample.image, x0, y0, x1, y1, W, H, 0.5f);
    const double cw = x1 - x0, ch = y1 - y0;
    for (const auto& g : sample.boxes) {
        const double bx1 = ((g.box.cx - g.box.w / 2) * W - x0) / cw, bx2 = ((g.box.cx + g.box.w / 2) * W - x0) / cw;
        const double by1 = ((g.box.cy - g.box.h / 2) * H - y0) / ch, by2 = ((g.box.cy + g.box.h / 2) * H - y0) / ch;
        const double full = (bx2 - bx1) * (by2 - by1);
        const double cx1 = std::clamp(bx1, 0.0, 1.0), cx2 = std::clamp(bx2, 0.0, 1.0);
        const double cy1 = std::clamp(by1, 0.0, 1.0), cy2 = std::clamp(by2, 0.0, 1.0);
        const double kept = std::max(0.0, cx2 - cx1) * std::max(0.0, cy2 - cy1);
        if (full <= 0.0 || kept < 0.25 * full) {
            continue;
        }
        GroundTruth n;
        n.class_id = g.class_id;
        n.box = {static_cast<float>((cx1 + cx2) / 2), static_cast<float>((cy1 + cy2) / 2),
                 static_cast<float>(cx2 - cx1), static_cast<float>(cy2 - cy1)};
        out.boxes.push_back(n);
    }
    return out;
}

DatasetStats dataset_stats(const std::vector<SampleRecord>& records)
{
    DatasetStats s;
    s.num_images = static_cast<int>(records.size());
    if (records.empty()) {
        return s;
    }
    std::set<int> all;
    double scale_sum = 0.0, classes_sum = 0.0;
    for (const auto& r : records) {
        s.avg_width += r.width;
        s.avg_height += r.height;
        std::set<int> present;
        for (const auto& a : r.boxes) {
            present.insert(a.class_id);
            all.insert(a.class_id);
            scale_sum += std::sqrt(static_cast<double>(a.box.w) * a.box.h);
            ++s.num_objects;
        }
        classes_sum += static_cast<double>(present.size());
    }
    const double n = static_cast<double>(records.size());
    s.avg_width /= n;
    s.avg_height /= n;
    s.avg_classes_per_image = classes_sum / n;
    s.num_classes = static_cast<int>(all.size());
    s.avg_object_scale = s.num_objects > 0 ? scale_sum / s.num_objects : 0.0;
    return s;
}

std::string stats_json(const DatasetStats& s)
{
    json j{{"num_images", s.num_images},
           {"num_classes", s.num_classes},
           {"num_objects", s.num_objects},
           {"avg_resolution", {s.avg_width, s.avg_height}},
           {"avg_object_classes_per_image", s.avg_classes_per_image},
           {"avg_object_scale", s.avg_object_scale}};
    return j.dump(2);
}

SyntheticDataset synth_small_objects(int n_images, int image_size, std::uint64_t seed)
{
    if (image_size < 64 || image_size % 32 != 0) {
        throw DataError("synth_small_objects: image_size must be >= 64 and a multiple of 32");
    }
    if (n_images < 0) {
        throw DataError("synth_small_objects: n_images must be >= 0");
    }
    static const Rgb kColors[3] = {{220, 50, 40}, {40, 190, 60}, {50, 70, 220}};
    constexpr double kSmall[2] = {0.06, 0.10};
    constexpr double kLarge[2] = {0.14, 0.28};

    Rng rng(seed);
    SyntheticDataset set;
    const int S = image_size;
    for (int n = 0; n < n_images; ++n) {
        Image img(S, S, 3);
        const int base = rng.uniform_int(90, 160);
        for (auto& v : img.pixels) {
            v = static_cast<std::uint8_t>(std::clamp(base + rng.uniform_int(-25, 25), 0, 255));
        }
        SampleRecord rec;
        char name[32];
        std::snprintf(name, sizeof name, "img_%04d.ppm", n);
        rec.image = name;
        rec.width = S;
        rec.height = S;

        struct Placed {
            int x0, y0, w, h;
        };
        std::vector<Placed> placed;
        const int objects = rng.uniform_int(1, 4);
        for (int i = 0; i < objects; ++i) {
            const bool small = i % 2 == 0 || rng.uniform() < 0.5;
            const double scale = small ? rng.uniform(kSmall[0], kSmall[1]) : rng.uniform(kLarge[0], kLarge[1]);
            const int cls = rng.uniform_int(0, 2);
            int w = 0, h = 0;
            if (cls == 2) {
                const int lng = std::max(6, static_cast<int>(scale * std::sqrt(3.0) * S));
                const int shrt = std::max(2, static_cast<int>(scale / std::sqrt(3.0) * S));
                const bool horizontal = rng.uniform() < 0.5;
                w = horizontal ? lng : shrt;
                h = horizontal ? shrt : lng;
            } else {
                w = h = std::max(4, static_cast<int>(scale * S));
            }
            // Rejection-sample a spot that keeps a 2px gap to earlier shapes.
            bool ok = false;
            int x0 = 0, y0 = 0;
            for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
                x0 = rng.uniform_int(0, S - w);
                y0 = rng.uniform_int(0, S - h);
                ok = std::none_of(placed.begin(), placed.end(), [&](const Placed& p) {
                    return x0 < p.x0 + p.w + 2 && p.x0 < x0 + w + 2 && y0 < p.y0 + p.h + 2 && p.y0 < y0 + h + 2;
                });
            }
            if (!ok) {
                continue;
            }
            placed.push_back({x0, y0, w, h});
            Rgb color = kColors[cls];
            for (auto& c : color) {
                c = static_cast<std::uint8_t>(std::clamp(c + rng.uniform_int(-20, 20), 0, 255));
            }
            const double rx = w / 2.0, ry = h / 2.0;
            for (int y = y0; y < y0 + h; ++y) {
                for (int x = x0; x < x0 + w; ++x) {
                    if (cls == 1) {
                        const double dx = (x + 0.5 - x0 - rx) / rx, dy = (y + 0.5 - y0 - ry) / ry;
                        if (dx * dx + dy * dy > 1.0) {
                            continue;
                        }
                    }
                    std::uint8_t* p = img.px(x, y);
                    p[0] = color[0];
                    p[1] = color[1];
                    p[2] = color[2];
                }
            }
            Annotation a;
            a.class_id = cls;
            a.box = {static_cast<float>((x0 + rx) / S), static_cast<float>((y0 + ry) / S),
                     static_cast<float>(static_cast<double>(w) / S), static_cast<float>(static_cast<double>(h) / S)};
            rec.boxes.push_back(a);
        }
        set.images.push_back(std::move(img));
        set.records.push_back(std::move(rec));
    }
    return set;
}

void write_dataset(const SyntheticDataset& set, const std::string& dir)
{
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        write_pnm((std::filesystem::path(dir) / set.records[i].image).string(), set.images[i]);
    }
    std::ofstream out(std::filesystem::path(dir) / "manifest.jsonl", std::ios::binary);
    out << emit_manifest(set.records);
    if (!out) {
        throw DataError("cannot write manifest in " + dir);
    }
}

std::vector<Sample> to_samples(const SyntheticDataset& set)
{
    std::vector<Sample> samples;
    samples.reserve(set.images.size());
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        samples.push_back({image_to_tensor(set.images[i]), to_ground_truth(set.records[i].boxes), set.records[i].image});
    }
    return samples;
}

}  // namespace smalldet
