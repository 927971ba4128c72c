#include "smalldet/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace smalldet {

std::string_view to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::convolutional: return "convolutional";
    case LayerKind::shortcut: return "shortcut";
    case LayerKind::upsample: return "upsample";
    case LayerKind::route: return "route";
    case LayerKind::detection: return "detection";
    }
    return "?";
}

std::string_view to_string(Activation act)
{
    return act == Activation::leaky ? "leaky" : "linear";
}

ConfigError::ConfigError(const std::string& message, int line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      line_(line)
{
}

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text, int line, std::string_view key)
{
    text = trim(text);
    if (!text.empty() && text.front() == '+') {
        text.remove_prefix(1);
    }
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw ConfigError("invalid numeric value '" + std::string(text) + "' for key '" +
                              std::string(key) + "'",
                          line);
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(value)) {
            throw ConfigError("non-finite value for key '" + std::string(key) + "'", line);
        }
    }
    return value;
}

template <typename T>
std::vector<T> parse_list(std::string_view text, int line, std::string_view key)
{
    std::vector<T> out;
    if (trim(text).empty()) {
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const auto comma = text.find(',', start);
        const auto item = text.substr(start, comma == std::string_view::npos ? text.npos
                                                                             : comma - start);
        out.push_back(parse_number<T>(item, line, key));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::string format_float(float v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) {
            out += ',';
        }
        if constexpr (std::is_floating_point_v<T>) {
            out += format_float(values[i]);
        } else {
            out += std::to_string(values[i]);
        }
    }
    return out;
}

struct Entry {
    std::string value;
    int line = 0;
};

struct Section {
    std::string name;
    int line = 0;
    std::map<std::string, Entry, std::less<>> entries;
};

std::vector<Section> split_sections(std::string_view text)
{
    std::vector<Section> sections;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view raw =
            text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        if (const auto hash = raw.find('#'); hash != std::string_view::npos) {
            raw = raw.substr(0, hash);
        }
        const auto line = trim(raw);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("malformed section header", line_no);
            }
            sections.push_back({std::string(trim(line.substr(1, line.size() - 2))), line_no, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected key=value", line_no);
        }
        if (sections.empty()) {
            throw ConfigError("key outside of any section", line_no);
        }
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty()) {
            throw ConfigError("empty key", line_no);
        }
        auto& entries = sections.back().entries;
        if (entries.count(key)) {
            throw ConfigError("duplicate key '" + key + "'", line_no);
        }
        entries.emplace(key, Entry{std::string(trim(line.substr(eq + 1))), line_no});
    }
    return sections;
}

/// Reads keys out of a section, remembering which were consumed so the
/// leftovers can be reported as unknown.
class SectionReader {
public:
    explicit SectionReader(const Section& s) : section_(s) {}

    const Entry* find(std::string_view key)
    {
        auto it = section_.entries.find(key);
        if (it == section_.entries.end()) {
            return nullptr;
        }
        used_.insert(it->first);
        return &it->second;
    }

    template <typename T>
    void read(std::string_view key, T& out)
    {
        if (const auto* e = find(key)) {
            out = parse_number<T>(e->value, e->line, key);
        }
    }

    template <typename T>
    void read_list(std::string_view key, std::vector<T>& out)
    {
        if (const auto* e = find(key)) {
            out = parse_list<T>(e->value, e->line, key);
        }
    }

    int line_of(std::string_view key) const
    {
        auto it = section_.entries.find(key);
        return it == section_.entries.end() ? section_.line : it->second.line;
    }

    void reject_unknown() const
    {
        for (const auto& [key, entry] : section_.entries) {
            if (!used_.count(key)) {
                throw ConfigError("unknown key '" + key + "' in [" + section_.name + "]",
                                  entry.line);
            }
        }
    }

private:
    const Section& section_;
    std::set<std::string, std::less<>> used_;
};

Activation parse_activation(const Entry& e)
{
    if (e.value == "leaky") {
        return Activation::leaky;
    }
    if (e.value == "linear") {
        return Activation::linear;
    }
    throw ConfigError("unknown activation '" + e.value + "'", e.line);
}

LayerSpec parse_layer(const Section& s, int default_pad)
{
    SectionReader r(s);
    LayerSpec spec;
    if (s.name == "convolutional") {
        spec.kind = LayerKind::convolutional;
        spec.pad = default_pad;
        spec.activation = Activation::leaky;
        r.read("filters", spec.filters);
        r.read("size", spec.size);
        r.read("stride", spec.stride);
        r.read("pad", spec.pad);
        if (const auto* e = r.find("activation")) {
            spec.activation = parse_activation(*e);
        }
        if (spec.filters <= 0) {
            throw ConfigError("convolutional: filters must be positive", r.line_of("filters"));
        }
        if (spec.size != 1 && spec.size != 3) {
            throw ConfigError("convolutional: size must be 1 or 3", r.line_of("size"));
        }
        if (spec.stride != 1 && spec.stride != 2) {
            throw ConfigError("convolutional: stride must be 1 or 2", r.line_of("stride"));
        }
        if (spec.pad != 0 && spec.pad != 1) {
            throw ConfigError("convolutional: pad must be 0 or 1", r.line_of("pad"));
        }
    } else if (s.name == "shortcut") {
        spec.kind = LayerKind::shortcut;
        spec.from = 0;
        r.read("from", spec.from);
        if (const auto* e = r.find("activation"); e && e->value != "linear") {
            throw ConfigError("shortcut: only linear activation is supported", e->line);
        }
        if (spec.from == 0) {
            throw ConfigError("shortcut: missing or zero 'from'", s.line);
        }
    } else if (s.name == "upsample") {
        spec.kind = LayerKind::upsample;
        spec.stride = 2;
        r.read("stride", spec.stride);
        if (spec.stride != 2) {
            throw ConfigError("upsample: only stride 2 is supported", r.line_of("stride"));
        }
    } else if (s.name == "route") {
        spec.kind = LayerKind::route;
        r.read_list("layers", spec.layers);
        if (spec.layers.empty()) {
            throw ConfigError("route: 'layers' is required", s.line);
        }
    } else if (s.name == "detection") {
        spec.kind = LayerKind::detection;
        r.read_list("mask", spec.mask);
    } else {
        throw ConfigError("unknown section [" + s.name + "]", s.line);
    }
    r.reject_unknown();
    return spec;
}

}  // namespace

std::vector<Anchor> default_anchors(int input_size, int count)
{
    // Aspect cycle follows the per-cell detector roles: small, slightly
    // larger, wide, tall, large.
    static constexpr float aspects[5] = {1.0f, 1.0f, 2.0f, 0.5f, 1.0f};
    std::vector<Anchor> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double t = count > 1 ? static_cast<double>(i) / (count - 1) : 0.0;
        const double side = input_size * 0.02 * std::pow(0.5 / 0.02, t);
        const double r = aspects[i % 5];
        out.push_back({static_cast<float>(side * std::sqrt(r)),
                       static_cast<float>(side / std::sqrt(r))});
    }
    return out;
}

ModelConfig parse_config(std::string_view text, std::vector<std::string>* warnings)
{
    auto warn = [&](std::string msg) {
        if (warnings) {
            warnings->push_back(std::move(msg));
        }
    };

    const auto sections = split_sections(text);
    if (sections.empty() || sections.front().name != "net") {
        throw ConfigError("no [net] section");
    }

    ModelConfig cfg;
    cfg.anchors.clear();
    {
        const Section& net = sections.front();
        SectionReader r(net);
        if (!r.find("classes")) {
            throw ConfigError("[net] requires an explicit 'classes' key", net.line);
        }
        r.read("input_size", cfg.input_size);
        r.read("classes", cfg.num_classes);
        r.read_list("strides", cfg.strides);
        r.read_list("stride", cfg.strides);
        r.read("anchors_per_scale", cfg.anchors_per_scale);
        std::vector<float> flat;
        r.read_list("anchors", flat);
        if (flat.size() % 2 != 0) {
            throw ConfigError("anchors must be w,h pairs", r.line_of("anchors"));
        }
        for (std::size_t i = 0; i < flat.size(); i += 2) {
            cfg.anchors.push_back({flat[i], flat[i + 1]});
        }
        r.read("ignore_threshold", cfg.ignore_threshold);
        r.read("truth_threshold", cfg.truth_threshold);
        r.read("jitter", cfg.jitter);
        r.read("random", cfg.random);
        r.read_list("filters", cfg.filters);
        r.read("pad", cfg.pad);
        r.read("lambda_coord", cfg.loss.lambda_coord);
        r.read("lambda_noobj", cfg.loss.lambda_noobj);
        if (const auto* e = r.find("class_loss")) {
            if (e->value == "mse") {
                cfg.loss.class_loss = ClassLoss::squared_error;
            } else if (e->value == "bce") {
                cfg.loss.class_loss = ClassLoss::cross_entropy;
            } else {
                throw ConfigError("class_loss must be mse or bce", e->line);
            }
        }
        r.read("seed", cfg.seed);
        if (const auto* e = r.find("census")) {
            const auto counts = parse_list<int>(e->value, e->line, "census");
            if (counts.size() != 4) {
                throw ConfigError("census expects conv,shortcut,upsample,detection", e->line);
            }
            cfg.census = LayerCensus{counts[0], counts[1], counts[2], 0, counts[3]};
        }
        int num = -1;
        r.read("num", num);
        r.reject_unknown();

        if (cfg.pad != 0 && cfg.pad != 1) {
            throw ConfigError("pad must be 0 or 1", r.line_of("pad"));
        }
        const int expected = static_cast<int>(cfg.strides.size()) * cfg.anchors_per_scale;
        if (cfg.anchors.empty() && cfg.anchors_per_scale > 0) {
            cfg.anchors = default_anchors(cfg.input_size, expected);
        }
        if (num >= 0 && num != cfg.total_anchors()) {
            warn("num=" + std::to_string(num) + " ignored; masks define " +
                 std::to_string(cfg.total_anchors()) + " anchors");
        }
    }

    for (std::size_t i = 1; i < sections.size(); ++i) {
        if (sections[i].name == "net") {
            throw ConfigError("duplicate [net] section", sections[i].line);
        }
        cfg.layers.push_back(parse_layer(sections[i], cfg.pad));
    }

    // Heads without an explicit mask take anchors by area: the first (coarsest)
    // head gets the largest group.
    const int heads = static_cast<int>(cfg.strides.size());
    int head = 0;
    for (auto& layer : cfg.layers) {
        if (layer.kind != LayerKind::detection) {
            continue;
        }
        if (layer.mask.empty()) {
            for (int a = 0; a < cfg.anchors_per_scale; ++a) {
                layer.mask.push_back((heads - 1 - head) * cfg.anchors_per_scale + a);
            }
        }
        cfg.masks.push_back(layer.mask);
        ++head;
    }

    validate(cfg);
    return cfg;
}

void validate(const ModelConfig& cfg)
{
    if (cfg.input_size <= 0) {
        throw ConfigError("input_size must be positive");
    }
    if (cfg.num_classes <= 0) {
        throw ConfigError("classes must be positive");
    }
    if (cfg.strides.empty()) {
        throw ConfigError("strides must not be empty");
    }
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
        const int s = cfg.strides[i];
        if (s <= 0 || cfg.input_size % s != 0) {
            throw ConfigError("stride " + std::to_string(s) + " does not divide input_size " +
                              std::to_string(cfg.input_size));
        }
        if (i > 0 && s >= cfg.strides[i - 1]) {
            throw ConfigError("strides must be strictly decreasing");
        }
    }
    if (cfg.anchors_per_scale < 1) {
        throw ConfigError("anchors_per_scale must be at least 1");
    }
    if (cfg.ignore_threshold < 0.0f || cfg.ignore_threshold > 1.0f) {
        throw ConfigError("ignore_threshold must lie in [0,1]");
    }
    if (cfg.truth_threshold < 0.0f || cfg.truth_threshold > 1.0f) {
        throw ConfigError("truth_threshold must lie in [0,1]");
    }
    if (cfg.jitter < 0.0f || cfg.jitter >= 1.0f) {
        throw ConfigError("jitter must lie in [0,1)");
    }
    if (!(cfg.loss.lambda_coord > 0.0f) || !(cfg.loss.lambda_noobj > 0.0f)) {
        throw ConfigError("loss weights must be positive");
    }
    for (const auto& a : cfg.anchors) {
        if (!(a.w > 0.0f) || !(a.h > 0.0f)) {
            throw ConfigError("anchor dimensions must be positive");
        }
    }
    if (cfg.masks.size() != cfg.strides.size()) {
        throw ConfigError("expected " + std::to_string(cfg.strides.size()) +
                          " detection sections (one per stride), found " +
                          std::to_string(cfg.masks.size()));
    }
    std::set<int> seen;
    for (const auto& mask : cfg.masks) {
        if (static_cast<int>(mask.size()) != cfg.anchors_per_scale) {
            throw ConfigError("each mask must list anchors_per_scale indices");
        }
        for (int idx : mask) {
            if (idx < 0 || idx >= cfg.total_anchors()) {
                throw ConfigError("mask index " + std::to_string(idx) +
                                  " out of range for " + std::to_string(cfg.total_anchors()) +
                                  " anchors");
            }
            if (!seen.insert(idx).second) {
                throw ConfigError("anchor index " + std::to_string(idx) +
                                  " appears in more than one mask");
            }
        }
    }
}

std::string emit_config(const ModelConfig& cfg)
{
    std::ostringstream os;
    os << "[net]\n";
    os << "input_size=" << cfg.input_size << '\n';
    os << "classes=" << cfg.num_classes << '\n';
    os << "strides=" << join(cfg.strides) << '\n';
    os << "anchors_per_scale=" << cfg.anchors_per_scale << '\n';
    std::vector<float> flat;
    for (const auto& a : cfg.anchors) {
        flat.push_back(a.w);
        flat.push_back(a.h);
    }
    os << "anchors=" << join(flat) << '\n';
    os << "ignore_threshold=" << format_float(cfg.ignore_threshold) << '\n';
    os << "truth_threshold=" << format_float(cfg.truth_threshold) << '\n';
    os << "jitter=" << format_float(cfg.jitter) << '\n';
    os << "random=" << cfg.random << '\n';
    os << "filters=" << join(cfg.filters) << '\n';
    os << "pad=" << cfg.pad << '\n';
    os << "lambda_coord=" << format_float(cfg.loss.lambda_coord) << '\n';
    os << "lambda_noobj=" << format_float(cfg.loss.lambda_noobj) << '\n';
    os << "class_loss=" << (cfg.loss.class_loss == ClassLoss::squared_error ? "mse" : "bce")
       << '\n';
    os << "seed=" << cfg.seed << '\n';
    if (cfg.census) {
        const auto& c = *cfg.census;
        os << "census=" << c.convolutional << ',' << c.shortcut << ',' << c.upsample << ','
           << c.detection << '\n';
    }

    for (const auto& layer : cfg.layers) {
        os << "\n[" << to_string(layer.kind) << "]\n";
        switch (layer.kind) {
        case LayerKind::convolutional:
            os << "filters=" << layer.filters << '\n';
            os << "size=" << layer.size << '\n';
            os << "stride=" << layer.stride << '\n';
            os << "pad=" << layer.pad << '\n';
            os << "activation=" << to_string(layer.activation) << '\n';
            break;
        case LayerKind::shortcut:
            os << "from=" << layer.from << '\n';
            break;
        case LayerKind::upsample:
            os << "stride=" << layer.stride << '\n';
            break;
        case LayerKind::route:
            os << "layers=" << join(layer.layers) << '\n';
            break;
        case LayerKind::detection:
            os << "mask=" << join(layer.mask) << '\n';
            break;
        }
    }
    return os.str();
}

LayerCensus census_of(const ModelConfig& cfg)
{
    LayerCensus c;
    for (const auto& layer : cfg.layers) {
        switch (layer.kind) {
        case LayerKind::convolutional: ++c.convolutional; break;
        case LayerKind::shortcut: ++c.shortcut; break;
        case LayerKind::upsample: ++c.upsample; break;
        case LayerKind::route: ++c.route; break;
        case LayerKind::detection: ++c.detection; break;
        }
    }
    return c;
}

std::vector<ScaleSpec> head_layout(const ModelConfig& cfg)
{
    std::vector<ScaleSpec> heads;
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
        ScaleSpec s;
        s.stride = cfg.strides[i];
        s.grid = cfg.input_size / s.stride;
        s.mask = cfg.masks.at(i);
        for (int idx : s.mask) {
            s.anchors.push_back(cfg.anchors.at(idx));
        }
        heads.push_back(std::move(s));
    }
    return heads;
}

ModelConfig profile_config(std::string_view name)
{
    if (name == "paper") {
        return parse_config(paper_profile_text());
    }
    if (name == "tiny") {
        return parse_config(tiny_profile_text());
    }
    throw ConfigError("unknown profile '" + std::string(name) + "'");
}

}  // namespace smalldet
