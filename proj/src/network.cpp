#include "smalldet/network.hpp"

#include "smalldet/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace smalldet {

namespace {

constexpr double kHeadInitScale = 0.01;


constexpr float kLeakySlope = 0.1f;
constexpr char kMagic[4] = {'T', 'S', 'W', '1'};

std::string layer_name(int index, LayerKind kind)
{
    return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

int resolve(int index, int ref, LayerKind kind)
{
    const int target = ref < 0 ? index + ref : ref;
    if (target < 0 || target >= index) {
        throw NetworkError(layer_name(index, kind) + ": reference " + std::to_string(ref) +
                           " does not resolve to an earlier layer");
    }
    return target;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void put_f32(std::vector<std::uint8_t>& out, float f)
{
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
}

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool u32(std::uint32_t& v)
    {
        if (pos_ + 4 > bytes_.size()) {
            return false;
        }
        v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += 4;
        return true;
    }

    bool f32(float& f)
    {
        std::uint32_t bits;
        if (!u32(bits)) {
            return false;
        }
        std::memcpy(&f, &bits, sizeof f);
        return true;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

/// Plain tensors with early release of intermediates nobody reads again.
struct InferenceExec {
    using Value = std::shared_ptr<const Tensor>;

    const std::vector<LayerParams>& params;

    Value conv(const Value& x, int layer, const LayerSpec& spec)
    {
        const auto& p = params[layer];
        const int pad = spec.pad ? spec.size / 2 : 0;
        auto y = ops::conv2d(*x, p.weight, &p.bias, spec.stride, pad);
        if (spec.activation == Activation::leaky) {
            y = ops::leaky_relu(y, kLeakySlope);
        }
        return std::make_shared<const Tensor>(std::move(y));
    }
    Value upsample(const Value& x) { return std::make_shared<const Tensor>(ops::upsample2x(*x)); }
    Value add(const Value& a, const Value& b)
    {
        return std::make_shared<const Tensor>(ops::add(*a, *b));
    }
    Value concat(const std::vector<Value>& xs)
    {
        if (xs.size() == 1) {
            return xs.front();
        }
        std::vector<const Tensor*> ptrs;
        for (const auto& v : xs) {
            ptrs.push_back(v.get());
        }
        return std::make_shared<const Tensor>(ops::concat_channels<float>(ptrs));
    }
    void release(Value& v) { v.reset(); }
};

struct TapeExec {
    using Value = Var;

    Tape<float>& tape;
    const std::vector<LayerParams>& params;
    std::vector<ParamVars>& vars;

    Value conv(const Value& x, int layer, const LayerSpec& spec)
    {
        auto& pv = vars[layer];
        if (!pv.present) {
            Tensor w = params[layer].weight;
            Tensor b = params[layer].bias;
            w.set_requires_grad(true);
            b.set_requires_grad(true);
            pv.weight = tape.leaf(std::move(w));
            pv.bias = tape.leaf(std::move(b));
            pv.present = true;
        }
        const int pad = spec.pad ? spec.size / 2 : 0;
        Var y = tape.conv2d(x, pv.weight, pv.bias, spec.stride, pad);
        if (spec.activation == Activation::leaky) {
            y = tape.leaky_relu(y, kLeakySlope);
        }
        return y;
    }
    Value upsample(const Value& x) { return tape.upsample2x(x); }
    Value add(const Value& a, const Value& b) { return tape.add(a, b); }
    Value concat(const std::vector<Value>& xs)
    {
        return xs.size() == 1 ? xs.front() : tape.concat(xs);
    }
    void release(Value&) {}
};

}  // namespace

Network::Network(ModelConfig cfg) : cfg_(std::move(cfg))
{
    validate(cfg_);
    const int n = static_cast<int>(cfg_.layers.size());
    if (n == 0) {
        throw NetworkError("config has no layers");
    }
    shapes_.resize(n);
    sources_.resize(n);
    params_.resize(n);
    last_use_.assign(n, -1);

    const LayerShape input{3, cfg_.input_size, cfg_.input_size};
    auto shape_of = [&](int i) { return i < 0 ? input : shapes_[i]; };

    for (int i = 0; i < n; ++i) {
        const LayerSpec& spec = cfg_.layers[i];
        const std::string name = layer_name(i, spec.kind);
        switch (spec.kind) {
        case LayerKind::convolutional: {
            sources_[i] = {i - 1};
            const LayerShape in = shape_of(i - 1);
            const int pad = spec.pad ? spec.size / 2 : 0;
            const int sh = in.h + 2 * pad - spec.size;
            const int sw = in.w + 2 * pad - spec.size;
            if (sh < 0 || sw < 0) {
                throw NetworkError(name + ": kernel larger than padded input " +
                                   std::to_string(in.h) + "x" + std::to_string(in.w));
            }
            shapes_[i] = {spec.filters, sh / spec.stride + 1, sw / spec.stride + 1};
            params_[i].weight = Tensor({spec.filters, in.c, spec.size, spec.size});
            params_[i].bias = Tensor({spec.filters});
            break;
        }
        case LayerKind::shortcut: {
            const int src = resolve(i, spec.from, spec.kind);
            if (i == 0) {
                throw NetworkError(name + ": needs a preceding layer");
            }
            sources_[i] = {i - 1, src};
            if (shapes_[i - 1] != shapes_[src]) {
                throw NetworkError(name + ": shape mismatch with layer " + std::to_string(src));
            }
            shapes_[i] = shapes_[i - 1];
            break;
        }
        case LayerKind::upsample: {
            sources_[i] = {i - 1};
            const LayerShape in = shape_of(i - 1);
            shapes_[i] = {in.c, in.h * 2, in.w * 2};
            break;
        }
        case LayerKind::route: {
            LayerShape out{0, 0, 0};
            for (int ref : spec.layers) {
                const int src = resolve(i, ref, spec.kind);
                const LayerShape s = shapes_[src];
                if (out.c == 0) {
                    out = s;
                } else {
                    if (s.h != out.h || s.w != out.w) {
                        throw NetworkError(name + ": spatial mismatch between routed layers");
                    }
                    out.c += s.c;
                }
                sources_[i].push_back(src);
            }
            shapes_[i] = out;
            break;
        }
        case LayerKind::detection: {
            if (i == 0 || cfg_.layers[i - 1].kind != LayerKind::convolutional) {
                throw NetworkError(name + ": must follow a convolutional layer");
            }
            const int head = static_cast<int>(heads_.size());
            const LayerShape in = shapes_[i - 1];
            if (in.c != cfg_.head_channels()) {
                throw NetworkError(name + ": expected " + std::to_string(cfg_.head_channels()) +
                                   " input channels (anchors_per_scale*(5+classes)), got " +
                                   std::to_string(in.c));
            }
            const int grid = cfg_.input_size / cfg_.strides.at(head);
            if (in.h != grid || in.w != grid) {
                throw NetworkError(name + ": grid " + std::to_string(in.h) + " does not match stride " +
                                   std::to_string(cfg_.strides[head]) + " (expected " +
                                   std::to_string(grid) + ")");
            }
            sources_[i] = {i - 1};
            shapes_[i] = in;
            heads_.push_back(i);
            break;
        }
        }
        for (int src : sources_[i]) {
            if (src >= 0) {
                last_use_[src] = std::max(last_use_[src], i);
            }
        }
    }

    if (cfg_.census) {
        const LayerCensus actual = census();
        const LayerCensus& want = *cfg_.census;
        if (actual.convolutional != want.convolutional || actual.shortcut != want.shortcut ||
            actual.upsample != want.upsample || actual.detection != want.detection) {
            throw NetworkError(
                "layer census mismatch: declared " + std::to_string(want.convolutional) + "/" +
                std::to_string(want.shortcut) + "/" + std::to_string(want.upsample) + "/" +
                std::to_string(want.detection) + ", built " +
                std::to_string(actual.convolutional) + "/" + std::to_string(actual.shortcut) +
                "/" + std::to_string(actual.upsample) + "/" + std::to_string(actual.detection));
        }
    }

    // He-uniform on fan-in; biases start at zero. Convolutions feeding a
    // detection head are scaled down so initial exp() box extents stay near
    // their anchors.
    std::vector<char> feeds_head(n, 0);
    for (int h : heads_) {
        for (int src : sources_[h]) {
            if (cfg_.layers[src].kind == LayerKind::convolutional) {
                feeds_head[src] = 1;
            }
        }
    }
    Rng rng(cfg_.seed);
    for (int i = 0; i < n; ++i) {
        auto& p = params_[i];
        if (p.weight.empty()) {
            continue;
        }
        const int fan_in = p.weight.dim(1) * p.weight.dim(2) * p.weight.dim(3);
        const double limit = std::sqrt(6.0 / fan_in) * (feeds_head[i] ? kHeadInitScale : 1.0);
        for (auto& w : p.weight.data()) {
            w = static_cast<float>(rng.uniform(-limit, limit));
        }
    }
}

std::size_t Network::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.count();
    }
    return n;
}

void Network::check_input(const Tensor& images) const
{
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.input_size || s[3] != cfg_.input_size) {
        throw NetworkError("forward: expected input [N,3," + std::to_string(cfg_.input_size) + "," +
                           std::to_string(cfg_.input_size) + "], got " + shape_string(s));
    }
}

template <typename Exec>
auto Network::run(Exec& exec, typename Exec::Value input) const
{
    using Value = typename Exec::Value;
    const int n = static_cast<int>(cfg_.layers.size());
    std::vector<Value> outputs(n);
    std::vector<bool> keep(n, false);
    for (int h : heads_) {
        keep[h] = true;
    }
    auto in = [&](int i) -> const Value& { return i < 0 ? input : outputs[i]; };

    for (int i = 0; i < n; ++i) {
        const LayerSpec& spec = cfg_.layers[i];
        const auto& src = sources_[i];
        switch (spec.kind) {
        case LayerKind::convolutional: outputs[i] = exec.conv(in(src[0]), i, spec); break;
        case LayerKind::shortcut: outputs[i] = exec.add(in(src[0]), in(src[1])); break;
        case LayerKind::upsample: outputs[i] = exec.upsample(in(src[0])); break;
        case LayerKind::route: {
            std::vector<Value> xs;
            for (int s : src) {
                xs.push_back(in(s));
            }
            outputs[i] = exec.concat(xs);
            break;
        }
        case LayerKind::detection: outputs[i] = in(src[0]); break;
        }
        for (int s : src) {
            if (s >= 0 && last_use_[s] == i && !keep[s]) {
                exec.release(outputs[s]);
            }
        }
    }

    std::vector<Value> heads;
    for (int h : heads_) {
        heads.push_back(outputs[h]);
    }
    return heads;
}

RawPredictions Network::forward(const Tensor& images) const
{
    check_input(images);
    InferenceExec exec{params_};
    auto input = std::make_shared<const Tensor>(images);
    auto heads = run(exec, input);
    RawPredictions out;
    for (auto& h : heads) {
        out.push_back(*h);
    }
    return out;
}

std::vector<Var> Network::forward(Tape<float>& tape, const Tensor& images,
                                  std::vector<ParamVars>& param_vars) const
{
    check_input(images);
    param_vars.assign(cfg_.layers.size(), ParamVars{});
    Tensor x = images;
    x.set_requires_grad(false);
    TapeExec exec{tape, params_, param_vars};
    return run(exec, tape.leaf(std::move(x)));
}

std::vector<std::uint8_t> Network::save_weights() const
{
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(params_.size()));
    for (const auto& p : params_) {
        put_u32(out, static_cast<std::uint32_t>(p.count()));
        for (float v : p.weight.data()) {
            put_f32(out, v);
        }
        for (float v : p.bias.data()) {
            put_f32(out, v);
        }
    }
    return out;
}

void Network::load_weights(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
        throw NetworkError("weights: magic mismatch (expected TSW1)");
    }
    ByteReader r(bytes.subspan(4));
    std::uint32_t layers = 0;
    if (!r.u32(layers)) {
        throw NetworkError("weights: truncated header");
    }
    if (layers != params_.size()) {
        throw NetworkError("weights: layer count mismatch (file " + std::to_string(layers) +
                           ", network " + std::to_string(params_.size()) + ")");
    }
    // Decode into a staging copy so a bad file leaves the network untouched.
    std::vector<LayerParams> staged = params_;
    for (std::size_t i = 0; i < staged.size(); ++i) {
        std::uint32_t count = 0;
        if (!r.u32(count)) {
            throw NetworkError("weights: truncated at layer " + std::to_string(i));
        }
        if (count != staged[i].count()) {
            throw NetworkError("weights: parameter count mismatch at layer " + std::to_string(i) +
                               " (file " + std::to_string(count) + ", network " +
                               std::to_string(staged[i].count()) + ")");
        }
        for (auto* t : {&staged[i].weight, &staged[i].bias}) {
            for (auto& v : t->data()) {
                if (!r.f32(v)) {
                    throw NetworkError("weights: truncated at layer " + std::to_string(i));
                }
            }
        }
    }
    if (!r.at_end()) {
        throw NetworkError("weights: trailing bytes after last layer");
    }
    params_ = std::move(staged);
}

void Network::save_weights_file(const std::string& path) const
{
    const auto bytes = save_weights();
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw NetworkError("cannot open '" + path + "' for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw NetworkError("failed writing '" + path + "'");
    }
}

void Network::load_weights_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw NetworkError("cannot open weights file '" + path + "'");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    load_weights(bytes);
}

std::size_t candidate_count(const ModelConfig& cfg)
{
    std::size_t total = 0;
    for (int s : cfg.strides) {
        const std::size_t grid = static_cast<std::size_t>(cfg.input_size / s);
        total += grid * grid * static_cast<std::size_t>(cfg.anchors_per_scale);
    }
    return total;
}

}  // namespace smalldet
