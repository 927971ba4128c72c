#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smalldet {

enum class LayerKind { convolutional, shortcut, upsample, route, detection };
enum class Activation { leaky, linear };
enum class ClassLoss { squared_error, cross_entropy };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation act);

/// One section of the layer schedule. Only the fields relevant to `kind`
/// are meaningful; the rest keep their defaults so that equality is exact.
struct LayerSpec {
    LayerKind kind = LayerKind::convolutional;
    int filters = 0;
    int size = 1;
    int stride = 1;
    int pad = 0;  ///< 1 means "same" padding (size / 2)
    Activation activation = Activation::linear;
    int from = 0;             ///< shortcut source
    std::vector<int> layers;  ///< route sources
    std::vector<int> mask;    ///< detection anchor indices

    bool operator==(const LayerSpec&) const = default;
};

/// Anchor prior extent in network-input pixels.
struct Anchor {
    float w = 0.0f;
    float h = 0.0f;

    bool operator==(const Anchor&) const = default;
};

struct LossWeights {
    float lambda_coord = 5.0f;
    float lambda_noobj = 0.5f;
    ClassLoss class_loss = ClassLoss::squared_error;

    bool operator==(const LossWeights&) const = default;
};

struct LayerCensus {
    int convolutional = 0;
    int shortcut = 0;
    int upsample = 0;
    int route = 0;
    int detection = 0;

    bool operator==(const LayerCensus&) const = default;
};

struct ModelConfig {
    int input_size = 416;
    int num_classes = 0;
    std::vector<int> strides{32, 16, 8, 4, 2};
    int anchors_per_scale = 5;
    std::vector<Anchor> anchors;
    /// Anchor indices per detection head, in head order. Mirrors the `mask`
    /// of each detection layer.
    std::vector<std::vector<int>> masks;
    float ignore_threshold = 0.7f;
    float truth_threshold = 1.0f;
    float jitter = 0.3f;
    int random = 1;
    std::vector<int> filters{32, 64, 128, 256};
    int pad = 1;
    LossWeights loss;
    std::uint64_t seed = 1;
    /// Declared layer census. When present, network construction asserts it.
    std::optional<LayerCensus> census;
    std::vector<LayerSpec> layers;

    int total_anchors() const { return static_cast<int>(anchors.size()); }
    int head_channels() const { return anchors_per_scale * (5 + num_classes); }

    bool operator==(const ModelConfig&) const = default;
};

/// Layout of one detection head: grid geometry plus the anchors it owns.
struct ScaleSpec {
    int stride = 0;
    int grid = 0;
    std::vector<int> mask;
    std::vector<Anchor> anchors;
};

std::vector<ScaleSpec> head_layout(const ModelConfig& cfg);

/// Counts layers by kind.
LayerCensus census_of(const ModelConfig& cfg);

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& message, int line = 0);
    int line() const { return line_; }

private:
    int line_;
};

/// Parses the sectioned `[section]` / `key=value` model format. Unknown
/// keys and sections are rejected. Non-fatal findings (such as a `num` key
/// that disagrees with the masks) are appended to `warnings` when given.
ModelConfig parse_config(std::string_view text, std::vector<std::string>* warnings = nullptr);

/// Canonical text for `cfg`; parse_config(emit_config(c)) == c.
std::string emit_config(const ModelConfig& cfg);

/// Checks the cross-field invariants. Throws ConfigError.
void validate(const ModelConfig& cfg);

/// Anchor ladder used when a config does not list anchors: sizes grow
/// geometrically from 2% to 50% of the input and are sorted by area.
std::vector<Anchor> default_anchors(int input_size, int count);

/// Shipped profiles.
std::string_view paper_profile_text();
std::string_view tiny_profile_text();
ModelConfig profile_config(std::string_view name);

}  // namespace smalldet
