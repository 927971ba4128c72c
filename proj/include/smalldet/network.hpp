#pragma once

#include "smalldet/config.hpp"
#include "smalldet/tensor.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace smalldet {

/// One raw head output per detection scale, each [N, A*(5+K), S, S].
/// Channel layout per anchor: t_x, t_y, t_w, t_h, objectness, K class logits.
using RawPredictions = std::vector<Tensor>;

class NetworkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LayerShape {
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const LayerShape&) const = default;
};

/// Convolution parameters; empty tensors for parameter-free layers.
struct LayerParams {
    Tensor weight;  ///< [F, C, k, k]
    Tensor bias;    ///< [F]

    std::size_t count() const { return weight.size() + bias.size(); }
};

/// Tape handles for one layer's parameters, filled by the training forward.
struct ParamVars {
    Var weight;
    Var bias;
    bool present = false;
};

/// The detector graph built from a ModelConfig.
class Network {
public:
    /// Builds the graph, resolves every route/shortcut reference, checks the
    /// declared census and initializes weights (He-uniform, seeded by
    /// cfg.seed). Throws NetworkError.
    explicit Network(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    LayerCensus census() const { return census_of(cfg_); }
    /// Output shape of every layer for a single input image.
    const std::vector<LayerShape>& shapes() const { return shapes_; }
    /// Indices of the detection layers, in head order.
    const std::vector<int>& head_layers() const { return heads_; }
    std::vector<ScaleSpec> heads() const { return head_layout(cfg_); }

    std::vector<LayerParams>& params() { return params_; }
    const std::vector<LayerParams>& params() const { return params_; }
    std::size_t parameter_count() const;

    /// Inference. images must be [N, 3, input_size, input_size].
    RawPredictions forward(const Tensor& images) const;

    /// Recorded forward for training. Parameter leaves are created with
    /// requires_grad and reported through `param_vars` (one per layer).
    std::vector<Var> forward(Tape<float>& tape, const Tensor& images,
                             std::vector<ParamVars>& param_vars) const;

    /// Serialized weights: "TSW1", u32 layer count, then per layer a u32
    /// parameter count followed by little-endian f32 values.
    std::vector<std::uint8_t> save_weights() const;
    void load_weights(std::span<const std::uint8_t> bytes);

    void save_weights_file(const std::string& path) const;
    void load_weights_file(const std::string& path);

private:
    void check_input(const Tensor& images) const;
    template <typename Exec>
    auto run(Exec& exec, typename Exec::Value input) const;

    ModelConfig cfg_;
    std::vector<LayerShape> shapes_;
    std::vector<std::vector<int>> sources_;  ///< resolved absolute inputs per layer
    std::vector<int> heads_;
    std::vector<int> last_use_;
    std::vector<LayerParams> params_;
};

/// Total decoded candidates for a config: sum over heads of A * S^2.
std::size_t candidate_count(const ModelConfig& cfg);

}  // namespace smalldet
