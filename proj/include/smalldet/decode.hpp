#pragma once

#include "smalldet/config.hpp"
#include "smalldet/geometry.hpp"
#include "smalldet/network.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace smalldet {

/// One decoded prediction slot.
struct Candidate {
    Box box;  ///< pixels, network-input coordinates
    float objectness = 0.0f;
    std::vector<float> class_scores;
    int scale_index = 0;
    int cell_x = 0;
    int cell_y = 0;
    int anchor_index = 0;  ///< position inside the head's mask
    /// Filled by threshold(): argmax class and objectness * best class score.
    int class_id = -1;
    float score = 0.0f;
};

class DecodeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline float sigmoid(float x)
{
    return 1.0f / (1.0f + std::exp(-x));
}

/// Decodes every slot of one head for image `image` of the batch:
///   b_x = (sigmoid(t_x) + c_x) * stride,  b_w = p_w * exp(t_w)
/// and likewise for y/h; objectness and class scores are sigmoids.
/// Yields exactly A * S^2 candidates in (anchor, row, column) order.
std::vector<Candidate> decode_scale(const Tensor& head, const ScaleSpec& spec, int input_size,
                                    int scale_index = 0, int image = 0);

/// All heads, concatenated in head order.
std::vector<Candidate> decode_all(const RawPredictions& raw, const ModelConfig& cfg,
                                  int image = 0);

/// Keeps candidates whose objectness * max class score reaches
/// `conf_threshold` (inclusive), recording class and score. Order is kept.
std::vector<Candidate> threshold(std::vector<Candidate> candidates, float conf_threshold);

}  // namespace smalldet
