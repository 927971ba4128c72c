#pragma once

#include "smalldet/assign.hpp"
#include "smalldet/config.hpp"
#include "smalldet/tensor.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace smalldet {

/// Components of the detection loss; total is their sum.
struct LossBreakdown {
    double loc = 0.0;
    double conf_obj = 0.0;
    double conf_noobj = 0.0;
    double cls = 0.0;
    double total = 0.0;
};

class LossError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Sum-squared detection loss over a batch.
///
///   loc        = l_coord * sum_obj [(sx - tx)^2 + (sy - ty)^2]
///              + l_coord * sum_obj [(sqrt(w) - sqrt(w*))^2 + (sqrt(h) - sqrt(h*))^2]
///   conf_obj   = sum_obj (so - 1)^2
///   conf_noobj = l_noobj * sum_noobj so^2
///   cls        = sum_obj sum_c (p_c - y_c)^2
///
/// s* are sigmoids of the raw outputs; w, h are decoded pixel extents
/// (anchor * exp(t)). Slots that are neither positive nor background (the
/// ignore band) contribute nothing. With class_loss == cross_entropy the
/// class term is binary cross-entropy on the logits instead.
///
/// `raw` holds one [N, A*(5+K), S, S] tensor per head and `targets` one entry
/// per image. When `grads` is given it receives d(total)/d(raw), shaped like
/// `raw`.
template <typename Real>
LossBreakdown detection_loss(std::span<const BasicTensor<Real>> raw,
                             std::span<const TargetTensor> targets,
                             std::span<const ScaleSpec> heads, const LossWeights& weights,
                             std::vector<BasicTensor<Real>>* grads = nullptr);

/// Gradient of the total loss with respect to every raw head output.
template <typename Real>
std::vector<BasicTensor<Real>> loss_gradients(std::span<const BasicTensor<Real>> raw,
                                              std::span<const TargetTensor> targets,
                                              std::span<const ScaleSpec> heads,
                                              const LossWeights& weights);

}  // namespace smalldet
