#pragma once

#include "smalldet/config.hpp"
#include "smalldet/geometry.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace smalldet {

/// Ground-truth object: normalized center box plus class id.
struct GroundTruth {
    Box box;
    int class_id = 0;
};

/// Targets for one head of one image. Slot index = (a * S + y) * S + x.
struct ScaleTargets {
    int anchors = 0;
    int grid = 0;
    int classes = 0;
    std::vector<std::uint8_t> obj;    ///< responsible slots (the 1^obj indicator)
    std::vector<std::uint8_t> noobj;  ///< slots penalized as background
    std::vector<float> tx, ty;        ///< cell-relative center offsets in [0,1)
    std::vector<float> tw, th;        ///< log(gt / anchor) extents
    std::vector<float> cls;           ///< one-hot, slot * classes + c

    std::size_t slot(int a, int y, int x) const
    {
        return (static_cast<std::size_t>(a) * grid + y) * grid + x;
    }
    std::size_t slots() const { return obj.size(); }
};

/// Per-image training targets across all heads.
struct TargetTensor {
    std::vector<ScaleTargets> scales;

    std::size_t positives() const;
};

class AssignError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Builds the training targets of one image.
///
/// Each object picks the anchor with the highest wh-IoU over all anchors;
/// the mask owning that anchor decides the head, and the cell containing the
/// object center at that head is responsible. When two objects want the same
/// slot the larger one keeps it and the other falls back to its next-best
/// anchor. Slots at an object's center cell whose anchor overlaps it above
/// ignore_threshold are left out of the background term.
TargetTensor assign_targets(std::span<const GroundTruth> gt, const ModelConfig& cfg);

}  // namespace smalldet
