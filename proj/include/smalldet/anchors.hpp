#pragma once

#include "smalldet/config.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace smalldet {

/// Box extent (pixels) used as clustering input.
struct Extent {
    float w = 0.0f;
    float h = 0.0f;
};

/// Anchors sorted ascending by area, plus per-scale masks. Mask 0 belongs to
/// the first (coarsest) head and therefore holds the largest anchors.
struct AnchorSet {
    std::vector<Anchor> anchors;
    std::vector<std::vector<int>> masks;
};

class AnchorError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct KMeansResult {
    AnchorSet set;
    int iterations = 0;
    /// Sum over boxes of 1 - IoU(box, assigned centroid), one entry per
    /// completed iteration. Non-increasing.
    std::vector<double> objective_history;
};

/// Splits `count` area-sorted anchors into `scales` masks of
/// `per_scale`, largest group first.
std::vector<std::vector<int>> area_masks(int scales, int per_scale);

/// Lloyd's k-means in 1 - IoU space with median centroid updates and
/// k-means++ seeding. Each run stops when assignments stabilize or after
/// `max_iterations`; the best of `restarts` seeded runs is returned. `per_scale` controls how the k anchors are split into
/// masks (k must be a multiple of it).
KMeansResult kmeans_anchors(std::span<const Extent> boxes, int k, std::uint64_t seed,
                            int per_scale = 5, int max_iterations = 300,
                            int restarts = 30);

/// Returns `cfg` with its anchors and every detection mask replaced by
/// `set`. The set must have one mask per head and the same total size.
ModelConfig with_anchors(ModelConfig cfg, const AnchorSet& set);

/// Mean over boxes of the best wh-IoU against any anchor.
double mean_best_iou(std::span<const Extent> boxes, std::span<const Anchor> anchors);

/// Total 1 - best-IoU distance of boxes to their nearest anchor.
double clustering_objective(std::span<const Extent> boxes, std::span<const Anchor> anchors);

}  // namespace smalldet
