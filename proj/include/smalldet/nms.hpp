#pragma once

#include "smalldet/config.hpp"
#include "smalldet/decode.hpp"
#include "smalldet/geometry.hpp"
#include "smalldet/network.hpp"

#include <span>
#include <vector>

namespace smalldet {

struct Detection {
    int class_id = 0;
    float score = 0.0f;
    CornerBox box;  ///< pixels

    bool operator==(const Detection&) const = default;
};

/// Ordering used everywhere detections are ranked: score descending, then
/// smaller area, then earlier input position.
bool detection_before(const Detection& a, std::size_t ia, const Detection& b, std::size_t ib);

/// Greedy per-class hard NMS. Within each class the best remaining box is
/// kept and every same-class box overlapping it with IoU > iou_threshold is
/// dropped. Output is ranked by detection_before.
std::vector<Detection> nms(std::span<const Detection> detections, float iou_threshold);

struct PostprocessOptions {
    float conf_threshold = 0.25f;
    float iou_threshold = 0.45f;
};

/// decode -> threshold -> NMS for one image of the batch. Slots are culled on
/// objectness before any class work, so the cost tracks the number of
/// surviving candidates rather than A*S^2*K.
std::vector<Detection> postprocess(const RawPredictions& raw, const ModelConfig& cfg,
                                   const PostprocessOptions& opt, int image = 0);

/// The same pipeline composed literally from decode_all, threshold and nms.
std::vector<Detection> postprocess_reference(const RawPredictions& raw, const ModelConfig& cfg,
                                             const PostprocessOptions& opt, int image = 0);

Detection to_detection(const Candidate& c);

}  // namespace smalldet
