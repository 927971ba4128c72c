#pragma once

#include "smalldet/geometry.hpp"
#include "smalldet/nms.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace smalldet {

/// A ground-truth box in the same units as the detections it is scored against.
struct LabeledBox {
    int class_id = 0;
    CornerBox box;
};

struct PrPoint {
    double precision = 0.0;
    double recall = 0.0;
};

struct ClassResult {
    int num_gt = 0;
    int num_det = 0;
    int true_positives = 0;
    double ap = 0.0;
    std::vector<PrPoint> curve;  ///< one point per ranked detection
};

struct EvalReport {
    std::map<int, ClassResult> classes;  ///< every class in [0, num_classes)
    double map = 0.0;                    ///< mean AP over classes with at least one gt
    double match_iou = 0.5;
};

class EvalError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Outcome of matching one detection: is_tp and the gt index it claimed.
struct MatchFlag {
    std::size_t image = 0;
    std::size_t det = 0;  ///< index into that image's detection list
    float score = 0.0f;
    bool tp = false;
    int gt = -1;
};

/// Ranks the class's detections across all images (score desc, then smaller
/// area, then image, then position) and matches each greedily to the unmatched
/// same-image gt with the highest IoU >= match_iou.
std::vector<MatchFlag> match_class(const std::vector<std::vector<Detection>>& dets_by_image,
                                   const std::vector<std::vector<LabeledBox>>& gts_by_image,
                                   int class_id, double match_iou);

/// All-point interpolated AP: area under the monotone precision envelope.
double average_precision(const std::vector<PrPoint>& curve);

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_by_image,
                    const std::vector<std::vector<LabeledBox>>& gts_by_image, int num_classes,
                    double match_iou = 0.5);

std::string report_json(const EvalReport& report, const std::vector<std::string>& class_names = {});
/// Aligned two-column table: class name, AP.
std::string report_table(const EvalReport& report, const std::vector<std::string>& class_names = {},
                         const std::string& column = "AP");

struct LatencyStats {
    int repetitions = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double implied_fps = 0.0;  ///< 1000 / p50
};

/// Times `pipeline` `repetitions` times (>= 30) after one untimed warm-up call.
LatencyStats fps_bench(const std::function<void()>& pipeline, int repetitions);

/// Batch-1 raw predictions shaped for `cfg` that resemble a real frame:
/// background objectness logits around -8, class logits around -4, and
/// `objects` planted detections each with a few weaker overlapping echoes
/// in neighbouring slots.
RawPredictions bench_frame(const ModelConfig& cfg, int objects, std::uint64_t seed);

}  // namespace smalldet
