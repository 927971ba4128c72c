#include "smalldet/nms.hpp"

#include <algorithm>
#include <numeric>

namespace smalldet {

bool detection_before(const Detection& a, std::size_t ia, const Detection& b, std::size_t ib)
{
    if (a.score != b.score) {
        return a.score > b.score;
    }
    const float aa = a.box.area(), ba = b.box.area();
    if (aa != ba) {
        return aa < ba;
    }
    return ia < ib;
}

std::vector<Detection> nms(std::span<const Detection> detections, float iou_threshold)
{
    const std::size_t n = detections.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto before = [&](std::size_t a, std::size_t b) {
        return detection_before(detections[a], a, detections[b], b);
    };
    std::sort(order.begin(), order.end(), before);

    // Bucket by class, preserving rank order inside each bucket.
    std::vector<std::pair<int, std::size_t>> keyed;
    keyed.reserve(n);
    for (std::size_t rank = 0; rank < n; ++rank) {
        keyed.emplace_back(detections[order[rank]].class_id, rank);
    }
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<char> kept_rank(n, 0);
    std::vector<const Detection*> bucket;
    std::vector<std::size_t> bucket_rank;
    std::vector<char> suppressed;
    for (std::size_t start = 0; start < keyed.size();) {
        std::size_t end = start;
        while (end < keyed.size() && keyed[end].first == keyed[start].first) {
            ++end;
        }
        bucket.clear();
        bucket_rank.clear();
        for (std::size_t i = start; i < end; ++i) {
            bucket_rank.push_back(keyed[i].second);
            bucket.push_back(&detections[order[keyed[i].second]]);
        }
        suppressed.assign(bucket.size(), 0);
        for (std::size_t i = 0; i < bucket.size(); ++i) {
            if (suppressed[i]) {
                continue;
            }
            kept_rank[bucket_rank[i]] = 1;
            const CornerBox& bi = bucket[i]->box;
            for (std::size_t j = i + 1; j < bucket.size(); ++j) {
                if (!suppressed[j] && iou(bi, bucket[j]->box) > iou_threshold) {
                    suppressed[j] = 1;
                }
            }
        }
        start = end;
    }

    std::vector<Detection> out;
    for (std::size_t rank = 0; rank < n; ++rank) {
        if (kept_rank[rank]) {
            out.push_back(detections[order[rank]]);
        }
    }
    return out;
}

Detection to_detection(const Candidate& c)
{
    return {c.class_id, c.score, to_corner(c.box, 1.0f, 1.0f, BoxUnits::pixels)};
}

std::vector<Detection> postprocess(const RawPredictions& raw, const ModelConfig& cfg,
                                   const PostprocessOptions& opt, int image)
{
    const auto heads = head_layout(cfg);
    if (raw.size() != heads.size()) {
        throw DecodeError("postprocess: expected " + std::to_string(heads.size()) + " heads");
    }
    std::vector<Detection> dets;
    std::vector<float> cls;
    for (std::size_t si = 0; si < heads.size(); ++si) {
        const Tensor& head = raw[si];
        const auto& spec = heads[si];
        const int A = static_cast<int>(spec.anchors.size());
        const int S = spec.grid;
        if (head.rank() != 4 || head.dim(2) != S || head.dim(3) != S || head.dim(1) % A != 0 ||
            head.dim(1) / A < 6 || image < 0 || image >= head.dim(0)) {
            throw DecodeError("postprocess: head " + std::to_string(si) + " has shape " +
                              shape_string(head.shape()));
        }
        const int per_anchor = head.dim(1) / A;
        const int K = per_anchor - 5;
        cls.resize(K);
        const std::size_t plane = static_cast<std::size_t>(S) * S;
        const float* base = head.raw() + static_cast<std::size_t>(image) * head.dim(1) * plane;
        const float stride = static_cast<float>(spec.stride);

        for (int a = 0; a < A; ++a) {
            const float* ch = base + static_cast<std::size_t>(a) * per_anchor * plane;
            const float* obj = ch + 4 * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                // score = obj * best_class <= obj, so obj alone can reject.
                const float so = sigmoid(obj[p]);
                if (so < opt.conf_threshold) {
                    continue;
                }
                int best = 0;
                for (int k = 0; k < K; ++k) {
                    cls[k] = sigmoid(ch[(5 + k) * plane + p]);
                    if (cls[k] > cls[best]) {
                        best = k;
                    }
                }
                const float score = so * cls[best];
                if (score < opt.conf_threshold) {
                    continue;
                }
                const int x = static_cast<int>(p % S);
                const int y = static_cast<int>(p / S);
                Box b;
                b.cx = (sigmoid(ch[p]) + static_cast<float>(x)) * stride;
                b.cy = (sigmoid(ch[plane + p]) + static_cast<float>(y)) * stride;
                b.w = spec.anchors[a].w * std::exp(ch[2 * plane + p]);
                b.h = spec.anchors[a].h * std::exp(ch[3 * plane + p]);
                dets.push_back({best, score, to_corner(b, 1.0f, 1.0f, BoxUnits::pixels)});
            }
        }
    }
    return nms(dets, opt.iou_threshold);
}

std::vector<Detection> postprocess_reference(const RawPredictions& raw, const ModelConfig& cfg,
                                             const PostprocessOptions& opt, int image)
{
    const auto kept = threshold(decode_all(raw, cfg, image), opt.conf_threshold);
    std::vector<Detection> dets;
    dets.reserve(kept.size());
    for (const auto& c : kept) {
        dets.push_back(to_detection(c));
    }
    return nms(dets, opt.iou_threshold);
}

}  // namespace smalldet
