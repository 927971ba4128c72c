#include "smalldet/decode.hpp"

#include <cmath>

namespace smalldet {

namespace {

void append_scale(std::vector<Candidate>& out, const Tensor& head, const ScaleSpec& spec,
                  int input_size, int scale_index, int image)
{
    const int A = static_cast<int>(spec.anchors.size());
    const int S = spec.grid;
    if (head.rank() != 4 || head.dim(2) != S || head.dim(3) != S || A == 0 ||
        head.dim(1) % A != 0 || head.dim(1) / A < 6 || S * spec.stride != input_size ||
        image < 0 || image >= head.dim(0)) {
        throw DecodeError("decode_scale: head shape " + shape_string(head.shape()) +
                          " does not match grid " + std::to_string(S) + ", stride " +
                          std::to_string(spec.stride) + ", " + std::to_string(A) + " anchors");
    }
    const int per_anchor = head.dim(1) / A;
    const int K = per_anchor - 5;
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    const float* base = head.raw() + static_cast<std::size_t>(image) * head.dim(1) * plane;
    const float stride = static_cast<float>(spec.stride);

    for (int a = 0; a < A; ++a) {
        const float* ch = base + static_cast<std::size_t>(a) * per_anchor * plane;
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * S + x;
                Candidate c;
                c.box.cx = (sigmoid(ch[p]) + static_cast<float>(x)) * stride;
                c.box.cy = (sigmoid(ch[plane + p]) + static_cast<float>(y)) * stride;
                c.box.w = spec.anchors[a].w * std::exp(ch[2 * plane + p]);
                c.box.h = spec.anchors[a].h * std::exp(ch[3 * plane + p]);
                c.objectness = sigmoid(ch[4 * plane + p]);
                c.class_scores.resize(K);
                for (int k = 0; k < K; ++k) {
                    c.class_scores[k] = sigmoid(ch[(5 + k) * plane + p]);
                }
                c.scale_index = scale_index;
                c.cell_x = x;
                c.cell_y = y;
                c.anchor_index = a;
                out.push_back(std::move(c));
            }
        }
    }
}

}  // namespace

std::vector<Candidate> decode_scale(const Tensor& head, const ScaleSpec& spec, int input_size,
                                    int scale_index, int image)
{
    std::vector<Candidate> out;
    out.reserve(static_cast<std::size_t>(spec.anchors.size()) * spec.grid * spec.grid);
    append_scale(out, head, spec, input_size, scale_index, image);
    return out;
}

std::vector<Candidate> decode_all(const RawPredictions& raw, const ModelConfig& cfg, int image)
{
    const auto heads = head_layout(cfg);
    if (raw.size() != heads.size()) {
        throw DecodeError("decode_all: expected " + std::to_string(heads.size()) + " heads");
    }
    std::vector<Candidate> out;
    out.reserve(candidate_count(cfg));
    for (std::size_t i = 0; i < heads.size(); ++i) {
        append_scale(out, raw[i], heads[i], cfg.input_size, static_cast<int>(i), image);
    }
    return out;
}

std::vector<Candidate> threshold(std::vector<Candidate> candidates, float conf_threshold)
{
    std::vector<Candidate> kept;
    for (auto& c : candidates) {
        int best = 0;
        for (std::size_t k = 1; k < c.class_scores.size(); ++k) {
            if (c.class_scores[k] > c.class_scores[best]) {
                best = static_cast<int>(k);
            }
        }
        const float cls = c.class_scores.empty() ? 0.0f : c.class_scores[best];
        c.class_id = best;
        c.score = c.objectness * cls;
        if (c.score >= conf_threshold) {
            kept.push_back(std::move(c));
        }
    }
    return kept;
}

}  // namespace smalldet
