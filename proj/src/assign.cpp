#include "smalldet/assign.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace smalldet {

std::size_t TargetTensor::positives() const
{
    std::size_t n = 0;
    for (const auto& s : scales) {
        n += static_cast<std::size_t>(std::count(s.obj.begin(), s.obj.end(), 1));
    }
    return n;
}

namespace {

int cell_of(float c, int grid)
{
    // A center exactly on the far edge belongs to the last cell.
    return std::clamp(static_cast<int>(std::floor(c * static_cast<float>(grid))), 0, grid - 1);
}

struct AnchorLocation {
    int scale = -1;
    int slot_in_mask = -1;
};

}  // namespace

TargetTensor assign_targets(std::span<const GroundTruth> gt, const ModelConfig& cfg)
{
    const auto heads = head_layout(cfg);
    const int K = cfg.num_classes;
    const int A = cfg.anchors_per_scale;

    TargetTensor t;
    for (const auto& h : heads) {
        ScaleTargets s;
        s.anchors = A;
        s.grid = h.grid;
        s.classes = K;
        const std::size_t n = static_cast<std::size_t>(A) * h.grid * h.grid;
        s.obj.assign(n, 0);
        s.noobj.assign(n, 1);
        s.tx.assign(n, 0.0f);
        s.ty.assign(n, 0.0f);
        s.tw.assign(n, 0.0f);
        s.th.assign(n, 0.0f);
        s.cls.assign(n * K, 0.0f);
        t.scales.push_back(std::move(s));
    }

    std::vector<AnchorLocation> where(cfg.anchors.size());
    for (std::size_t si = 0; si < heads.size(); ++si) {
        for (std::size_t a = 0; a < heads[si].mask.size(); ++a) {
            where[heads[si].mask[a]] = {static_cast<int>(si), static_cast<int>(a)};
        }
    }

    for (const auto& g : gt) {
        const auto& b = g.box;
        if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !(b.w > 0.0f) || !(b.h > 0.0f) ||
            b.cx < 0.0f || b.cx > 1.0f || b.cy < 0.0f || b.cy > 1.0f) {
            throw AssignError("assign_targets: invalid ground-truth box");
        }
        if (g.class_id < 0 || g.class_id >= K) {
            throw AssignError("assign_targets: class id " + std::to_string(g.class_id) +
                              " out of range");
        }
    }

    // Larger objects claim slots first; equal areas keep input order.
    std::vector<std::size_t> order(gt.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return gt[a].box.w * gt[a].box.h > gt[b].box.w * gt[b].box.h;
    });

    const float size = static_cast<float>(cfg.input_size);
    auto write_positive = [&](const GroundTruth& g, int anchor_index, int x, int y) {
        const auto loc = where[anchor_index];
        auto& s = t.scales[loc.scale];
        const std::size_t slot = s.slot(loc.slot_in_mask, y, x);
        const Anchor& anc = cfg.anchors[anchor_index];
        s.obj[slot] = 1;
        s.noobj[slot] = 0;
        s.tx[slot] = g.box.cx * static_cast<float>(s.grid) - static_cast<float>(x);
        s.ty[slot] = g.box.cy * static_cast<float>(s.grid) - static_cast<float>(y);
        s.tw[slot] = std::log(g.box.w * size / anc.w);
        s.th[slot] = std::log(g.box.h * size / anc.h);
        std::fill_n(s.cls.begin() + static_cast<std::ptrdiff_t>(slot * K), K, 0.0f);
        s.cls[slot * K + g.class_id] = 1.0f;
    };

    const int total = cfg.total_anchors();
    std::vector<float> ious(total);
    std::vector<int> ranked(total);
    for (std::size_t gi : order) {
        const auto& g = gt[gi];
        const float w = g.box.w * size, h = g.box.h * size;
        for (int a = 0; a < total; ++a) {
            ious[a] = wh_iou(w, h, cfg.anchors[a].w, cfg.anchors[a].h);
        }
        std::iota(ranked.begin(), ranked.end(), 0);
        std::stable_sort(ranked.begin(), ranked.end(),
                         [&](int a, int b) { return ious[a] > ious[b]; });

        bool placed = false;
        for (int a : ranked) {
            const auto loc = where[a];
            if (loc.scale < 0) {
                continue;
            }
            auto& s = t.scales[loc.scale];
            const int x = cell_of(g.box.cx, s.grid);
            const int y = cell_of(g.box.cy, s.grid);
            if (s.obj[s.slot(loc.slot_in_mask, y, x)]) {
                continue;
            }
            write_positive(g, a, x, y);
            placed = true;
            break;
        }
        if (!placed) {
            throw AssignError("assign_targets: no free anchor slot for object " +
                              std::to_string(gi));
        }

        // Extra positives above truth_threshold (off at the default of 1).
        for (int a = 0; a < total; ++a) {
            if (ious[a] > cfg.truth_threshold && where[a].scale >= 0) {
                auto& s = t.scales[where[a].scale];
                const int x = cell_of(g.box.cx, s.grid);
                const int y = cell_of(g.box.cy, s.grid);
                if (!s.obj[s.slot(where[a].slot_in_mask, y, x)]) {
                    write_positive(g, a, x, y);
                }
            }
        }
    }

    // Ignore band.
    for (const auto& g : gt) {
        const float w = g.box.w * size, h = g.box.h * size;
        for (std::size_t si = 0; si < heads.size(); ++si) {
            auto& s = t.scales[si];
            const int x = cell_of(g.box.cx, s.grid);
            const int y = cell_of(g.box.cy, s.grid);
            for (int a = 0; a < A; ++a) {
                const Anchor& anc = heads[si].anchors[a];
                const std::size_t slot = s.slot(a, y, x);
                if (!s.obj[slot] && wh_iou(w, h, anc.w, anc.h) > cfg.ignore_threshold) {
                    s.noobj[slot] = 0;
                }
            }
        }
    }
    return t;
}

}  // namespace smalldet
