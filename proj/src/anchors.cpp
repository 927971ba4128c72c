#include "smalldet/anchors.hpp"

#include "smalldet/geometry.hpp"
#include "smalldet/random.hpp"

#include <algorithm>
#include <stdexcept>
#include <limits>
#include <numeric>

namespace smalldet {

namespace {

float distance(const Extent& b, const Anchor& c)
{
    return 1.0f - wh_iou(b.w, b.h, c.w, c.h);
}

int nearest(const Extent& b, std::span<const Anchor> centroids)
{
    int best = 0;
    float best_d = std::numeric_limits<float>::max();
    for (std::size_t j = 0; j < centroids.size(); ++j) {
        const float d = distance(b, centroids[j]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

float median(std::vector<float>& v)
{
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5f * (v[n / 2 - 1] + v[n / 2]);
}

double objective(std::span<const Extent> boxes, std::span<const Anchor> centroids,
                 const std::vector<int>& assign)
{
    double s = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        s += distance(boxes[i], centroids[assign[i]]);
    }
    return s;
}

std::vector<Anchor> seed_centroids(std::span<const Extent> boxes, int k, Rng& rng)
{
    std::vector<Anchor> c;
    const auto& first = boxes[rng.uniform_int(0, static_cast<int>(boxes.size()) - 1)];
    c.push_back({first.w, first.h});
    std::vector<double> weight(boxes.size());
    while (static_cast<int>(c.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const double d = distance(boxes[i], c[nearest(boxes[i], c)]);
            weight[i] = d * d;
            total += weight[i];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            // Every box already coincides with a centroid: take the first box
            // not yet used as one.
            for (std::size_t i = 0; i < boxes.size(); ++i) {
                const bool used = std::any_of(c.begin(), c.end(), [&](const Anchor& a) {
                    return a.w == boxes[i].w && a.h == boxes[i].h;
                });
                if (!used) {
                    pick = i;
                    break;
                }
            }
        } else {
            double r = rng.uniform() * total;
            for (pick = 0; pick + 1 < boxes.size(); ++pick) {
                r -= weight[pick];
                if (r < 0.0) {
                    break;
                }
            }
        }
        c.push_back({boxes[pick].w, boxes[pick].h});
    }
    return c;
}

// Sorted coordinate lists of one cluster; medians after adding or removing
// a single value are read off without rebuilding.
struct SortedPair {
    std::vector<float> w, h;

    static float median_of(std::size_t n, auto at)
    {
        return n % 2 ? at(n / 2) : 0.5f * (at(n / 2 - 1) + at(n / 2));
    }
    static float median_plus(const std::vector<float>& v, float x)
    {
        const std::size_t p = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
        return median_of(v.size() + 1, [&](std::size_t r) { return r < p ? v[r] : r == p ? x : v[r - 1]; });
    }
    static float median_minus(const std::vector<float>& v, float x)
    {
        const std::size_t q = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
        return median_of(v.size() - 1, [&](std::size_t r) { return r < q ? v[r] : v[r + 1]; });
    }
    static void insert(std::vector<float>& v, float x) { v.insert(std::lower_bound(v.begin(), v.end(), x), x); }
    static void erase(std::vector<float>& v, float x) { v.erase(std::lower_bound(v.begin(), v.end(), x)); }
};

// Moves single boxes between clusters while that lowers the total distance
// of every box to its own cluster median. Returns the medians.
std::vector<Anchor> refine(std::span<const Extent> boxes, std::vector<Anchor> centroids,
                           std::vector<int>& assign)
{
    const int k = static_cast<int>(centroids.size());
    std::vector<std::vector<int>> members(k);
    std::vector<SortedPair> sorted(k);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        members[assign[i]].push_back(static_cast<int>(i));
        sorted[assign[i]].w.push_back(boxes[i].w);
        sorted[assign[i]].h.push_back(boxes[i].h);
    }
    for (auto& sp : sorted) {
        std::sort(sp.w.begin(), sp.w.end());
        std::sort(sp.h.begin(), sp.h.end());
    }
    auto centre = [&](int j) {
        auto& sp = sorted[j];
        return Anchor{median(sp.w), median(sp.h)};
    };
    // Cost of cluster j with box `skip` left out and box `extra` added.
    auto cost = [&](int j, const Anchor& c, int skip, int extra) {
        double s = 0.0;
        for (int i : members[j]) {
            if (i != skip) {
                s += distance(boxes[i], c);
            }
        }
        if (extra >= 0) {
            s += distance(boxes[extra], c);
        }
        return s;
    };
    std::vector<double> costs(k);
    for (int j = 0; j < k; ++j) {
        if (!members[j].empty()) {
            centroids[j] = centre(j);
            costs[j] = cost(j, centroids[j], -1, -1);
        }
    }
    for (bool improved = true; improved;) {
        improved = false;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const int from = assign[i];
            if (members[from].size() < 2) {
                continue;
            }
            const int bi = static_cast<int>(i);
            const Extent& b = boxes[i];
            const Anchor from_c{SortedPair::median_minus(sorted[from].w, b.w),
                                SortedPair::median_minus(sorted[from].h, b.h)};
            const double from_cost = cost(from, from_c, bi, -1);
            int best_to = -1;
            double best_gain = 1e-9, best_to_cost = 0.0;
            // Only the clusters whose medians sit closest to the box are tried.
            std::vector<std::pair<float, int>> near;
            for (int to = 0; to < k; ++to) {
                if (to != from) {
                    near.emplace_back(members[to].empty() ? 0.0f : distance(b, centroids[to]), to);
                }
            }
            const std::size_t tries = std::min<std::size_t>(near.size(), 4);
            std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(tries), near.end());
            for (std::size_t t = 0; t < tries; ++t) {
                const int to = near[t].second;
                const Anchor to_c{SortedPair::median_plus(sorted[to].w, b.w),
                                  SortedPair::median_plus(sorted[to].h, b.h)};
                const double to_cost = cost(to, to_c, -1, bi);
                const double gain = costs[from] + costs[to] - from_cost - to_cost;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_to = to;
                    best_to_cost = to_cost;
                }
            }
            if (best_to >= 0) {
                auto& m = members[from];
                m.erase(std::find(m.begin(), m.end(), bi));
                members[best_to].push_back(bi);
                SortedPair::erase(sorted[from].w, b.w);
                SortedPair::erase(sorted[from].h, b.h);
                SortedPair::insert(sorted[best_to].w, b.w);
                SortedPair::insert(sorted[best_to].h, b.h);
                costs[from] = from_cost;
                costs[best_to] = best_to_cost;
                centroids[from] = centre(from);
                centroids[best_to] = centre(best_to);
                assign[i] = best_to;
                improved = true;
            }
        }
    }
    return centroids;
}

std::vector<Anchor> lloyd(std::span<const Extent> boxes, int k, Rng& rng, int max_iterations,
                          KMeansResult& out, std::vector<int>& assign)
{
    std::vector<Anchor> centroids = seed_centroids(boxes, k, rng);
    assign.assign(boxes.size(), -1);
    auto medians = [&](const std::vector<int>& assignment) {
        std::vector<Anchor> updated = centroids;
        std::vector<std::vector<float>> ws(k), hs(k);
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            ws[assignment[i]].push_back(boxes[i].w);
            hs[assignment[i]].push_back(boxes[i].h);
        }
        for (int j = 0; j < k; ++j) {
            if (!ws[j].empty()) {
                updated[j] = {median(ws[j]), median(hs[j])};
            }
        }
        return updated;
    };
    auto reassign = [&]() {
        bool changed = false;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const int j = nearest(boxes[i], centroids);
            changed = changed || j != assign[i];
            assign[i] = j;
        }
        return changed;
    };

    // The seeds are data points, not cluster medians, so the first median
    // update is unconditional and the objective is tracked from there on.
    reassign();
    centroids = medians(assign);
    for (int it = 0; it < max_iterations; ++it) {
        const bool changed = reassign();
        const double current = objective(boxes, centroids, assign);
        if (!out.objective_history.empty() && current > out.objective_history.back()) {
            throw std::logic_error("kmeans_anchors: objective increased");
        }
        out.objective_history.push_back(current);
        out.iterations = it + 1;
        if (!changed) {
            break;
        }
        // The median step minimizes an L1 surrogate, not 1 - IoU; an update
        // that would raise the objective ends the iteration instead.
        auto updated = medians(assign);
        if (clustering_objective(boxes, updated) > current) {
            break;
        }
        centroids = std::move(updated);
    }

    return centroids;
}

}  // namespace

std::vector<std::vector<int>> area_masks(int scales, int per_scale)
{
    std::vector<std::vector<int>> masks(scales);
    for (int s = 0; s < scales; ++s) {
        for (int a = 0; a < per_scale; ++a) {
            masks[s].push_back((scales - 1 - s) * per_scale + a);
        }
    }
    return masks;
}

KMeansResult kmeans_anchors(std::span<const Extent> boxes, int k, std::uint64_t seed,
                            int per_scale, int max_iterations, int restarts)
{
    if (boxes.empty()) {
        throw AnchorError("kmeans_anchors: no boxes");
    }
    if (k < 1) {
        throw AnchorError("kmeans_anchors: k must be positive");
    }
    if (static_cast<int>(boxes.size()) < k) {
        throw AnchorError("kmeans_anchors: " + std::to_string(boxes.size()) +
                          " boxes are fewer than k=" + std::to_string(k));
    }
    if (per_scale < 1 || k % per_scale != 0) {
        throw AnchorError("kmeans_anchors: k must be a multiple of anchors per scale");
    }
    for (const auto& b : boxes) {
        if (!(b.w > 0.0f) || !(b.h > 0.0f)) {
            throw AnchorError("kmeans_anchors: box dimensions must be positive");
        }
    }

    Rng rng(seed);
    KMeansResult result;
    std::vector<Anchor> centroids;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> assign;
    for (int restart = 0; restart < std::max(1, restarts); ++restart) {
        KMeansResult run;
        auto found = lloyd(boxes, k, rng, max_iterations, run, assign);
        // Lloyd stops at partitions where no single box can improve by
        // moving; the median step cannot see those moves, so try them.
        auto polished = refine(boxes, found, assign);
        double score = clustering_objective(boxes, found);
        const double after = clustering_objective(boxes, polished);
        if (after < score) {
            run.objective_history.push_back(after);
            found = std::move(polished);
            score = after;
        }
        if (score < best) {
            best = score;
            centroids = std::move(found);
            result = std::move(run);
        }
    }

    std::sort(centroids.begin(), centroids.end(), [](const Anchor& a, const Anchor& b) {
        const float aa = a.w * a.h, ba = b.w * b.h;
        return aa != ba ? aa < ba : a.w < b.w;
    });
    result.set.anchors = std::move(centroids);
    result.set.masks = area_masks(k / per_scale, per_scale);
    return result;
}

double mean_best_iou(std::span<const Extent> boxes, std::span<const Anchor> anchors)
{
    if (boxes.empty() || anchors.empty()) {
        throw AnchorError("mean_best_iou: empty input");
    }
    double total = 0.0;
    for (const auto& b : boxes) {
        float best = 0.0f;
        for (const auto& a : anchors) {
            best = std::max(best, wh_iou(b.w, b.h, a.w, a.h));
        }
        total += best;
    }
    return total / static_cast<double>(boxes.size());
}

double clustering_objective(std::span<const Extent> boxes, std::span<const Anchor> anchors)
{
    double s = 0.0;
    for (const auto& b : boxes) {
        s += distance(b, anchors[nearest(b, anchors)]);
    }
    return s;
}

ModelConfig with_anchors(ModelConfig cfg, const AnchorSet& set)
{
    if (set.anchors.size() != cfg.anchors.size() || set.masks.size() != cfg.masks.size()) {
        throw AnchorError("with_anchors: anchor set does not fit the model (" +
                          std::to_string(set.anchors.size()) + " anchors in " +
                          std::to_string(set.masks.size()) + " masks)");
    }
    cfg.anchors = set.anchors;
    cfg.masks = set.masks;
    std::size_t head = 0;
    for (auto& layer : cfg.layers) {
        if (layer.kind == LayerKind::detection) {
            layer.mask = set.masks.at(head++);
        }
    }
    validate(cfg);
    return cfg;
}

}  // namespace smalldet
