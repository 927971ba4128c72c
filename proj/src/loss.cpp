#include "smalldet/loss.hpp"

#include <cmath>

namespace smalldet {

namespace {

template <typename Real>
Real sigmoid(Real x)
{
    return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                        : std::exp(x) / (Real(1) + std::exp(x));
}

template <typename Real>
Real softplus(Real x)
{
    return std::max(x, Real(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

template <typename Real>
LossBreakdown detection_loss(std::span<const BasicTensor<Real>> raw,
                             std::span<const TargetTensor> targets,
                             std::span<const ScaleSpec> heads, const LossWeights& weights,
                             std::vector<BasicTensor<Real>>* grads)
{
    if (raw.size() != heads.size()) {
        throw LossError("detection_loss: expected " + std::to_string(heads.size()) +
                        " head outputs, got " + std::to_string(raw.size()));
    }
    if (grads) {
        grads->clear();
        for (const auto& r : raw) {
            grads->emplace_back(r.shape());
        }
    }

    const Real lc = static_cast<Real>(weights.lambda_coord);
    const Real ln = static_cast<Real>(weights.lambda_noobj);
    LossBreakdown out;

    for (std::size_t si = 0; si < heads.size(); ++si) {
        const auto& r = raw[si];
        const auto& head = heads[si];
        const int A = static_cast<int>(head.anchors.size());
        const int S = head.grid;
        if (r.rank() != 4 || r.dim(2) != S || r.dim(3) != S || r.dim(1) % A != 0) {
            throw LossError("detection_loss: head " + std::to_string(si) + " has shape " +
                            shape_string(r.shape()));
        }
        const int per_anchor = r.dim(1) / A;
        const int K = per_anchor - 5;
        const int N = r.dim(0);
        if (K < 1 || static_cast<std::size_t>(N) != targets.size()) {
            throw LossError("detection_loss: batch or class count mismatch at head " +
                            std::to_string(si));
        }
        const std::size_t plane = static_cast<std::size_t>(S) * S;

        for (int n = 0; n < N; ++n) {
            const auto& tgt = targets[n].scales.at(si);
            if (tgt.grid != S || tgt.anchors != A || tgt.classes != K) {
                throw LossError("detection_loss: target layout mismatch at head " +
                                std::to_string(si));
            }
            const Real* base = r.raw() + static_cast<std::size_t>(n) * r.dim(1) * plane;
            Real* gbase = grads ? (*grads)[si].raw() + static_cast<std::size_t>(n) * r.dim(1) * plane
                                : nullptr;

            for (int a = 0; a < A; ++a) {
                const std::size_t cb = static_cast<std::size_t>(a) * per_anchor;
                const Real* tx = base + (cb + 0) * plane;
                const Real* ty = base + (cb + 1) * plane;
                const Real* tw = base + (cb + 2) * plane;
                const Real* th = base + (cb + 3) * plane;
                const Real* to = base + (cb + 4) * plane;
                const Real pw = static_cast<Real>(head.anchors[a].w);
                const Real ph = static_cast<Real>(head.anchors[a].h);

                for (std::size_t p = 0; p < plane; ++p) {
                    const std::size_t slot = static_cast<std::size_t>(a) * plane + p;
                    const bool pos = tgt.obj[slot] != 0;
                    const bool neg = tgt.noobj[slot] != 0;
                    if (!pos && !neg) {
                        continue;
                    }
                    const Real so = sigmoid(to[p]);
                    if (neg) {
                        out.conf_noobj += static_cast<double>(ln * so * so);
                        if (gbase) {
                            gbase[(cb + 4) * plane + p] += Real(2) * ln * so * so * (Real(1) - so);
                        }
                        continue;
                    }

                    const Real sx = sigmoid(tx[p]);
                    const Real sy = sigmoid(ty[p]);
                    const Real dx = sx - static_cast<Real>(tgt.tx[slot]);
                    const Real dy = sy - static_cast<Real>(tgt.ty[slot]);
                    // sqrt(anchor * exp(t)) = sqrt(anchor) * exp(t / 2)
                    const Real rw = std::sqrt(pw) * std::exp(tw[p] / Real(2));
                    const Real rh = std::sqrt(ph) * std::exp(th[p] / Real(2));
                    const Real rw_t = std::sqrt(pw) * std::exp(static_cast<Real>(tgt.tw[slot]) / Real(2));
                    const Real rh_t = std::sqrt(ph) * std::exp(static_cast<Real>(tgt.th[slot]) / Real(2));
                    if (!(rw >= Real(0)) || !(rh >= Real(0))) {
                        throw LossError("detection_loss: decoded extent is negative");
                    }
                    const Real ew = rw - rw_t;
                    const Real eh = rh - rh_t;
                    out.loc += static_cast<double>(lc * (dx * dx + dy * dy) + lc * (ew * ew + eh * eh));
                    const Real eo = so - Real(1);
                    out.conf_obj += static_cast<double>(eo * eo);

                    if (gbase) {
                        gbase[(cb + 0) * plane + p] += Real(2) * lc * dx * sx * (Real(1) - sx);
                        gbase[(cb + 1) * plane + p] += Real(2) * lc * dy * sy * (Real(1) - sy);
                        gbase[(cb + 2) * plane + p] += lc * ew * rw;
                        gbase[(cb + 3) * plane + p] += lc * eh * rh;
                        gbase[(cb + 4) * plane + p] += Real(2) * eo * so * (Real(1) - so);
                    }

                    for (int c = 0; c < K; ++c) {
                        const Real logit = base[(cb + 5 + c) * plane + p];
                        const Real y = static_cast<Real>(tgt.cls[slot * K + c]);
                        const Real pc = sigmoid(logit);
                        if (weights.class_loss == ClassLoss::squared_error) {
                            const Real e = pc - y;
                            out.cls += static_cast<double>(e * e);
                            if (gbase) {
                                gbase[(cb + 5 + c) * plane + p] += Real(2) * e * pc * (Real(1) - pc);
                            }
                        } else {
                            out.cls += static_cast<double>(softplus(logit) - y * logit);
                            if (gbase) {
                                gbase[(cb + 5 + c) * plane + p] += pc - y;
                            }
                        }
                    }
                }
            }
        }
    }
    out.total = out.loc + out.conf_obj + out.conf_noobj + out.cls;
    return out;
}

template <typename Real>
std::vector<BasicTensor<Real>> loss_gradients(std::span<const BasicTensor<Real>> raw,
                                              std::span<const TargetTensor> targets,
                                              std::span<const ScaleSpec> heads,
                                              const LossWeights& weights)
{
    std::vector<BasicTensor<Real>> grads;
    detection_loss(raw, targets, heads, weights, &grads);
    return grads;
}

template LossBreakdown detection_loss(std::span<const BasicTensor<float>>,
                                      std::span<const TargetTensor>, std::span<const ScaleSpec>,
                                      const LossWeights&, std::vector<BasicTensor<float>>*);
template LossBreakdown detection_loss(std::span<const BasicTensor<double>>,
                                      std::span<const TargetTensor>, std::span<const ScaleSpec>,
                                      const LossWeights&, std::vector<BasicTensor<double>>*);
template std::vector<BasicTensor<float>> loss_gradients(std::span<const BasicTensor<float>>,
                                                        std::span<const TargetTensor>,
                                                        std::span<const ScaleSpec>,
                                                        const LossWeights&);
template std::vector<BasicTensor<double>> loss_gradients(std::span<const BasicTensor<double>>,
                                                         std::span<const TargetTensor>,
                                                         std::span<const ScaleSpec>,
                                                         const LossWeights&);

}  // namespace smalldet
