#include "smalldet/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

namespace smalldet {

namespace {

LossBreakdown scaled(LossBreakdown b, double k)
{
    b.loc *= k;
    b.conf_obj *= k;
    b.conf_noobj *= k;
    b.cls *= k;
    b.total *= k;
    return b;
}

void accumulate(LossBreakdown& into, const LossBreakdown& b)
{
    into.loc += b.loc;
    into.conf_obj += b.conf_obj;
    into.conf_noobj += b.conf_noobj;
    into.cls += b.cls;
    into.total += b.total;
}

}  // namespace

void validate(const TrainConfig& t)
{
    if (t.batch_size < 1) {
        throw TrainError("batch_size must be >= 1");
    }
    if (t.iterations < 1) {
        throw TrainError("iterations must be >= 1");
    }
    if (!(t.learning_rate >= 0.0f) || !(t.momentum >= 0.0f && t.momentum < 1.0f) || !(t.weight_decay >= 0.0f)) {
        throw TrainError("learning_rate and weight_decay must be >= 0 and momentum in [0, 1)");
    }
    if (!(t.grad_clip >= 0.0f)) {
        throw TrainError("grad_clip must be >= 0");
    }
    if (t.warmup < 0 || t.checkpoint_every < 0) {
        throw TrainError("warmup and checkpoint_every must be >= 0");
    }
}

float lr_schedule(int iter, const TrainConfig& t)
{
    if (iter < 0) {
        throw TrainError("lr_schedule: iteration must be >= 0");
    }
    if (iter >= t.warmup) {
        return t.learning_rate;
    }
    return t.learning_rate * static_cast<float>(iter) / static_cast<float>(t.warmup);
}

std::int64_t iterations_for(std::int64_t examples, int batch_size, int epochs)
{
    if (examples < 0 || batch_size < 1 || epochs < 0) {
        throw TrainError("iterations_for: need examples >= 0, batch_size >= 1, epochs >= 0");
    }
    return (examples + batch_size - 1) / batch_size * epochs;
}

Tensor stack_images(const std::vector<const Tensor*>& images)
{
    if (images.empty()) {
        throw TrainError("stack_images: empty batch");
    }
    const auto& s = images.front()->shape();
    Tensor out({static_cast<int>(images.size()), s.at(0), s.at(1), s.at(2)});
    std::size_t off = 0;
    for (const Tensor* t : images) {
        if (t->shape() != s) {
            throw TrainError("stack_images: mixed image shapes " + shape_string(s) + " and " +
                             shape_string(t->shape()));
        }
        std::copy(t->data().begin(), t->data().end(), out.raw() + off);
        off += t->size();
    }
    return out;
}

TrainResult train(Network& net, const std::vector<Sample>& dataset, const TrainConfig& tcfg,
                  const TrainObserver& observer)
{
    validate(tcfg);
    if (dataset.empty()) {
        throw TrainError("train: dataset is empty");
    }
    const ModelConfig& cfg = net.config();
    const auto heads = net.heads();
    TrainResult result;
    if (cfg.random != 0) {
        result.warnings.push_back("random=" + std::to_string(cfg.random) +
                                  " requests multi-scale input; training uses the fixed input size");
    }
    if (!tcfg.checkpoint_dir.empty()) {
        std::filesystem::create_directories(tcfg.checkpoint_dir);
    }

    auto& params = net.params();
    std::vector<LayerParams> velocity(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i].weight = Tensor(params[i].weight.shape());
        velocity[i].bias = Tensor(params[i].bias.shape());
    }
    Rng rng(tcfg.seed);
    const std::size_t N = dataset.size();
    const int B = tcfg.batch_size;

    for (int it = 0; it < tcfg.iterations; ++it) {
        std::vector<Sample> jittered;
        std::vector<const Sample*> batch;
        for (int j = 0; j < B; ++j) {
            const Sample& s = dataset[(static_cast<std::size_t>(it) * B + j) % N];
            if (tcfg.jitter && cfg.jitter > 0.0f) {
                jittered.reserve(B);
                jittered.push_back(jitter(s, cfg.jitter, rng));
                batch.push_back(&jittered.back());
            } else {
                batch.push_back(&s);
            }
        }
        std::vector<const Tensor*> images;
        std::vector<TargetTensor> targets;
        for (const Sample* s : batch) {
            images.push_back(&s->image);
            targets.push_back(assign_targets(s->boxes, cfg));
        }
        const Tensor input = stack_images(images);

        Tape<float> tape;
        std::vector<ParamVars> vars;
        const auto outs = net.forward(tape, input, vars);
        std::vector<Tensor> raw;
        raw.reserve(outs.size());
        for (Var v : outs) {
            raw.push_back(tape.value(v));
        }
        std::vector<Tensor> grads;
        const LossBreakdown loss = detection_loss<float>(raw, targets, heads, cfg.loss, &grads);
        if (!std::isfinite(loss.total)) {
            throw TrainError("training diverged at iteration " + std::to_string(it) +
                             ": total loss is not finite");
        }
        const LossBreakdown mean = scaled(loss, 1.0 / B);
        result.history.push_back(mean);
        if (observer) {
            observer(it, mean);
        }

        tape.backward(outs, grads);
        const float lr = lr_schedule(it, tcfg);
        float inv_b = 1.0f / static_cast<float>(B);
        if (tcfg.grad_clip > 0.0f) {
            double sq = 0.0;
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (!vars[i].present) {
                    continue;
                }
                for (Var v : {vars[i].weight, vars[i].bias}) {
                    for (float g : tape.grad(v).data()) {
                        sq += static_cast<double>(g) * g;
                    }
                }
            }
            const double norm = std::sqrt(sq) * inv_b;
            if (norm > tcfg.grad_clip) {
                inv_b = static_cast<float>(inv_b * tcfg.grad_clip / norm);
            }
        }
        auto step = [&](Tensor& w, Tensor& v, const Tensor& g) {
            for (std::size_t k = 0; k < w.size(); ++k) {
                v[k] = tcfg.momentum * v[k] + g[k] * inv_b + tcfg.weight_decay * w[k];
                w[k] -= lr * v[k];
            }
        };
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!vars[i].present) {
                continue;
            }
            step(params[i].weight, velocity[i].weight, tape.grad(vars[i].weight));
            step(params[i].bias, velocity[i].bias, tape.grad(vars[i].bias));
        }

        const bool last = it + 1 == tcfg.iterations;
        if (!tcfg.checkpoint_dir.empty() &&
            ((tcfg.checkpoint_every > 0 && (it + 1) % tcfg.checkpoint_every == 0) || last)) {
            char name[48];
            std::snprintf(name, sizeof name, "weights_%06d.tsw", it + 1);
            const auto path = (std::filesystem::path(tcfg.checkpoint_dir) / name).string();
            net.save_weights_file(path);
            result.checkpoints.push_back(path);
        }
    }
    return result;
}

LossBreakdown dataset_loss(const Network& net, const std::vector<Sample>& samples, int batch_size)
{
    LossBreakdown sum;
    if (samples.empty()) {
        return sum;
    }
    const auto heads = net.heads();
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + batch_size);
        std::vector<const Tensor*> images;
        std::vector<TargetTensor> targets;
        for (std::size_t i = start; i < end; ++i) {
            images.push_back(&samples[i].image);
            targets.push_back(assign_targets(samples[i].boxes, net.config()));
        }
        const auto raw = net.forward(stack_images(images));
        accumulate(sum, detection_loss<float>(raw, targets, heads, net.config().loss));
    }
    return scaled(sum, 1.0 / static_cast<double>(samples.size()));
}

std::string history_csv(const std::vector<LossBreakdown>& history)
{
    std::string out = "iteration,loc,conf_obj,conf_noobj,cls,total\n";
    char buf[256];
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, h.loc, h.conf_obj, h.conf_noobj,
                      h.cls, h.total);
        out += buf;
    }
    return out;
}

}  // namespace smalldet
