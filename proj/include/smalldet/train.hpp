#pragma once

#include "smalldet/data.hpp"
#include "smalldet/loss.hpp"
#include "smalldet/network.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace smalldet {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int batch_size = 8;
    int iterations = 300;
    float learning_rate = 1e-3f;
    float momentum = 0.9f;
    float weight_decay = 0.0f;
    int warmup = 100;
    float grad_clip = 10.0f;  ///< max global L2 norm of the batch-mean gradient; 0 disables
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  ///< 0 disables periodic checkpoints
    std::string checkpoint_dir;
    bool jitter = false;  ///< crop/pad by the model's jitter amount
};

void validate(const TrainConfig& tcfg);

/// Linear warmup from 0 to learning_rate over `warmup` iterations, then flat.
float lr_schedule(int iter, const TrainConfig& tcfg);

/// Iterations covering `epochs` passes: ceil(examples / batch) * epochs.
std::int64_t iterations_for(std::int64_t examples, int batch_size, int epochs);

struct TrainResult {
    std::vector<LossBreakdown> history;  ///< batch mean, one per iteration
    std::vector<std::string> checkpoints;
    std::vector<std::string> warnings;
};

using TrainObserver = std::function<void(int iteration, const LossBreakdown&)>;

/// SGD with momentum over cyclically wrapped batches:
///   v = momentum * v + g + weight_decay * w;  w -= lr(iter) * v
/// with g the batch-mean gradient, rescaled to norm grad_clip when larger.
/// Throws TrainError naming the iteration when the loss stops being finite.
TrainResult train(Network& net, const std::vector<Sample>& dataset, const TrainConfig& tcfg,
                  const TrainObserver& observer = {});

/// Mean loss over `samples` for the current weights (batched, no update).
LossBreakdown dataset_loss(const Network& net, const std::vector<Sample>& samples, int batch_size = 8);

/// iteration,loc,conf_obj,conf_noobj,cls,total
std::string history_csv(const std::vector<LossBreakdown>& history);

/// Stacks [3,H,W] images into [N,3,H,W].
Tensor stack_images(const std::vector<const Tensor*>& images);

}  // namespace smalldet
