#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nervpp/compression.hpp"
#include "nervpp/model.hpp"
#include "nervpp/video.hpp"

namespace nervpp {

struct TrainConfig {
    std::int64_t epochs = 300;
    double lr0 = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    double loss_w_mae = 0.7;
    double loss_w_ssim = 0.3;
    std::int64_t finetune_epochs = 30;
    double finetune_lr_scale = 0.1;

    void validate() const;  // invalid_argument on violation
};

// 0.7·mean|x−x̂| + 0.3·(1 − SSIM(x,x̂)), built from differentiable ops.
// The SSIM branch reproduces metrics::ssim arithmetic step for step, so
// the recorded loss and the reported metric agree to the last bit.
Tensor loss(const Tensor& x, const Tensor& xhat, double w_mae = 0.7, double w_ssim = 0.3);

// lr0 · ½(1 + cos(π·step/total_steps)); no warmup.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0);

struct OptimizerState {
    std::vector<std::vector<double>> m, v;  // shaped like the parameters
    std::int64_t step = 0;
};

OptimizerState make_optimizer_state(const ParameterStore& params);

// Bias-corrected Adam over the accumulated gradients; reads each
// tensor's grad buffer and updates its data in place.
void adam_step(ParameterStore& params, OptimizerState& state, double lr,
               const TrainConfig& cfg);

struct EpochRecord {
    std::int64_t epoch = 0;  // 0-based
    double lr = 0.0;         // at the first step of the epoch
    double loss = 0.0;       // mean over the epoch's steps
    double psnr = 0.0;       // mean over the epoch's steps, pre-update
};

using TrainLog = std::vector<EpochRecord>;

struct TrainResult {
    ParameterStore params;
    TrainLog log;
};

// Overfit from a fresh init: epochs × T steps, batch = one frame, frames
// visited in a seeded shuffled order per epoch, cosine lr over the whole
// run. Deterministic given (seed, arch, cfg, video).
TrainResult train(const VideoFrames& video, const ArchConfig& arch, const TrainConfig& cfg);

// Same loop at constant lr = lr0·finetune_lr_scale for finetune_epochs,
// continuing from params; masked weights are re-zeroed after every step.
TrainLog finetune(const VideoFrames& video, const ArchConfig& arch, const TrainConfig& cfg,
                  ParameterStore& params, const PruneMask& mask);

}  // namespace nervpp
