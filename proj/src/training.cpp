#include "nervpp/training.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nervpp/common.hpp"
#include "nervpp/metrics.hpp"
#include "nervpp/rng.hpp"

namespace nervpp {

namespace {

// Distinct shuffle streams for training and fine-tuning.
constexpr std::uint64_t kTrainShuffleSalt = 0x5DEECE66Dull;
constexpr std::uint64_t kFinetuneShuffleSalt = 0xBADC0FFEEull;

void fisher_yates(std::vector<std::int64_t>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_u64() % i]);
}

struct StepOutcome {
    double loss = 0.0;
    double psnr = 0.0;
};

StepOutcome run_step(const VideoFrames& video, std::int64_t frame_idx, const ArchConfig& arch,
                     const TrainConfig& cfg, ParameterStore& params, OptimizerState& state,
                     double lr) {
    params.zero_all_grads();
    Tensor x = video.frame(frame_idx);
    StepOutcome out;
    {
        GradTape tape;
        Tensor y = model_forward(frame_time(frame_idx, video.t), arch, params);
        Tensor l = loss(x, y, cfg.loss_w_mae, cfg.loss_w_ssim);
        out.loss = l.item();
        out.psnr = psnr(x, y);
        tape.backward(l);
    }
    adam_step(params, state, lr, cfg);
    return out;
}

void check_video_matches(const VideoFrames& video, const ArchConfig& arch) {
    video.validate();
    arch.validate();
    if (video.h != arch.frame_h() || video.w != arch.frame_w())
        throw DataError("video frame size does not match the architecture output");
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0 || finetune_epochs < 0)
        throw std::invalid_argument("epoch counts must be non-negative");
    if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
    if (std::fabs(loss_w_mae + loss_w_ssim - 1.0) > 1e-12)
        throw std::invalid_argument("loss weights must sum to 1");
    if (!(finetune_lr_scale > 0.0))
        throw std::invalid_argument("finetune_lr_scale must be positive");
}

Tensor loss(const Tensor& x, const Tensor& xhat, double w_mae, double w_ssim) {
    if (x.shape() != xhat.shape())
        throw std::invalid_argument("loss inputs must share a shape");
    if (x.shape().size() != 4) throw std::invalid_argument("loss expects (N,C,H,W) frames");
    const std::int64_t c = x.shape()[1];

    Tensor mae = ops::mean(ops::abs(ops::sub(x, xhat)));

    // depthwise Gaussian window, one copy per channel, held constant
    const std::vector<double> g = ssim_gaussian_window();
    std::vector<double> wdata;
    wdata.reserve(static_cast<std::size_t>(c) * g.size());
    for (std::int64_t i = 0; i < c; ++i) wdata.insert(wdata.end(), g.begin(), g.end());
    Tensor win = Tensor::from_vector({c, 1, kSsimWindow, kSsimWindow}, std::move(wdata));

    auto blur = [&](const Tensor& t) {
        return ops::conv2d(t, win, std::nullopt, 1, 0, static_cast<int>(c));
    };
    Tensor mux = blur(x);
    Tensor muy = blur(xhat);
    Tensor exx = blur(ops::mul(x, x));
    Tensor eyy = blur(ops::mul(xhat, xhat));
    Tensor exy = blur(ops::mul(x, xhat));

    Tensor sigx = ops::sub(exx, ops::mul(mux, mux));
    Tensor sigy = ops::sub(eyy, ops::mul(muy, muy));
    Tensor sigxy = ops::sub(exy, ops::mul(mux, muy));

    Tensor t1 = ops::add_scalar(ops::mul_scalar(ops::mul(mux, muy), 2.0), kSsimC1);
    Tensor t2 = ops::add_scalar(ops::mul_scalar(sigxy, 2.0), kSsimC2);
    Tensor d1 = ops::add_scalar(ops::add(ops::mul(mux, mux), ops::mul(muy, muy)), kSsimC1);
    Tensor d2 = ops::add_scalar(ops::add(sigx, sigy), kSsimC2);
    Tensor ssim_mean = ops::mean(ops::div(ops::mul(t1, t2), ops::mul(d1, d2)));

    Tensor one_minus = ops::sub(Tensor::scalar(1.0), ssim_mean);
    return ops::add(ops::mul_scalar(mae, w_mae), ops::mul_scalar(one_minus, w_ssim));
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
    if (total_steps <= 0) throw std::invalid_argument("total_steps must be positive");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("step must lie in [0, total_steps]");
    const double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(phase));
}

OptimizerState make_optimizer_state(const ParameterStore& params) {
    OptimizerState st;
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i].assign(params.at(i).data().size(), 0.0);
        st.v[i].assign(params.at(i).data().size(), 0.0);
    }
    return st;
}

void adam_step(ParameterStore& params, OptimizerState& state, double lr,
               const TrainConfig& cfg) {
    if (state.m.size() != params.size())
        throw std::invalid_argument("optimizer state does not match the parameter store");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params.at(i).mutable_data();
        const auto g = params.at(i).grad();
        if (state.m[i].size() != p.size())
            throw std::invalid_argument("optimizer moment shape mismatch");
        if (g.empty()) continue;  // no gradient accumulated: leave untouched
        for (std::size_t j = 0; j < p.size(); ++j) {
            double& m = state.m[i][j];
            double& v = state.v[i][j];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[j];
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[j] * g[j];
            p[j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
    }
}

TrainResult train(const VideoFrames& video, const ArchConfig& arch, const TrainConfig& cfg) {
    cfg.validate();
    check_video_matches(video, arch);

    TrainResult res{init_params(arch, cfg.seed), {}};
    OptimizerState state = make_optimizer_state(res.params);
    const std::int64_t total_steps = cfg.epochs * video.t;
    Rng shuffle_rng(cfg.seed ^ kTrainShuffleSalt);

    std::vector<std::int64_t> order(static_cast<std::size_t>(video.t));
    std::iota(order.begin(), order.end(), 0);
    std::int64_t step = 0;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        fisher_yates(order, shuffle_rng);
        EpochRecord rec{epoch, 0.0, 0.0, 0.0};
        for (std::int64_t k = 0; k < video.t; ++k) {
            const double lr = cosine_lr(step, total_steps, cfg.lr0);
            if (k == 0) rec.lr = lr;
            const StepOutcome o =
                run_step(video, order[k], arch, cfg, res.params, state, lr);
            rec.loss += o.loss;
            rec.psnr += o.psnr;
            ++step;
        }
        rec.loss /= static_cast<double>(video.t);
        rec.psnr /= static_cast<double>(video.t);
        res.log.push_back(rec);
    }
    return res;
}

TrainLog finetune(const VideoFrames& video, const ArchConfig& arch, const TrainConfig& cfg,
                  ParameterStore& params, const PruneMask& mask) {
    cfg.validate();
    check_video_matches(video, arch);

    apply_mask(params, mask);
    OptimizerState state = make_optimizer_state(params);
    const double lr = cfg.lr0 * cfg.finetune_lr_scale;
    Rng shuffle_rng(cfg.seed ^ kFinetuneShuffleSalt);

    TrainLog log;
    std::vector<std::int64_t> order(static_cast<std::size_t>(video.t));
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        fisher_yates(order, shuffle_rng);
        EpochRecord rec{epoch, lr, 0.0, 0.0};
        for (std::int64_t k = 0; k < video.t; ++k) {
            const StepOutcome o = run_step(video, order[k], arch, cfg, params, state, lr);
            apply_mask(params, mask);  // the mask is hard
            rec.loss += o.loss;
            rec.psnr += o.psnr;
        }
        rec.loss /= static_cast<double>(video.t);
        rec.psnr /= static_cast<double>(video.t);
        log.push_back(rec);
    }
    return log;
}

}  // namespace nervpp
