#pragma once

#include <functional>

#include "four_d.hpp"
#include "synth.hpp"

namespace gridflow {

// Rectified-flow convention: x_sigma = (1-sigma) x0 + sigma eps, target
// velocity eps - x0, Euler integration from sigma=1 to 0. Pixels live in
// [0,1]; the diffusion space is pixels rescaled to [-1,1].

template <typename S>
S corrupt(S x0, S eps, S sigma) {
    return (S(1) - sigma) * x0 + sigma * eps;
}

inline void corrupt_frames(const float* x0, const float* eps, float sigma, size_t n, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = corrupt(x0[i], eps[i], sigma);
}

// ------------------------------------------------------------------
// Loss pieces shared by training and the gradient check. Inputs x0 come as
// [0,1] pixel grids; eps is standard normal per pixel in the [-1,1] space.

template <typename S>
struct GridLossWork {
    FourDCache<S> cache;
    FourDGradWork<S> grad;
    RowMat<S> vel, d_vel;
    std::vector<float> eff;      // effective input frames, [-1,1]
    std::vector<S> target_px;    // per-frame target scratch
    RowMat<S> target_rows;
};

// Deterministic loss given the noise draw; samples live in flow_loss below.
// When acc != nullptr, parameter gradients are accumulated.
template <typename S>
S grid_loss_given_noise(const VideoModel<S>& model, const SyncStack<S>& syncs,
                        const FrameGrid& x0, const GridMask& mask, double sigma,
                        const std::vector<float>& eps, const ParamSet<S>* ps, GradAccum<S>* acc,
                        bool base_frozen, GridLossWork<S>& w, bool parallel = true) {
    const ModelConfig& cfg = model.cfg;
    const int V = x0.V, T = x0.T, P = cfg.patches_per_frame();
    check(mask.V == V && mask.T == T, ErrCode::dimension, "mask shape must match grid");
    check(x0.H == cfg.H && x0.W == cfg.W && x0.C == cfg.C, ErrCode::dimension,
          "grid frame shape does not match the model");
    const size_t fs = x0.frame_size();
    check(eps.size() == x0.data.size(), ErrCode::dimension, "noise shape must match grid");

    w.eff.resize(x0.data.size());
    std::vector<const float*> frames(size_t(V) * T);
    for (int f = 0; f < V * T; ++f) {
        const float* x0f = x0.data.data() + size_t(f) * fs;
        const float* ef = eps.data() + size_t(f) * fs;
        float* out = w.eff.data() + size_t(f) * fs;
        if (mask.given[size_t(f)]) {
            for (size_t i = 0; i < fs; ++i) out[i] = 2.0f * x0f[i] - 1.0f;
        } else {
            for (size_t i = 0; i < fs; ++i)
                out[i] = corrupt(2.0f * x0f[i] - 1.0f, ef[i], float(sigma));
        }
        frames[size_t(f)] = out;
    }

    four_d_forward(model, syncs, frames, mask, S(sigma), w.vel, w.cache, nullptr, nullptr,
                   parallel);

    const int n_score = V * T - mask.count_given();
    if (n_score == 0) return S(0);
    const S denom = S(n_score) * S(fs);

    w.target_px.resize(fs);
    w.target_rows.resize(P, cfg.patch_out_dim());
    if (acc) w.d_vel.setZero(w.vel.rows(), w.vel.cols());
    S loss = S(0);
    for (int f = 0; f < V * T; ++f) {
        if (mask.given[size_t(f)]) continue;
        const float* x0f = x0.data.data() + size_t(f) * fs;
        const float* ef = eps.data() + size_t(f) * fs;
        for (size_t i = 0; i < fs; ++i) w.target_px[i] = S(ef[i]) - (S(2) * S(x0f[i]) - S(1));
        frame_to_target_rows(w.target_px.data(), cfg, w.target_rows);
        auto pred = w.vel.middleRows(f * P, P);
        RowMat<S> diff = pred - w.target_rows;
        loss += diff.squaredNorm();
        if (acc) w.d_vel.middleRows(f * P, P) = (S(2) / denom) * diff;
    }
    loss /= denom;

    if (acc) {
        check(ps != nullptr, ErrCode::invalid_argument, "gradients need the parameter set");
        four_d_backward(model, syncs, w.d_vel, w.cache, *ps, *acc, w.grad, base_frozen, parallel);
    }
    return loss;
}

// Base-model (single video) variant of the same loss.
template <typename S>
struct VideoLossWork {
    VideoFwdCache<S> cache;
    RowMat<S> vel, d_vel;
    std::vector<float> eff;
    std::vector<S> target_px;
    RowMat<S> target_rows;
};

template <typename S>
S video_loss_given_noise(const VideoModel<S>& model, const float* x0_frames, int F,
                         ContextMode mode, const std::vector<uint8_t>& given, double sigma,
                         const float* eps, GradAccum<S>* acc, VideoLossWork<S>& w) {
    const ModelConfig& cfg = model.cfg;
    const size_t fs = size_t(cfg.H) * cfg.W * cfg.C;
    const int P = cfg.patches_per_frame();
    check(int(given.size()) == F, ErrCode::dimension, "mask length must equal frame count");

    w.eff.resize(size_t(F) * fs);
    std::vector<const float*> frames(size_t(F));
    for (int f = 0; f < F; ++f) {
        const float* x0f = x0_frames + size_t(f) * fs;
        const float* ef = eps + size_t(f) * fs;
        float* out = w.eff.data() + size_t(f) * fs;
        if (given[size_t(f)]) {
            for (size_t i = 0; i < fs; ++i) out[i] = 2.0f * x0f[i] - 1.0f;
        } else {
            for (size_t i = 0; i < fs; ++i)
                out[i] = corrupt(2.0f * x0f[i] - 1.0f, ef[i], float(sigma));
        }
        frames[size_t(f)] = out;
    }

    video_forward(model, frames, given, S(sigma), mode, w.vel, w.cache);

    int n_score = 0;
    for (auto g : given) n_score += g ? 0 : 1;
    if (n_score == 0) return S(0);
    const S denom = S(n_score) * S(fs);

    w.target_px.resize(fs);
    w.target_rows.resize(P, cfg.patch_out_dim());
    if (acc) w.d_vel.setZero(w.vel.rows(), w.vel.cols());
    S loss = S(0);
    for (int f = 0; f < F; ++f) {
        if (given[size_t(f)]) continue;
        const float* x0f = x0_frames + size_t(f) * fs;
        const float* ef = eps + size_t(f) * fs;
        for (size_t i = 0; i < fs; ++i) w.target_px[i] = S(ef[i]) - (S(2) * S(x0f[i]) - S(1));
        frame_to_target_rows(w.target_px.data(), cfg, w.target_rows);
        auto pred = w.vel.middleRows(f * P, P);
        RowMat<S> diff = pred - w.target_rows;
        loss += diff.squaredNorm();
        if (acc) w.d_vel.middleRows(f * P, P) = (S(2) / denom) * diff;
    }
    loss /= denom;
    if (acc) video_backward(model, w.d_vel, mode, w.cache, *acc);
    return loss;
}

// Draws a training mask: all-false with probability q, otherwise each frame
// independently given with probability rho.
std::vector<uint8_t> sample_frame_mask(Rng& rng, int F, double rho, double q);

// flow_loss per the training objective: sigma ~ U(0,1), eps ~ N(0,1).
float flow_loss_video(const VideoModel<float>& model, const float* x0_frames, int F,
                      ContextMode mode, const std::vector<uint8_t>& given, Rng& rng,
                      GradAccum<float>* acc, VideoLossWork<float>& work);

float flow_loss_grid(const VideoModel<float>& model, const SyncStack<float>& syncs,
                     const FrameGrid& x0, const GridMask& mask, Rng& rng,
                     const ParamSet<float>* ps, GradAccum<float>* acc, bool base_frozen,
                     GridLossWork<float>& work);

// ------------------------------------------------------------------
// Optimizer.

struct AdamOpt {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int warmup = 200;
    int total = 1;
    double floor_frac = 0.05;  // cosine decays to floor_frac * lr
    int t = 0;
    std::vector<Tensor<float>> m, v;

    void reset(const ParamSet<float>& ps, double lr_, int total_steps);
    double current_lr() const;
    void step(const ParamSet<float>& ps, const GradAccum<float>& g);
};

// ------------------------------------------------------------------
// Training.

struct LossRow {
    int step;
    double loss;
};

struct TrainProgressFn {
    std::function<void(int step, int total, double loss)> fn;
    void operator()(int s, int tot, double l) const {
        if (fn) fn(s, tot, l);
    }
};

// Base-model training over labeled videos with random masking.
std::vector<LossRow> train_base(VideoModel<float>& model, const std::vector<VideoItem>& videos,
                                const RunConfig& cfg, const TrainProgressFn& progress = {});

// 4D training stages. Stage A builds pseudo-4D grids from dynamic videos and
// sampled affine trajectories; stage B fine-tunes on renderer grids. Masks
// always mark row 0 and column 0 as given. With freeze_base only
// synchronization parameters receive updates.
enum class TrainStage { a, b };

std::vector<LossRow> train_4d_stage(VideoModel<float>& model, SyncStack<float>& syncs,
                                    TrainStage stage, const std::vector<VideoItem>& dyn_videos,
                                    const std::vector<FrameGrid>& grids, const RunConfig& cfg,
                                    bool freeze_base, const TrainProgressFn& progress = {});

// ------------------------------------------------------------------
// Sampling.

struct SampleTraceRow {
    int step;
    double sigma;
    double residual_norm;  // Frobenius norm of the velocity over unknown frames
};

struct DiagRow {
    int step, layer;
    double rel_update_v, rel_update_t, stream_cosine;
};

// Velocity callback: eff holds V*T effective frames in [-1,1]; the callback
// writes velocity frames (same shape, [-1,1] space, unclamped).
using VelocityFn = std::function<void(const std::vector<const float*>& eff, const GridMask& mask,
                                      float sigma, int step, float* vel_frames)>;

// Euler sampler core shared by model sampling, the sliding-window extension
// and closed-form stub tests: integrates sigma 1 -> 0 over `steps` uniform
// steps, re-injecting given frames clean at every step; given frames of the
// output equal the input bytes exactly.
FrameGrid euler_sample(const VelocityFn& velocity, const FrameGrid& given, const GridMask& mask,
                       int steps, uint64_t seed, std::vector<SampleTraceRow>* trace = nullptr);

// Conditional grid synthesis from the first row and first column.
FrameGrid sample_grid(const VideoModel<float>& model, const SyncStack<float>& syncs,
                      const FrameGrid& first_row, const FrameGrid& first_col, int steps,
                      uint64_t seed, std::vector<SampleTraceRow>* trace = nullptr,
                      std::vector<DiagRow>* diag = nullptr);

enum class ExtendAxis { time, view };

// Sliding-window extension: conditions on the trailing `overlap` columns
// (axis=time) or rows (axis=view) and samples `new_count` fresh ones; the
// original grid region is preserved bit-exactly.
FrameGrid extend_grid(const VideoModel<float>& model, const SyncStack<float>& syncs,
                      const FrameGrid& grid, ExtendAxis axis, int new_count, int overlap,
                      int steps, uint64_t seed);

}  // namespace gridflow
