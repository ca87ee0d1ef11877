#include "flow.hpp"

#include <cmath>

namespace gridflow {

namespace {
constexpr double kPi = 3.14159265358979323846;
enum : uint64_t { kTagBaseStep = 21, kTagStageA = 22, kTagStageB = 23 };
}  // namespace

std::vector<uint8_t> sample_frame_mask(Rng& rng, int F, double rho, double q) {
    std::vector<uint8_t> mask(size_t(F), 0);
    if (rng.uniform() < q) return mask;  // unconditional sample
    for (auto& m : mask) m = rng.uniform() < rho ? 1 : 0;
    return mask;
}

float flow_loss_video(const VideoModel<float>& model, const float* x0_frames, int F,
                      ContextMode mode, const std::vector<uint8_t>& given, Rng& rng,
                      GradAccum<float>* acc, VideoLossWork<float>& work) {
    const size_t fs = size_t(model.cfg.H) * model.cfg.W * model.cfg.C;
    double sigma = rng.uniform();
    std::vector<float> eps(size_t(F) * fs);
    for (auto& x : eps) x = float(rng.normal());
    return video_loss_given_noise<float>(model, x0_frames, F, mode, given, sigma, eps.data(), acc,
                                         work);
}

float flow_loss_grid(const VideoModel<float>& model, const SyncStack<float>& syncs,
                     const FrameGrid& x0, const GridMask& mask, Rng& rng,
                     const ParamSet<float>* ps, GradAccum<float>* acc, bool base_frozen,
                     GridLossWork<float>& work) {
    double sigma = rng.uniform();
    std::vector<float> eps(x0.data.size());
    for (auto& x : eps) x = float(rng.normal());
    return grid_loss_given_noise<float>(model, syncs, x0, mask, sigma, eps, ps, acc, base_frozen,
                                        work);
}

// ------------------------------------------------------------------

void AdamOpt::reset(const ParamSet<float>& ps, double lr_, int total_steps) {
    lr = lr_;
    total = std::max(1, total_steps);
    t = 0;
    m.clear();
    v.clear();
    for (auto* p : ps.items) {
        m.emplace_back(p->w.shape);
        v.emplace_back(p->w.shape);
    }
}

double AdamOpt::current_lr() const {
    double ramp = warmup > 0 ? std::min(1.0, double(t) / warmup) : 1.0;
    double prog = total > warmup ? std::clamp(double(t - warmup) / double(total - warmup), 0.0, 1.0)
                                 : 0.0;
    double cosf = floor_frac + (1.0 - floor_frac) * 0.5 * (1.0 + std::cos(kPi * prog));
    return lr * ramp * cosf;
}

void AdamOpt::step(const ParamSet<float>& ps, const GradAccum<float>& g) {
    ++t;
    const double lr_t = current_lr();
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < ps.items.size(); ++i) {
        Param<float>* p = ps.items[i];
        if (!p->trainable) continue;
        const auto& gv = g.g[i].v;
        auto& mv = m[i].v;
        auto& vv = v[i].v;
        auto& wv = p->w.v;
        for (size_t k = 0; k < wv.size(); ++k) {
            double gk = gv[k];
            double mk = beta1 * mv[k] + (1.0 - beta1) * gk;
            double vk = beta2 * vv[k] + (1.0 - beta2) * gk * gk;
            mv[k] = float(mk);
            vv[k] = float(vk);
            wv[k] -= float(lr_t * (mk / bc1) / (std::sqrt(vk / bc2) + eps));
        }
    }
}

// ------------------------------------------------------------------

std::vector<LossRow> train_base(VideoModel<float>& model, const std::vector<VideoItem>& videos,
                                const RunConfig& cfg, const TrainProgressFn& progress) {
    check(!videos.empty(), ErrCode::state, "base training dataset is empty");
    const int B = cfg.batch;
    const size_t fs = size_t(model.cfg.H) * model.cfg.W * model.cfg.C;

    ParamSet<float> ps;
    model.collect(ps);
    model.set_all_trainable(true);
    AdamOpt opt;
    opt.reset(ps, cfg.lr, cfg.iters_base);

    std::vector<GradAccum<float>> sample_acc(size_t(B));
    for (auto& a : sample_acc) a.reset_layout(ps);
    std::vector<VideoLossWork<float>> works(size_t(B));
    GradAccum<float> total(ps);
    std::vector<double> losses(size_t(B));
    std::vector<LossRow> rows;
    rows.reserve(size_t(cfg.iters_base));

    for (int step = 0; step < cfg.iters_base; ++step) {
        Rng srng(derive_seed(cfg.seed, kTagBaseStep, uint64_t(step)));
        std::vector<size_t> idx(size_t(B));
        std::vector<uint64_t> sseed(size_t(B));
        for (int b = 0; b < B; ++b) {
            idx[size_t(b)] = size_t(srng.below(videos.size()));
            sseed[size_t(b)] = srng.next_u64();
        }
        parallel_for(B, [&](int b) {
            const VideoItem& item = videos[idx[size_t(b)]];
            const int F = int(item.frames.frame_count());
            check(size_t(F) * fs == item.frames.data.size(), ErrCode::dimension,
                  "video frame shape mismatch");
            Rng r(sseed[size_t(b)]);
            auto mask = sample_frame_mask(r, F, cfg.rho, cfg.q);
            sample_acc[size_t(b)].zero();
            losses[size_t(b)] = flow_loss_video(
                model, item.frames.data.data(), F,
                item.freeze ? ContextMode::freeze_time : ContextMode::dynamic, mask, r,
                &sample_acc[size_t(b)], works[size_t(b)]);
        });
        total.zero();
        double loss = 0;
        for (int b = 0; b < B; ++b) {
            total.add(sample_acc[size_t(b)], 1.0f / float(B));
            loss += losses[size_t(b)] / B;
        }
        check(std::isfinite(loss), ErrCode::numeric,
              format("base training diverged: non-finite loss at step %d", step));
        opt.step(ps, total);
        rows.push_back({step, loss});
        progress(step, cfg.iters_base, loss);
    }
    return rows;
}

std::vector<LossRow> train_4d_stage(VideoModel<float>& model, SyncStack<float>& syncs,
                                    TrainStage stage, const std::vector<VideoItem>& dyn_videos,
                                    const std::vector<FrameGrid>& grids, const RunConfig& cfg,
                                    bool freeze_base, const TrainProgressFn& progress) {
    check(variant_trainable(syncs.variant), ErrCode::state,
          format("variant %s has no trainable synchronization parameters",
                 variant_name(syncs.variant)));
    const int iters = stage == TrainStage::a ? cfg.iters_stage_a : cfg.iters_stage_b;
    const uint64_t tag = stage == TrainStage::a ? kTagStageA : kTagStageB;
    if (stage == TrainStage::a)
        check(!dyn_videos.empty(), ErrCode::state, "stage A needs dynamic videos to warp");
    else
        check(!grids.empty(), ErrCode::state, "stage B needs renderer grids");

    ParamSet<float> ps = collect_params(model, &syncs);
    model.set_all_trainable(!freeze_base);
    syncs.set_all_trainable(true);

    AdamOpt opt;
    opt.reset(ps, cfg.lr, iters);
    GradAccum<float> acc(ps);
    GridLossWork<float> work;
    TrajectoryBounds bounds{cfg.traj_theta_max, cfg.traj_scale_max, cfg.traj_trans_max};
    GridMask mask = GridMask::first_row_col(cfg.V, cfg.T);

    std::vector<LossRow> rows;
    rows.reserve(size_t(iters));
    for (int step = 0; step < iters; ++step) {
        Rng r(derive_seed(cfg.seed, tag, uint64_t(step)));
        acc.zero();
        double loss = 0;
        for (int b = 0; b < cfg.batch_4d; ++b) {
            if (stage == TrainStage::a) {
                const VideoItem& item = dyn_videos[size_t(r.below(dyn_videos.size()))];
                AffineTrajectory traj = sample_trajectory(r, cfg.V, bounds);
                FrameGrid x0 = pseudo_grid(item.frames, traj);
                loss += flow_loss_grid(model, syncs, x0, mask, r, &ps, &acc, freeze_base, work) /
                        cfg.batch_4d;
            } else {
                const FrameGrid& x0 = grids[size_t(r.below(grids.size()))];
                loss += flow_loss_grid(model, syncs, x0, mask, r, &ps, &acc, freeze_base, work) /
                        cfg.batch_4d;
            }
        }
        if (cfg.batch_4d > 1) acc.scale(1.0f / float(cfg.batch_4d));
        check(std::isfinite(loss), ErrCode::numeric,
              format("4d training diverged: non-finite loss at step %d", step));
        opt.step(ps, acc);
        rows.push_back({step, loss});
        progress(step, iters, loss);
    }
    return rows;
}

// ------------------------------------------------------------------

FrameGrid euler_sample(const VelocityFn& velocity, const FrameGrid& given, const GridMask& mask,
                       int steps, uint64_t seed, std::vector<SampleTraceRow>* trace) {
    check(steps >= 1, ErrCode::invalid_argument, "sampler needs steps >= 1");
    check(mask.V == given.V && mask.T == given.T, ErrCode::dimension,
          "mask shape must match the grid");
    check(mask.count_given() >= 1, ErrCode::invalid_argument,
          "conditional sampling needs at least one given frame");
    const int n = given.V * given.T;
    const size_t fs = given.frame_size();

    std::vector<float> state(given.data.size());
    Rng rng(seed);
    for (int f = 0; f < n; ++f) {
        const float* src = given.data.data() + size_t(f) * fs;
        float* dst = state.data() + size_t(f) * fs;
        if (mask.given[size_t(f)]) {
            for (size_t i = 0; i < fs; ++i) dst[i] = 2.0f * src[i] - 1.0f;
        } else {
            for (size_t i = 0; i < fs; ++i) dst[i] = float(rng.normal());
        }
    }

    std::vector<const float*> eff(size_t(n));
    for (int f = 0; f < n; ++f) eff[size_t(f)] = state.data() + size_t(f) * fs;
    std::vector<float> vel(state.size());

    const float dsig = 1.0f / float(steps);
    for (int k = 0; k < steps; ++k) {
        const float sigma = 1.0f - float(k) / float(steps);
        velocity(eff, mask, sigma, k, vel.data());
        double res2 = 0;
        for (int f = 0; f < n; ++f) {
            if (mask.given[size_t(f)]) continue;
            float* x = state.data() + size_t(f) * fs;
            const float* vf = vel.data() + size_t(f) * fs;
            for (size_t i = 0; i < fs; ++i) {
                x[i] -= dsig * vf[i];
                res2 += double(vf[i]) * vf[i];
            }
        }
        check(std::isfinite(res2), ErrCode::numeric,
              format("sampler produced a non-finite state at step %d", k));
        if (trace) trace->push_back({k, double(sigma), std::sqrt(res2)});
    }

    FrameGrid out(given.V, given.T, given.H, given.W, given.C);
    for (int f = 0; f < n; ++f) {
        float* dst = out.data.data() + size_t(f) * fs;
        if (mask.given[size_t(f)]) {
            std::memcpy(dst, given.data.data() + size_t(f) * fs, fs * sizeof(float));
        } else {
            const float* x = state.data() + size_t(f) * fs;
            for (size_t i = 0; i < fs; ++i)
                dst[i] = std::min(1.0f, std::max(0.0f, 0.5f * (x[i] + 1.0f)));
        }
    }
    return out;
}

namespace {

// Wraps the 4D model as a VelocityFn; caches are reused across steps.
struct ModelVelocity {
    const VideoModel<float>& model;
    const SyncStack<float>& syncs;
    std::vector<DiagRow>* diag;
    FourDCache<float> cache;
    RowMat<float> vel_rows;
    StreamTrace trace;

    void operator()(const std::vector<const float*>& eff, const GridMask& mask, float sigma,
                    int step, float* vel_frames) {
        const int P = model.cfg.patches_per_frame();
        StreamTrace* tr = diag ? &trace : nullptr;
        four_d_forward(model, syncs, eff, mask, sigma, vel_rows, cache, tr);
        const size_t fs = size_t(model.cfg.H) * model.cfg.W * model.cfg.C;
        for (int f = 0; f < mask.V * mask.T; ++f)
            rows_to_frame<float>(vel_rows.middleRows(f * P, P), model.cfg,
                                 vel_frames + size_t(f) * fs);
        if (diag) {
            const int L = model.cfg.L;
            for (int l = 0; l <= L; ++l)
                diag->push_back({step, l, l < L ? trace.rel_v[size_t(l)] : 0.0,
                                 l < L ? trace.rel_t[size_t(l)] : 0.0, trace.cosine[size_t(l)]});
        }
    }
};

}  // namespace

FrameGrid sample_grid(const VideoModel<float>& model, const SyncStack<float>& syncs,
                      const FrameGrid& first_row, const FrameGrid& first_col, int steps,
                      uint64_t seed, std::vector<SampleTraceRow>* trace,
                      std::vector<DiagRow>* diag) {
    const ModelConfig& cfg = model.cfg;
    check(first_row.V == 1, ErrCode::dimension, "first row must be a 1xT grid");
    check(first_col.T == 1, ErrCode::dimension, "first column must be a Vx1 grid");
    validate_grid(first_row);
    validate_grid(first_col);
    const int V = first_col.V, T = first_row.T;
    check(first_row.H == cfg.H && first_row.W == cfg.W && first_row.C == cfg.C &&
              first_col.H == cfg.H && first_col.W == cfg.W && first_col.C == cfg.C,
          ErrCode::dimension, "conditioning frames do not match the model frame shape");
    const size_t fs = first_row.frame_size();
    for (size_t i = 0; i < fs; ++i)
        check(std::abs(first_row.data[i] - first_col.data[i]) <= 1e-6f, ErrCode::value,
              "corner-frame mismatch: first_row[0] and first_col[0] must agree within 1e-6");

    FrameGrid given(V, T, cfg.H, cfg.W, cfg.C);
    for (int t = 0; t < T; ++t)
        std::memcpy(given.frame(0, t), first_row.frame(0, t), fs * sizeof(float));
    for (int v = 1; v < V; ++v)
        std::memcpy(given.frame(v, 0), first_col.frame(v, 0), fs * sizeof(float));
    GridMask mask = GridMask::first_row_col(V, T);

    ModelVelocity mv{model, syncs, diag, {}, {}, {}};
    return euler_sample(std::ref(mv), given, mask, steps, seed, trace);
}

FrameGrid extend_grid(const VideoModel<float>& model, const SyncStack<float>& syncs,
                      const FrameGrid& grid, ExtendAxis axis, int new_count, int overlap,
                      int steps, uint64_t seed) {
    const ModelConfig& cfg = model.cfg;
    validate_grid(grid);
    check(overlap >= 1, ErrCode::invalid_argument, "extension needs overlap >= 1");
    check(new_count >= 0, ErrCode::invalid_argument, "new_count must be >= 0");
    if (new_count == 0) return grid;
    const int window = overlap + new_count;
    check(window <= cfg.max_frames(), ErrCode::state,
          format("window of %d frames exceeds the trained frame count %d", window,
                 cfg.max_frames()));
    const size_t fs = grid.frame_size();

    if (axis == ExtendAxis::time) {
        check(overlap <= grid.T, ErrCode::dimension, "overlap exceeds the grid's columns");
        FrameGrid win_given(grid.V, window, grid.H, grid.W, grid.C);
        GridMask win_mask(grid.V, window);
        for (int v = 0; v < grid.V; ++v)
            for (int t = 0; t < overlap; ++t) {
                std::memcpy(win_given.frame(v, t), grid.frame(v, grid.T - overlap + t),
                            fs * sizeof(float));
                win_mask.at(v, t) = 1;
            }
        ModelVelocity mv{model, syncs, nullptr, {}, {}, {}};
        FrameGrid win = euler_sample(std::ref(mv), win_given, win_mask, steps, seed);

        FrameGrid out(grid.V, grid.T + new_count, grid.H, grid.W, grid.C);
        for (int v = 0; v < grid.V; ++v) {
            for (int t = 0; t < grid.T; ++t)
                std::memcpy(out.frame(v, t), grid.frame(v, t), fs * sizeof(float));
            for (int t = 0; t < new_count; ++t)
                std::memcpy(out.frame(v, grid.T + t), win.frame(v, overlap + t),
                            fs * sizeof(float));
        }
        return out;
    }

    check(overlap <= grid.V, ErrCode::dimension, "overlap exceeds the grid's rows");
    FrameGrid win_given(window, grid.T, grid.H, grid.W, grid.C);
    GridMask win_mask(window, grid.T);
    for (int v = 0; v < overlap; ++v)
        for (int t = 0; t < grid.T; ++t) {
            std::memcpy(win_given.frame(v, t), grid.frame(grid.V - overlap + v, t),
                        fs * sizeof(float));
            win_mask.at(v, t) = 1;
        }
    ModelVelocity mv{model, syncs, nullptr, {}, {}, {}};
    FrameGrid win = euler_sample(std::ref(mv), win_given, win_mask, steps, seed);

    FrameGrid out(grid.V + new_count, grid.T, grid.H, grid.W, grid.C);
    for (int v = 0; v < grid.V; ++v)
        std::memcpy(out.frame(v, 0), grid.frame(v, 0), fs * grid.T * sizeof(float));
    for (int v = 0; v < new_count; ++v)
        std::memcpy(out.frame(grid.V + v, 0), win.frame(overlap + v, 0),
                    fs * grid.T * sizeof(float));
    return out;
}

}  // namespace gridflow
