#pragma once

#include <algorithm>

#include "grid.hpp"
#include "nn.hpp"

namespace gridflow {

enum class ContextMode { dynamic, freeze_time };

struct ModelConfig {
    int L = 8;
    int D = 128;
    int heads = 4;
    int p = 8;
    int H = 32, W = 32;
    int V = 8, T = 8;
    int C = 3;
    int mlp_ratio = 4;

    int patches_per_frame() const { return (H / p) * (W / p); }
    int patch_in_dim() const { return p * p * (C + 1); }   // pixels + mask channel
    int patch_out_dim() const { return p * p * C; }
    int max_frames() const { return std::max(V, T); }

    void validate() const {
        check(L >= 1, ErrCode::dimension, "model.L must be >= 1");
        check(D >= 1 && heads >= 1 && D % heads == 0, ErrCode::dimension,
              "model.D must be a positive multiple of model.heads");
        check(p >= 1 && H >= 1 && W >= 1, ErrCode::dimension, "model dims must be positive");
        check(H % p == 0 && W % p == 0, ErrCode::dimension,
              format("frame %dx%d not divisible by patch side %d", H, W, p));
        check(V >= 1 && T >= 1, ErrCode::dimension, "model.V and model.T must be >= 1");
        check(mlp_ratio >= 1, ErrCode::dimension, "mlp ratio must be >= 1");
    }

    bool operator==(const ModelConfig&) const = default;
};

constexpr int kSigmaFeatDim = 64;

template <typename S>
VecX<S> sigma_features(S sigma) {
    constexpr int half = kSigmaFeatDim / 2;
    VecX<S> f(kSigmaFeatDim);
    const S t = sigma * S(1000);
    for (int i = 0; i < half; ++i) {
        S w = std::exp(S(-std::log(10000.0)) * S(i) / S(half - 1));
        f[i] = std::cos(t * w);
        f[half + i] = std::sin(t * w);
    }
    return f;
}

// ------------------------------------------------------------------
// Patch row helpers. A frame is H*W*C values; model inputs carry one extra
// mask channel per pixel. Patches are raster order, row-major inside the
// frame, channels innermost.

template <typename S>
void frame_to_input_rows(const float* frame, bool given, const ModelConfig& cfg,
                         Eigen::Ref<RowMat<S>> rows) {
    const int p = cfg.p, W = cfg.W, C = cfg.C, pw = cfg.W / p;
    const S maskval = given ? S(1) : S(0);
    for (int k = 0; k < cfg.patches_per_frame(); ++k) {
        int py = k / pw, px = k % pw;
        S* dst = rows.row(k).data();
        for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx) {
                const float* src = frame + ((size_t(py) * p + dy) * W + size_t(px) * p + dx) * C;
                for (int c = 0; c < C; ++c) *dst++ = S(src[c]);
                *dst++ = maskval;
            }
    }
}

template <typename S>
void frame_to_target_rows(const S* frame, const ModelConfig& cfg, Eigen::Ref<RowMat<S>> rows) {
    const int p = cfg.p, W = cfg.W, C = cfg.C, pw = cfg.W / p;
    for (int k = 0; k < cfg.patches_per_frame(); ++k) {
        int py = k / pw, px = k % pw;
        S* dst = rows.row(k).data();
        for (int dy = 0; dy < p; ++dy) {
            const S* src = frame + ((size_t(py) * p + dy) * W + size_t(px) * p) * C;
            std::copy(src, src + size_t(p) * C, dst);
            dst += size_t(p) * C;
        }
    }
}

template <typename S>
void rows_to_frame(const Eigen::Ref<const RowMat<S>>& rows, const ModelConfig& cfg, S* frame) {
    const int p = cfg.p, W = cfg.W, C = cfg.C, pw = cfg.W / p;
    for (int k = 0; k < cfg.patches_per_frame(); ++k) {
        int py = k / pw, px = k % pw;
        const S* src = rows.row(k).data();
        for (int dy = 0; dy < p; ++dy) {
            S* dst = frame + ((size_t(py) * p + dy) * W + size_t(px) * p) * C;
            std::copy(src, src + size_t(p) * C, dst);
            src += size_t(p) * C;
        }
    }
}

// ------------------------------------------------------------------

template <typename S>
struct CondCache {
    VecX<S> feat;
    RowMat<S> pre1, act1, out2;
    VecX<S> sig_out;
};

template <typename S>
struct HeadCache {
    RowMat<S> in, n, m;
    VecX<S> istd;
    VecX<S> cond, ada_in, mod2;
};

// The base video diffusion transformer. One model instance serves both the
// per-video forward pass and (through four_d.hpp) the grid forward passes.
template <typename S>
struct VideoModel {
    ModelConfig cfg;

    Linear<S> embed;
    Param<S> pos_spatial;   // P x D
    Param<S> pos_frame;     // max_frames x D
    Linear<S> sig1, sig2;   // sigma embedding trunk
    Param<S> ctx_dynamic, ctx_freeze;
    std::vector<DiTBlock<S>> blocks;
    Linear<S> head_ada;     // D -> 2D (shift, scale)
    Linear<S> head_proj;    // D -> p*p*C

    explicit VideoModel(const ModelConfig& c) : cfg(c) {
        cfg.validate();
        embed = Linear<S>("embed", cfg.D, cfg.patch_in_dim());
        pos_spatial = Param<S>("pos_spatial", {cfg.patches_per_frame(), cfg.D});
        pos_frame = Param<S>("pos_frame", {cfg.max_frames(), cfg.D});
        sig1 = Linear<S>("sigma.fc1", cfg.D, kSigmaFeatDim);
        sig2 = Linear<S>("sigma.fc2", cfg.D, cfg.D);
        ctx_dynamic = Param<S>("ctx.dynamic", {cfg.D});
        ctx_freeze = Param<S>("ctx.freeze", {cfg.D});
        blocks.reserve(cfg.L);
        for (int l = 0; l < cfg.L; ++l)
            blocks.emplace_back(format("block.%d", l), cfg.D, cfg.heads, cfg.D * cfg.mlp_ratio);
        head_ada = Linear<S>("head.ada", 2 * cfg.D, cfg.D);
        head_proj = Linear<S>("head.proj", cfg.patch_out_dim(), cfg.D);
    }

    // Stable parameter order; ids are assigned when a ParamSet is built, so
    // every GradAccum must come from the same ParamSet the passes use.
    void list_params(std::vector<Param<S>*>& out) {
        embed.collect(out);
        out.push_back(&pos_spatial);
        out.push_back(&pos_frame);
        sig1.collect(out);
        sig2.collect(out);
        out.push_back(&ctx_dynamic);
        out.push_back(&ctx_freeze);
        for (auto& b : blocks) b.collect(out);
        head_ada.collect(out);
        head_proj.collect(out);
    }

    void collect(ParamSet<S>& ps) {
        std::vector<Param<S>*> v;
        list_params(v);
        ps.add_all(v);
    }

    // Default init zeroes every modulation map and the output projection, so
    // a fresh model is the identity in token space with zero velocity.
    // random_all gives every map nonzero weights (tests that need the modes
    // or the head to matter use it).
    void init(Rng& rng, bool random_all = false) {
        embed.init_normal(rng, 1.0);
        for (auto& x : pos_spatial.w.v) x = S(rng.normal() * 0.02);
        for (auto& x : pos_frame.w.v) x = S(rng.normal() * 0.02);
        sig1.init_normal(rng, 1.0);
        sig2.init_normal(rng, 1.0);
        for (auto& x : ctx_dynamic.w.v) x = S(rng.normal() * 0.02);
        for (auto& x : ctx_freeze.w.v) x = S(rng.normal() * 0.02);
        for (auto& b : blocks) b.init(rng);
        head_ada.init_zero();
        head_proj.init_zero();
        if (random_all) {
            for (auto& b : blocks) b.ada.init_normal(rng, 0.5);
            head_ada.init_normal(rng, 0.5);
            head_proj.init_normal(rng, 1.0);
        }
    }

    void set_all_trainable(bool flag) {
        std::vector<Param<S>*> v;
        list_params(v);
        for (auto* p : v) p->trainable = flag;
    }

    const Param<S>& ctx(ContextMode m) const {
        return m == ContextMode::dynamic ? ctx_dynamic : ctx_freeze;
    }

    // sigma trunk -------------------------------------------------------
    void sigma_trunk(S sigma, CondCache<S>& c) const {
        c.feat = sigma_features(sigma);
        sig1.forward(c.feat.transpose(), c.pre1);
        silu_forward(c.pre1, c.act1);
        sig2.forward(c.act1, c.out2);
        c.sig_out = c.out2.row(0).transpose();
    }

    void sigma_trunk_backward(const VecX<S>& d_sig_out, const CondCache<S>& c,
                              GradAccum<S>& acc) const {
        RowMat<S> d_act, d_pre, d_feat;
        sig2.backward(c.act1, RowMat<S>(d_sig_out.transpose()), &d_act, acc);
        silu_backward(c.pre1, d_act, d_pre);
        sig1.backward(c.feat.transpose(), d_pre, nullptr, acc);
    }

    VecX<S> cond_for(const CondCache<S>& c, ContextMode m) const {
        return c.sig_out + ctx(m).w.vec();
    }

    // tokenization ------------------------------------------------------
    // rows: (frames*P) x patch_in scratch filled by caller via
    // frame_to_input_rows; produces tokens with spatial encodings added.
    void embed_rows(const RowMat<S>& rows, RowMat<S>& tokens) const {
        embed.forward(rows, tokens);
        const int P = cfg.patches_per_frame();
        auto pos = pos_spatial.w.mat2();
        for (int f = 0; f < tokens.rows() / P; ++f) tokens.middleRows(f * P, P) += pos;
    }

    void embed_rows_backward(const RowMat<S>& rows, const RowMat<S>& d_tokens,
                             GradAccum<S>& acc) const {
        embed.backward(rows, d_tokens, nullptr, acc);
        if (pos_spatial.trainable) {
            const int P = cfg.patches_per_frame();
            auto g = acc.of(pos_spatial).mat2();
            for (int f = 0; f < d_tokens.rows() / P; ++f) g += d_tokens.middleRows(f * P, P);
        }
    }

    // output head -------------------------------------------------------
    void head_forward(const RowMat<S>& x, const VecX<S>& cond, RowMat<S>& out,
                      HeadCache<S>& c) const {
        c.in = x;
        c.cond = cond;
        c.ada_in = (cond.array() / (S(1) + (-cond.array()).exp())).matrix();
        RowMat<S> mod;
        head_ada.forward(c.ada_in.transpose(), mod);
        c.mod2 = mod.row(0).transpose();
        auto sh = c.mod2.segment(0, cfg.D), sc = c.mod2.segment(cfg.D, cfg.D);
        LayerNorm<S>::forward(x, c.n, c.istd);
        c.m = (c.n.array().rowwise() * (S(1) + sc.array()).transpose()).matrix();
        c.m.rowwise() += sh.transpose();
        head_proj.forward(c.m, out);
    }

    void head_backward(const RowMat<S>& d_out, const HeadCache<S>& c, RowMat<S>& dx,
                       VecX<S>& d_cond, GradAccum<S>& acc) const {
        auto sc = c.mod2.segment(cfg.D, cfg.D);
        RowMat<S> d_m, d_n;
        head_proj.backward(c.m, d_out, &d_m, acc);
        VecX<S> dmod2 = VecX<S>::Zero(2 * cfg.D);
        dmod2.segment(0, cfg.D) = d_m.colwise().sum().transpose();
        dmod2.segment(cfg.D, cfg.D) = (d_m.array() * c.n.array()).colwise().sum().matrix().transpose();
        d_n = (d_m.array().rowwise() * (S(1) + sc.array()).transpose()).matrix();
        LayerNorm<S>::backward(c.n, c.istd, d_n, dx);
        RowMat<S> d_ada_in;
        head_ada.backward(c.ada_in.transpose(), RowMat<S>(dmod2.transpose()), &d_ada_in, acc);
        auto sg = (S(1) / (S(1) + (-c.cond.array()).exp())).eval();
        d_cond += (d_ada_in.row(0).transpose().array() * sg * (S(1) + c.cond.array() * (S(1) - sg)))
                      .matrix();
    }
};

// ------------------------------------------------------------------
// Single-sequence (base model) forward: one video of F frames in one mode.

template <typename S>
struct VideoFwdCache {
    RowMat<S> patch_rows;
    std::vector<RowMat<S>> xs;  // layer inputs, size L+1
    std::vector<BlockCache<S>> bc;
    HeadCache<S> hc;
    CondCache<S> cc;
    std::vector<int> frame_of_row;
};

// eff_frames: F frames of H*W*C values in [-1,1] (given frames already
// injected clean); given: per-frame conditioning flags. Returns the
// velocity prediction as patch rows ((F*P) x p*p*C).
template <typename S>
void video_forward(const VideoModel<S>& m, const std::vector<const float*>& eff_frames,
                   const std::vector<uint8_t>& given, S sigma, ContextMode mode,
                   RowMat<S>& vel_rows, VideoFwdCache<S>& c) {
    const int F = int(eff_frames.size());
    check(F >= 1, ErrCode::dimension, "video_forward needs at least one frame");
    check(int(given.size()) == F, ErrCode::dimension, "mask length must equal frame count");
    check(F <= m.cfg.max_frames(), ErrCode::dimension,
          format("sequence of %d frames exceeds positional encoding length %d", F,
                 m.cfg.max_frames()));
    const int P = m.cfg.patches_per_frame();

    c.patch_rows.resize(F * P, m.cfg.patch_in_dim());
    for (int f = 0; f < F; ++f)
        frame_to_input_rows<S>(eff_frames[size_t(f)], given[size_t(f)] != 0, m.cfg,
                               c.patch_rows.middleRows(f * P, P));
    c.frame_of_row.resize(size_t(F) * P);
    for (int f = 0; f < F; ++f)
        std::fill_n(c.frame_of_row.begin() + size_t(f) * P, P, f);

    m.sigma_trunk(sigma, c.cc);
    VecX<S> cond = m.cond_for(c.cc, mode);

    c.xs.assign(size_t(m.cfg.L) + 1, RowMat<S>());
    c.bc.assign(size_t(m.cfg.L), BlockCache<S>());
    m.embed_rows(c.patch_rows, c.xs[0]);
    auto pe = m.pos_frame.w.mat2();
    RowMat<S> dx;
    for (int l = 0; l < m.cfg.L; ++l) {
        m.blocks[size_t(l)].forward(c.xs[size_t(l)], cond, c.frame_of_row, pe, dx, c.bc[size_t(l)]);
        c.xs[size_t(l) + 1] = c.xs[size_t(l)] + dx;
    }
    m.head_forward(c.xs[size_t(m.cfg.L)], cond, vel_rows, c.hc);
}

template <typename S>
void video_backward(const VideoModel<S>& m, const RowMat<S>& d_vel_rows, ContextMode mode,
                    VideoFwdCache<S>& c, GradAccum<S>& acc) {
    auto pe = m.pos_frame.w.mat2();
    VecX<S> d_cond = VecX<S>::Zero(m.cfg.D);
    RowMat<S> dx, dx_prev;
    m.head_backward(d_vel_rows, c.hc, dx, d_cond, acc);
    for (int l = m.cfg.L - 1; l >= 0; --l) {
        m.blocks[size_t(l)].backward(dx, c.bc[size_t(l)], pe, m.pos_frame, dx_prev, d_cond, acc);
        std::swap(dx, dx_prev);
    }
    m.embed_rows_backward(c.patch_rows, dx, acc);

    // cond = sig_out + ctx(mode)
    const Param<S>& ctxp = m.ctx(mode);
    if (ctxp.trainable) acc.of(ctxp).vec() += d_cond;
    m.sigma_trunk_backward(d_cond, c.cc, acc);
}

}  // namespace gridflow
