#pragma once

#include "video_model.hpp"

namespace gridflow {

// Architecture variants for filling the frame grid. soft/hard carry trained
// synchronization layers, the free_* pair run without any 4D training, and
// sequential is the interleaved single-stream baseline.
enum class Variant { soft, hard, free_soft, free_hard, sequential };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::soft: return "soft";
        case Variant::hard: return "hard";
        case Variant::free_soft: return "free_soft";
        case Variant::free_hard: return "free_hard";
        case Variant::sequential: return "sequential";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    for (Variant v : {Variant::soft, Variant::hard, Variant::free_soft, Variant::free_hard,
                      Variant::sequential})
        if (s == variant_name(v)) return v;
    fail(ErrCode::invalid_argument, "unknown variant: " + s);
}

inline bool variant_trainable(Variant v) {
    return v == Variant::soft || v == Variant::hard || v == Variant::sequential;
}

// ------------------------------------------------------------------
// Training-free synchronization.

// Layer weight of the training-free soft schedule, w = 0.1 + (l/L) * 0.4.
inline double free_soft_weight(int l, int L) {
    check(L >= 1 && l >= 0 && l <= L, ErrCode::invalid_argument,
          format("free_soft weight index %d outside [0,%d]", l, L));
    return 0.1 + 0.4 * double(l) / double(L);
}

template <typename S>
void free_hard_sync(const RowMat<S>& yv, const RowMat<S>& yt, RowMat<S>& x) {
    check(yv.rows() == yt.rows() && yv.cols() == yt.cols(), ErrCode::dimension,
          "sync inputs must have identical shape");
    x = S(0.5) * (yv + yt);
}

template <typename S>
void free_soft_sync(const RowMat<S>& yv, const RowMat<S>& yt, int l, int L, RowMat<S>& xv,
                    RowMat<S>& xt) {
    check(yv.rows() == yt.rows() && yv.cols() == yt.cols(), ErrCode::dimension,
          "sync inputs must have identical shape");
    const S w = S(free_soft_weight(l, L));
    xv = (S(1) - w) * yv + w * yt;
    xt = (S(1) - w) * yt + w * yv;
}

// ------------------------------------------------------------------
// Learned synchronization layers, sigma-modulated.

template <typename S>
struct SyncCache {
    RowMat<S> yv, yt;         // layer inputs
    RowMat<S> yv_mod, yt_mod; // hard: modulated inputs
    RowMat<S> zmod;           // soft: modulated concat input
    VecX<S> mod4;
    VecX<S> sig_in;           // sigma trunk output
    VecX<S> sig_silu;         // silu(sig_in), the modulation-map input
};

template <typename S>
struct SyncLayer {
    Variant variant = Variant::soft;
    int D = 0;
    Linear<S> wv, wt;    // hard merge weights, init 0.5*I
    Linear<S> lin;       // soft cross-stream update, zero init
    Linear<S> mod;       // sigma modulation: D -> 4D scale/shift, zero init
    Linear<S> ada_view;  // sequential: fine-tuned copy of the block's
                         // adaptive-norm map for the cross-view pass

    SyncLayer() = default;
    SyncLayer(Variant var, int layer, int dim) : variant(var), D(dim) {
        const std::string base = format("sync.%d", layer);
        if (var == Variant::hard) {
            wv = Linear<S>(base + ".wv", dim, dim, /*bias=*/false);
            wt = Linear<S>(base + ".wt", dim, dim, /*bias=*/false);
            mod = Linear<S>(base + ".mod", 4 * dim, dim);
        } else if (var == Variant::soft) {
            lin = Linear<S>(base + ".lin", 2 * dim, 2 * dim);
            mod = Linear<S>(base + ".mod", 4 * dim, dim);
        } else if (var == Variant::sequential) {
            ada_view = Linear<S>(base + ".ada_view", 6 * dim, dim);
        }
    }

    void collect(std::vector<Param<S>*>& out) {
        if (variant == Variant::hard) {
            wv.collect(out);
            wt.collect(out);
            mod.collect(out);
        } else if (variant == Variant::soft) {
            lin.collect(out);
            mod.collect(out);
        } else if (variant == Variant::sequential) {
            ada_view.collect(out);
        }
    }

    void init() {
        if (variant == Variant::hard) {
            wv.init_identity(0.5);
            wt.init_identity(0.5);
            mod.init_zero();
        } else if (variant == Variant::soft) {
            lin.init_zero();
            mod.init_zero();
        }
        // sequential: ada_view is seeded from the trained base block by the
        // trainer so fine-tuning starts at the base behavior.
    }

    void modulation(const VecX<S>& sig_out, SyncCache<S>& c) const {
        c.sig_in = sig_out;
        c.sig_silu = (sig_out.array() / (S(1) + (-sig_out.array()).exp())).matrix();
        RowMat<S> m4;
        mod.forward(c.sig_silu.transpose(), m4);
        c.mod4 = m4.row(0).transpose();
    }

    // x = mod(Wv, sigma) yv + mod(Wt, sigma) yt; both streams continue from x.
    void hard_forward(const RowMat<S>& yv, const RowMat<S>& yt, const VecX<S>& sig_out,
                      RowMat<S>& x, SyncCache<S>& c) const {
        check(yv.rows() == yt.rows() && yv.cols() == yt.cols(), ErrCode::dimension,
              "sync inputs must have identical shape");
        c.yv = yv;
        c.yt = yt;
        modulation(sig_out, c);
        auto sv = c.mod4.segment(0, D), bv = c.mod4.segment(D, D);
        auto st = c.mod4.segment(2 * D, D), bt = c.mod4.segment(3 * D, D);
        c.yv_mod = (yv.array().rowwise() * (S(1) + sv.array()).transpose()).matrix();
        c.yv_mod.rowwise() += bv.transpose();
        c.yt_mod = (yt.array().rowwise() * (S(1) + st.array()).transpose()).matrix();
        c.yt_mod.rowwise() += bt.transpose();
        x.noalias() = c.yv_mod * wv.W.w.mat2().transpose();
        x.noalias() += c.yt_mod * wt.W.w.mat2().transpose();
    }

    void hard_backward(const RowMat<S>& dx, const SyncCache<S>& c, RowMat<S>& d_yv,
                       RowMat<S>& d_yt, VecX<S>& d_sig_out, GradAccum<S>& acc) const {
        auto sv = c.mod4.segment(0, D), st = c.mod4.segment(2 * D, D);
        RowMat<S> d_yv_mod, d_yt_mod;
        wv.backward(c.yv_mod, dx, &d_yv_mod, acc);
        wt.backward(c.yt_mod, dx, &d_yt_mod, acc);
        VecX<S> dmod4 = VecX<S>::Zero(4 * D);
        dmod4.segment(0, D) = (d_yv_mod.array() * c.yv.array()).colwise().sum().matrix().transpose();
        dmod4.segment(D, D) = d_yv_mod.colwise().sum().transpose();
        dmod4.segment(2 * D, D) = (d_yt_mod.array() * c.yt.array()).colwise().sum().matrix().transpose();
        dmod4.segment(3 * D, D) = d_yt_mod.colwise().sum().transpose();
        d_yv = (d_yv_mod.array().rowwise() * (S(1) + sv.array()).transpose()).matrix();
        d_yt = (d_yt_mod.array().rowwise() * (S(1) + st.array()).transpose()).matrix();
        mod_backward(dmod4, c, d_sig_out, acc);
    }

    // (dyv, dyt) = Mod_Linear(yv, yt; sigma); streams stay separate.
    void soft_forward(const RowMat<S>& yv, const RowMat<S>& yt, const VecX<S>& sig_out,
                      RowMat<S>& xv, RowMat<S>& xt, SyncCache<S>& c) const {
        check(yv.rows() == yt.rows() && yv.cols() == yt.cols(), ErrCode::dimension,
              "sync inputs must have identical shape");
        c.yv = yv;
        c.yt = yt;
        modulation(sig_out, c);
        auto s = c.mod4.segment(0, 2 * D), b = c.mod4.segment(2 * D, 2 * D);
        const int n = int(yv.rows());
        c.zmod.resize(n, 2 * D);
        c.zmod.leftCols(D) = yv;
        c.zmod.rightCols(D) = yt;
        c.zmod = (c.zmod.array().rowwise() * (S(1) + s.array()).transpose()).matrix();
        c.zmod.rowwise() += b.transpose();
        RowMat<S> delta;
        lin.forward(c.zmod, delta);
        xv = yv + delta.leftCols(D);
        xt = yt + delta.rightCols(D);
    }

    void soft_backward(const RowMat<S>& d_xv, const RowMat<S>& d_xt, const SyncCache<S>& c,
                       RowMat<S>& d_yv, RowMat<S>& d_yt, VecX<S>& d_sig_out,
                       GradAccum<S>& acc) const {
        const int n = int(d_xv.rows());
        auto s = c.mod4.segment(0, 2 * D);
        RowMat<S> d_delta(n, 2 * D);
        d_delta.leftCols(D) = d_xv;
        d_delta.rightCols(D) = d_xt;
        RowMat<S> d_zmod;
        lin.backward(c.zmod, d_delta, &d_zmod, acc);
        VecX<S> dmod4 = VecX<S>::Zero(4 * D);
        RowMat<S> z(n, 2 * D);
        z.leftCols(D) = c.yv;
        z.rightCols(D) = c.yt;
        dmod4.segment(0, 2 * D) = (d_zmod.array() * z.array()).colwise().sum().matrix().transpose();
        dmod4.segment(2 * D, 2 * D) = d_zmod.colwise().sum().transpose();
        RowMat<S> d_z = (d_zmod.array().rowwise() * (S(1) + s.array()).transpose()).matrix();
        d_yv = d_xv + d_z.leftCols(D);
        d_yt = d_xt + d_z.rightCols(D);
        mod_backward(dmod4, c, d_sig_out, acc);
    }

  private:
    void mod_backward(const VecX<S>& dmod4, const SyncCache<S>& c, VecX<S>& d_sig_out,
                      GradAccum<S>& acc) const {
        RowMat<S> d_sig_silu;
        mod.backward(c.sig_silu.transpose(), RowMat<S>(dmod4.transpose()), &d_sig_silu, acc);
        auto sg = (S(1) / (S(1) + (-c.sig_in.array()).exp())).eval();
        d_sig_out += (d_sig_silu.row(0).transpose().array() * sg *
                      (S(1) + c.sig_in.array() * (S(1) - sg)))
                         .matrix();
    }
};

// Synchronization stack; empty for the training-free variants.
template <typename S>
struct SyncStack {
    Variant variant = Variant::free_soft;
    std::vector<SyncLayer<S>> layers;

    SyncStack() = default;
    SyncStack(Variant v, const ModelConfig& cfg) : variant(v) {
        if (variant_trainable(v)) {
            layers.reserve(cfg.L);
            for (int l = 0; l < cfg.L; ++l) layers.emplace_back(v, l, cfg.D);
            for (auto& sl : layers) sl.init();
        }
    }

    void list_params(std::vector<Param<S>*>& out) {
        for (auto& sl : layers) sl.collect(out);
    }
    void set_all_trainable(bool flag) {
        std::vector<Param<S>*> v;
        list_params(v);
        for (auto* p : v) p->trainable = flag;
    }

    // Sequential fine-tuning starts from the base block's adaptive-norm maps.
    void seed_sequential_from(const VideoModel<S>& m) {
        if (variant != Variant::sequential) return;
        for (int l = 0; l < int(layers.size()); ++l) {
            layers[size_t(l)].ada_view.W.w = m.blocks[size_t(l)].ada.W.w;
            layers[size_t(l)].ada_view.b.w = m.blocks[size_t(l)].ada.b.w;
        }
    }
};

template <typename S>
ParamSet<S> collect_params(VideoModel<S>& m, SyncStack<S>* syncs) {
    std::vector<Param<S>*> v;
    m.list_params(v);
    if (syncs) syncs->list_params(v);
    ParamSet<S> ps;
    ps.add_all(v);
    return ps;
}

// ------------------------------------------------------------------
// Grid token plumbing. Token row of (v,t,k) is ((v*T)+t)*P + k; a grid row
// (fixed v) is contiguous, a grid column gathers strided frame blocks.

struct GridShape {
    int V = 0, T = 0, P = 0, D = 0;
    int rows() const { return V * T * P; }
};

template <typename S>
void gather_column(const RowMat<S>& X, const GridShape& g, int t, RowMat<S>& seq) {
    seq.resize(g.V * g.P, g.D);
    for (int v = 0; v < g.V; ++v)
        seq.middleRows(v * g.P, g.P) = X.middleRows((v * g.T + t) * g.P, g.P);
}

template <typename S>
void scatter_column(const RowMat<S>& seq, const GridShape& g, int t, RowMat<S>& X) {
    for (int v = 0; v < g.V; ++v)
        X.middleRows((v * g.T + t) * g.P, g.P) = seq.middleRows(v * g.P, g.P);
}

// ------------------------------------------------------------------
// One parallel two-stream layer: the view stream updates every grid column
// with the block in freeze-time mode while the temporal stream updates every
// grid row in dynamic mode. The T + V applications write disjoint slices and
// run concurrently.

template <typename S>
struct LayerAppCaches {
    std::vector<BlockCache<S>> cols;  // T entries (view stream / seq. cross-view pass)
    std::vector<BlockCache<S>> rows;  // V entries (temporal stream / seq. cross-time pass)
};

template <typename S>
void grid_column_update(const VideoModel<S>& m, int layer, const RowMat<S>& X,
                        const GridShape& g, const VecX<S>& cond, RowMat<S>& Y,
                        std::vector<BlockCache<S>>& caches, const Linear<S>* ada_override,
                        bool parallel) {
    caches.resize(size_t(g.T));
    Y.resize(X.rows(), X.cols());
    std::vector<int> frame_of_row(size_t(g.V) * g.P);
    for (int v = 0; v < g.V; ++v) std::fill_n(frame_of_row.begin() + size_t(v) * g.P, g.P, v);
    auto pe = m.pos_frame.w.mat2();
    auto run = [&](int t) {
        RowMat<S> seq, dx;
        gather_column(X, g, t, seq);
        m.blocks[size_t(layer)].forward(seq, cond, frame_of_row, pe, dx, caches[size_t(t)],
                                        ada_override);
        seq += dx;
        scatter_column(seq, g, t, Y);
    };
    if (parallel)
        parallel_for(g.T, run);
    else
        for (int t = 0; t < g.T; ++t) run(t);
}

template <typename S>
void grid_row_update(const VideoModel<S>& m, int layer, const RowMat<S>& X, const GridShape& g,
                     const VecX<S>& cond, RowMat<S>& Y, std::vector<BlockCache<S>>& caches,
                     bool parallel) {
    caches.resize(size_t(g.V));
    Y.resize(X.rows(), X.cols());
    std::vector<int> frame_of_row(size_t(g.T) * g.P);
    for (int t = 0; t < g.T; ++t) std::fill_n(frame_of_row.begin() + size_t(t) * g.P, g.P, t);
    auto pe = m.pos_frame.w.mat2();
    auto run = [&](int v) {
        RowMat<S> dx;
        auto seq = X.middleRows(v * g.T * g.P, g.T * g.P);
        RowMat<S> seq_copy = seq;  // block caches keep their own input copy
        m.blocks[size_t(layer)].forward(seq_copy, cond, frame_of_row, pe, dx, caches[size_t(v)]);
        Y.middleRows(v * g.T * g.P, g.T * g.P) = seq + dx;
    };
    if (parallel)
        parallel_for(g.V, run);
    else
        for (int v = 0; v < g.V; ++v) run(v);
}

// parallel_layer per the two-stream design: both stream updates are
// independent; outputs are (y_v, y_t).
template <typename S>
void parallel_layer(const VideoModel<S>& m, int layer, const RowMat<S>& xv, const RowMat<S>& xt,
                    const GridShape& g, const VecX<S>& cond_view, const VecX<S>& cond_temporal,
                    RowMat<S>& yv, RowMat<S>& yt, LayerAppCaches<S>& caches, bool parallel = true) {
    grid_column_update(m, layer, xv, g, cond_view, yv, caches.cols, nullptr, parallel);
    grid_row_update(m, layer, xt, g, cond_temporal, yt, caches.rows, parallel);
}

// sequential_layer per the interleaving baseline: one token copy, cross-view
// update first, then cross-time.
template <typename S>
void sequential_layer(const VideoModel<S>& m, int layer, const SyncLayer<S>* seq_params,
                      const RowMat<S>& x, const GridShape& g, const VecX<S>& cond_view,
                      const VecX<S>& cond_temporal, RowMat<S>& y_mid, RowMat<S>& x_next,
                      LayerAppCaches<S>& caches, bool parallel = true) {
    const Linear<S>* ada = seq_params ? &seq_params->ada_view : nullptr;
    grid_column_update(m, layer, x, g, cond_view, y_mid, caches.cols, ada, parallel);
    grid_row_update(m, layer, y_mid, g, cond_temporal, x_next, caches.rows, parallel);
}

// ------------------------------------------------------------------
// Whole-grid forward pass.

struct StreamTrace {
    std::vector<double> rel_v, rel_t;  // per sync layer
    std::vector<double> cosine;        // layer entries plus final state (L+1)
};

template <typename S>
double stream_cosine(const RowMat<S>& a, const RowMat<S>& b) {
    double num = double((a.array() * b.array()).sum());
    double den = double(a.norm()) * double(b.norm());
    if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
    return num / den;
}

template <typename S>
double rel_update(const RowMat<S>& next, const RowMat<S>& y) {
    double yn = double(y.norm());
    if (yn == 0.0) return 0.0;
    return double((next - y).norm()) / yn;
}

// Per-stream head outputs; used to check that the two-stream model with
// inert synchronization factorizes into independent base-model passes.
template <typename S>
struct PerStreamOut {
    RowMat<S> vel_view, vel_temporal;
};

template <typename S>
struct FourDCache {
    GridShape g;
    S sigma = S(0);
    RowMat<S> patch_rows;
    CondCache<S> cc;
    VecX<S> cond_v, cond_t, cond_head;
    std::vector<RowMat<S>> xv, xt;        // layer states (xt unused for sequential)
    std::vector<RowMat<S>> yv, yt;        // pre-sync outputs (yv = mid state for sequential)
    std::vector<LayerAppCaches<S>> apps;
    std::vector<SyncCache<S>> sc;
    RowMat<S> x_comb;
    HeadCache<S> hc;
};

// frames: V*T pointers to effective frame pixels in [-1,1] (given frames
// injected clean), in (v,t) order. Produces velocity patch rows
// ((V*T*P) x p*p*C).
template <typename S>
void four_d_forward(const VideoModel<S>& m, const SyncStack<S>& syncs,
                    const std::vector<const float*>& frames, const GridMask& mask, S sigma,
                    RowMat<S>& vel_rows, FourDCache<S>& c, StreamTrace* trace = nullptr,
                    PerStreamOut<S>* per_stream = nullptr, bool parallel = true) {
    const ModelConfig& cfg = m.cfg;
    const int V = mask.V, T = mask.T, P = cfg.patches_per_frame(), L = cfg.L;
    check(int(frames.size()) == V * T, ErrCode::dimension, "frame list does not match mask shape");
    check(V <= cfg.max_frames() && T <= cfg.max_frames(), ErrCode::dimension,
          format("grid %dx%d exceeds positional encoding length %d", V, T, cfg.max_frames()));
    if (variant_trainable(syncs.variant))
        check(int(syncs.layers.size()) == L, ErrCode::state,
              format("variant %s needs %d sync layers, have %zu", variant_name(syncs.variant), L,
                     syncs.layers.size()));
    const bool two_stream = syncs.variant != Variant::sequential;

    c.g = GridShape{V, T, P, cfg.D};
    c.sigma = sigma;
    c.patch_rows.resize(V * T * P, cfg.patch_in_dim());
    for (int f = 0; f < V * T; ++f)
        frame_to_input_rows<S>(frames[size_t(f)], mask.given[size_t(f)] != 0, cfg,
                               c.patch_rows.middleRows(f * P, P));

    m.sigma_trunk(sigma, c.cc);
    c.cond_v = m.cond_for(c.cc, ContextMode::freeze_time);
    c.cond_t = m.cond_for(c.cc, ContextMode::dynamic);
    c.cond_head = c.cc.sig_out + S(0.5) * (m.ctx_dynamic.w.vec() + m.ctx_freeze.w.vec());

    c.xv.assign(size_t(L) + 1, RowMat<S>());
    c.xt.assign(size_t(L) + 1, RowMat<S>());
    c.yv.assign(size_t(L), RowMat<S>());
    c.yt.assign(size_t(L), RowMat<S>());
    c.apps.assign(size_t(L), LayerAppCaches<S>());
    c.sc.assign(size_t(L), SyncCache<S>());
    if (trace) {
        trace->rel_v.clear();
        trace->rel_t.clear();
        trace->cosine.clear();
    }

    m.embed_rows(c.patch_rows, c.xv[0]);
    if (two_stream) c.xt[0] = c.xv[0];

    for (int l = 0; l < L; ++l) {
        if (trace && two_stream) trace->cosine.push_back(stream_cosine(c.xv[size_t(l)], c.xt[size_t(l)]));
        switch (syncs.variant) {
            case Variant::soft:
                parallel_layer(m, l, c.xv[size_t(l)], c.xt[size_t(l)], c.g, c.cond_v, c.cond_t,
                               c.yv[size_t(l)], c.yt[size_t(l)], c.apps[size_t(l)], parallel);
                syncs.layers[size_t(l)].soft_forward(c.yv[size_t(l)], c.yt[size_t(l)], c.cc.sig_out,
                                                     c.xv[size_t(l) + 1], c.xt[size_t(l) + 1],
                                                     c.sc[size_t(l)]);
                break;
            case Variant::hard:
                parallel_layer(m, l, c.xv[size_t(l)], c.xt[size_t(l)], c.g, c.cond_v, c.cond_t,
                               c.yv[size_t(l)], c.yt[size_t(l)], c.apps[size_t(l)], parallel);
                syncs.layers[size_t(l)].hard_forward(c.yv[size_t(l)], c.yt[size_t(l)], c.cc.sig_out,
                                                     c.xv[size_t(l) + 1], c.sc[size_t(l)]);
                c.xt[size_t(l) + 1] = c.xv[size_t(l) + 1];
                break;
            case Variant::free_soft:
                parallel_layer(m, l, c.xv[size_t(l)], c.xt[size_t(l)], c.g, c.cond_v, c.cond_t,
                               c.yv[size_t(l)], c.yt[size_t(l)], c.apps[size_t(l)], parallel);
                free_soft_sync(c.yv[size_t(l)], c.yt[size_t(l)], l + 1, L, c.xv[size_t(l) + 1],
                               c.xt[size_t(l) + 1]);
                break;
            case Variant::free_hard:
                parallel_layer(m, l, c.xv[size_t(l)], c.xt[size_t(l)], c.g, c.cond_v, c.cond_t,
                               c.yv[size_t(l)], c.yt[size_t(l)], c.apps[size_t(l)], parallel);
                free_hard_sync(c.yv[size_t(l)], c.yt[size_t(l)], c.xv[size_t(l) + 1]);
                c.xt[size_t(l) + 1] = c.xv[size_t(l) + 1];
                break;
            case Variant::sequential:
                sequential_layer(m, l, &syncs.layers[size_t(l)], c.xv[size_t(l)], c.g, c.cond_v,
                                 c.cond_t, c.yv[size_t(l)], c.xv[size_t(l) + 1], c.apps[size_t(l)],
                                 parallel);
                break;
        }
        if (trace && two_stream) {
            trace->rel_v.push_back(rel_update(c.xv[size_t(l) + 1], c.yv[size_t(l)]));
            trace->rel_t.push_back(rel_update(c.xt[size_t(l) + 1], c.yt[size_t(l)]));
        }
    }
    if (trace && two_stream) trace->cosine.push_back(stream_cosine(c.xv[size_t(L)], c.xt[size_t(L)]));

    if (syncs.variant == Variant::soft || syncs.variant == Variant::free_soft)
        c.x_comb = S(0.5) * (c.xv[size_t(L)] + c.xt[size_t(L)]);
    else
        c.x_comb = c.xv[size_t(L)];
    m.head_forward(c.x_comb, c.cond_head, vel_rows, c.hc);

    if (per_stream && two_stream) {
        HeadCache<S> tmp;
        m.head_forward(c.xv[size_t(L)], c.cond_v, per_stream->vel_view, tmp);
        m.head_forward(c.xt[size_t(L)], c.cond_t, per_stream->vel_temporal, tmp);
    }
}

// ------------------------------------------------------------------
// Whole-grid backward pass. Per-layer block applications run in a fixed
// number of slots with private gradient accumulators, reduced in slot order,
// so gradients are byte-identical regardless of thread count.

template <typename S>
struct FourDGradWork {
    static constexpr int kSlots = 4;
    std::vector<GradAccum<S>> slot_acc;
    std::vector<VecX<S>> slot_dcond_v, slot_dcond_t;

    void ensure(const ParamSet<S>& ps, int D) {
        if (slot_acc.size() != kSlots || slot_acc[0].g.size() != ps.items.size()) {
            slot_acc.assign(kSlots, GradAccum<S>());
            for (auto& a : slot_acc) a.reset_layout(ps);
            slot_dcond_v.assign(kSlots, VecX<S>());
            slot_dcond_t.assign(kSlots, VecX<S>());
        }
        for (auto& a : slot_acc) a.zero();
        for (auto& v : slot_dcond_v) v = VecX<S>::Zero(D);
        for (auto& v : slot_dcond_t) v = VecX<S>::Zero(D);
    }
};

template <typename S>
void four_d_backward(const VideoModel<S>& m, const SyncStack<S>& syncs, const RowMat<S>& d_vel,
                     FourDCache<S>& c, const ParamSet<S>& ps, GradAccum<S>& acc,
                     FourDGradWork<S>& work, bool base_frozen, bool parallel = true) {
    const ModelConfig& cfg = m.cfg;
    const int L = cfg.L, D = cfg.D;
    const GridShape g = c.g;
    const bool two_stream = syncs.variant != Variant::sequential;
    work.ensure(ps, D);
    auto pe = m.pos_frame.w.mat2();

    VecX<S> d_cond_head = VecX<S>::Zero(D);
    VecX<S> d_sig = VecX<S>::Zero(D);
    RowMat<S> d_xcomb;
    m.head_backward(d_vel, c.hc, d_xcomb, d_cond_head, acc);

    RowMat<S> d_xv, d_xt;  // gradients w.r.t. layer output states
    if (syncs.variant == Variant::soft || syncs.variant == Variant::free_soft) {
        d_xv = S(0.5) * d_xcomb;
        d_xt = d_xv;
    } else {
        d_xv = d_xcomb;  // merged state (hard variants) or single stream (sequential)
    }

    std::vector<int> frame_of_row_col(size_t(g.V) * g.P), frame_of_row_row(size_t(g.T) * g.P);
    for (int v = 0; v < g.V; ++v) std::fill_n(frame_of_row_col.begin() + size_t(v) * g.P, g.P, v);
    for (int t = 0; t < g.T; ++t) std::fill_n(frame_of_row_row.begin() + size_t(t) * g.P, g.P, t);

    RowMat<S> d_yv, d_yt, d_xv_prev, d_xt_prev;
    for (int l = L - 1; l >= 0; --l) {
        // synchronization backward first (it sits after the blocks)
        if (two_stream) {
            switch (syncs.variant) {
                case Variant::soft:
                    syncs.layers[size_t(l)].soft_backward(d_xv, d_xt, c.sc[size_t(l)], d_yv, d_yt,
                                                          d_sig, acc);
                    break;
                case Variant::hard:
                    syncs.layers[size_t(l)].hard_backward(d_xv, c.sc[size_t(l)], d_yv, d_yt, d_sig,
                                                          acc);
                    break;
                case Variant::free_soft: {
                    const S w = S(free_soft_weight(l + 1, L));
                    d_yv = (S(1) - w) * d_xv + w * d_xt;
                    d_yt = (S(1) - w) * d_xt + w * d_xv;
                    break;
                }
                case Variant::free_hard:
                    d_yv = S(0.5) * d_xv;
                    d_yt = d_yv;
                    break;
                default:
                    break;
            }
        }

        // stop early when nothing below the first sync layer is trainable
        const bool last_needed_layer =
            (l == 0) && base_frozen && two_stream && variant_trainable(syncs.variant);
        if (last_needed_layer) {
            d_xv_prev.setZero(g.rows(), D);
            d_xt_prev.setZero(g.rows(), D);
            std::swap(d_xv, d_xv_prev);
            std::swap(d_xt, d_xt_prev);
            break;
        }

        d_xv_prev.resize(g.rows(), D);
        if (two_stream) d_xt_prev.resize(g.rows(), D);

        const DiTBlock<S>& block = m.blocks[size_t(l)];
        if (two_stream) {
            auto run_app = [&](int slot) {
                RowMat<S> d_seq, d_in;
                for (int a = slot; a < g.T + g.V; a += FourDGradWork<S>::kSlots) {
                    if (a < g.T) {
                        gather_column(d_yv, g, a, d_seq);
                        block.backward(d_seq, c.apps[size_t(l)].cols[size_t(a)], pe, m.pos_frame,
                                       d_in, work.slot_dcond_v[size_t(slot)],
                                       work.slot_acc[size_t(slot)]);
                        scatter_column(d_in, g, a, d_xv_prev);
                    } else {
                        int v = a - g.T;
                        RowMat<S> d_rows = d_yt.middleRows(v * g.T * g.P, g.T * g.P);
                        block.backward(d_rows, c.apps[size_t(l)].rows[size_t(v)], pe, m.pos_frame,
                                       d_in, work.slot_dcond_t[size_t(slot)],
                                       work.slot_acc[size_t(slot)]);
                        d_xt_prev.middleRows(v * g.T * g.P, g.T * g.P) = d_in;
                    }
                }
            };
            if (parallel)
                parallel_for(FourDGradWork<S>::kSlots, run_app);
            else
                for (int s = 0; s < FourDGradWork<S>::kSlots; ++s) run_app(s);
        } else {
            // sequential: x_{l+1} = y + row(y), y = x + col(x)
            RowMat<S> d_y(g.rows(), D);
            auto run_row = [&](int slot) {
                RowMat<S> d_in;
                for (int v = slot; v < g.V; v += FourDGradWork<S>::kSlots) {
                    RowMat<S> d_rows = d_xv.middleRows(v * g.T * g.P, g.T * g.P);
                    block.backward(d_rows, c.apps[size_t(l)].rows[size_t(v)], pe, m.pos_frame, d_in,
                                   work.slot_dcond_t[size_t(slot)], work.slot_acc[size_t(slot)]);
                    d_y.middleRows(v * g.T * g.P, g.T * g.P) = d_in;
                }
            };
            if (parallel)
                parallel_for(FourDGradWork<S>::kSlots, run_row);
            else
                for (int s = 0; s < FourDGradWork<S>::kSlots; ++s) run_row(s);
            auto run_col = [&](int slot) {
                RowMat<S> d_seq, d_in;
                for (int t = slot; t < g.T; t += FourDGradWork<S>::kSlots) {
                    gather_column(d_y, g, t, d_seq);
                    block.backward(d_seq, c.apps[size_t(l)].cols[size_t(t)], pe, m.pos_frame, d_in,
                                   work.slot_dcond_v[size_t(slot)], work.slot_acc[size_t(slot)],
                                   &syncs.layers[size_t(l)].ada_view);
                    scatter_column(d_in, g, t, d_xv_prev);
                }
            };
            if (parallel)
                parallel_for(FourDGradWork<S>::kSlots, run_col);
            else
                for (int s = 0; s < FourDGradWork<S>::kSlots; ++s) run_col(s);
        }

        // hard variants: both streams of layer l read the same merged state
        if (syncs.variant == Variant::hard || syncs.variant == Variant::free_hard) {
            d_xv = d_xv_prev + d_xt_prev;
        } else if (two_stream) {
            std::swap(d_xv, d_xv_prev);
            std::swap(d_xt, d_xt_prev);
        } else {
            std::swap(d_xv, d_xv_prev);
        }
    }

    // reduce slots in fixed order
    VecX<S> d_cond_v = VecX<S>::Zero(D), d_cond_t = VecX<S>::Zero(D);
    for (int s = 0; s < FourDGradWork<S>::kSlots; ++s) {
        acc.add(work.slot_acc[size_t(s)]);
        d_cond_v += work.slot_dcond_v[size_t(s)];
        d_cond_t += work.slot_dcond_t[size_t(s)];
    }

    if (!base_frozen) {
        // soft variants keep separate streams, both fed by the same embedding;
        // hard variants already summed both stream gradients into d_xv.
        RowMat<S> d_x0;
        if (syncs.variant == Variant::soft || syncs.variant == Variant::free_soft)
            d_x0 = d_xv + d_xt;
        else
            d_x0 = d_xv;
        m.embed_rows_backward(c.patch_rows, d_x0, acc);
    }

    if (m.ctx_freeze.trainable)
        acc.of(m.ctx_freeze).vec() += d_cond_v + S(0.5) * d_cond_head;
    if (m.ctx_dynamic.trainable)
        acc.of(m.ctx_dynamic).vec() += d_cond_t + S(0.5) * d_cond_head;
    VecX<S> d_sig_total = d_cond_v + d_cond_t + d_cond_head + d_sig;
    m.sigma_trunk_backward(d_sig_total, c.cc, acc);
}

}  // namespace gridflow
