#pragma once

#include <cmath>

#include "tensor.hpp"

namespace gridflow {

// ------------------------------------------------------------------
// Elementwise helpers

template <typename S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
void silu_forward(const RowMat<S>& x, RowMat<S>& y) {
    y = (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

template <typename S>
void silu_backward(const RowMat<S>& x, const RowMat<S>& dy, RowMat<S>& dx) {
    auto sg = (S(1) / (S(1) + (-x.array()).exp())).eval();
    dx = (dy.array() * sg * (S(1) + x.array() * (S(1) - sg))).matrix();
}

// ------------------------------------------------------------------
// Linear layer: y = x * W^T + b, W stored [out][in].

template <typename S>
struct Linear {
    Param<S> W, b;
    bool has_bias = true;

    Linear() = default;
    Linear(const std::string& name, int out, int in, bool bias = true)
        : W(name + ".w", {out, in}), b(name + ".b", {out}), has_bias(bias) {}

    int out_dim() const { return W.w.shape[0]; }
    int in_dim() const { return W.w.shape[1]; }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&W);
        if (has_bias) out.push_back(&b);
    }

    void init_normal(Rng& rng, double scale) {
        double std = scale / std::sqrt(double(in_dim()));
        for (auto& x : W.w.v) x = S(rng.normal() * std);
        if (has_bias) b.w.zero();
    }
    void init_zero() {
        W.w.zero();
        if (has_bias) b.w.zero();
    }
    void init_identity(double diag) {
        check(out_dim() == in_dim(), ErrCode::dimension, "identity init needs square map");
        W.w.zero();
        for (int i = 0; i < out_dim(); ++i) W.w.v[size_t(i) * in_dim() + i] = S(diag);
        if (has_bias) b.w.zero();
    }

    template <typename DerivedX>
    void forward(const Eigen::MatrixBase<DerivedX>& x, RowMat<S>& y) const {
        y.noalias() = x * W.w.mat2().transpose();
        if (has_bias) y.rowwise() += b.w.vec().transpose();
    }

    // dx may alias nothing; accumulates weight grads when trainable.
    template <typename DerivedX>
    void backward(const Eigen::MatrixBase<DerivedX>& x, const RowMat<S>& dy, RowMat<S>* dx,
                  GradAccum<S>& acc) const {
        if (dx) dx->noalias() = dy * W.w.mat2();
        if (W.trainable) {
            acc.of(W).mat2().noalias() += dy.transpose() * x;
            if (has_bias) acc.of(b).vec() += dy.colwise().sum().transpose();
        }
    }
};

// ------------------------------------------------------------------
// LayerNorm without affine parameters (scale/shift come from modulation).

template <typename S>
struct LayerNorm {
    static constexpr double kEps = 1e-6;

    // xhat and istd are cached for backward.
    static void forward(const RowMat<S>& x, RowMat<S>& xhat, VecX<S>& istd) {
        const int n = int(x.cols());
        xhat.resize(x.rows(), x.cols());
        istd.resize(x.rows());
        for (int r = 0; r < x.rows(); ++r) {
            S mu = x.row(r).mean();
            auto centered = (x.row(r).array() - mu).eval();
            S var = centered.square().sum() / S(n);
            S is = S(1) / std::sqrt(var + S(kEps));
            istd[r] = is;
            xhat.row(r) = (centered * is).matrix();
        }
    }

    static void backward(const RowMat<S>& xhat, const VecX<S>& istd, const RowMat<S>& dy,
                         RowMat<S>& dx) {
        const S n = S(xhat.cols());
        dx.resize(xhat.rows(), xhat.cols());
        for (int r = 0; r < xhat.rows(); ++r) {
            S mean_dy = dy.row(r).mean();
            S mean_dy_xhat = (dy.row(r).array() * xhat.row(r).array()).sum() / n;
            dx.row(r) =
                (((dy.row(r).array() - mean_dy) - xhat.row(r).array() * mean_dy_xhat) * istd[r])
                    .matrix();
        }
    }
};

// ------------------------------------------------------------------
// Multi-head self-attention over one token sequence.

template <typename S>
struct MhaCache {
    RowMat<S> in;     // qkv input
    RowMat<S> qkv;    // n x 3D
    RowMat<S> probs;  // (heads*n) x n softmax rows
    RowMat<S> ctx;    // n x D concatenated head outputs
};

template <typename S>
struct Mha {
    Linear<S> qkv, out;
    int heads = 1;

    Mha() = default;
    Mha(const std::string& name, int dim, int h)
        : qkv(name + ".qkv", 3 * dim, dim), out(name + ".out", dim, dim), heads(h) {
        check(dim % h == 0, ErrCode::dimension, "model dim must divide by head count");
    }

    void collect(std::vector<Param<S>*>& ps) {
        qkv.collect(ps);
        out.collect(ps);
    }
    void init(Rng& rng) {
        qkv.init_normal(rng, 1.0);
        out.init_normal(rng, 1.0);
    }

    void forward(const RowMat<S>& x, RowMat<S>& y, MhaCache<S>& c) const {
        const int n = int(x.rows()), D = int(x.cols()), dh = D / heads;
        const S scale = S(1) / std::sqrt(S(dh));
        c.in = x;
        qkv.forward(x, c.qkv);
        c.probs.resize(heads * n, n);
        c.ctx.resize(n, D);
        for (int h = 0; h < heads; ++h) {
            auto q = c.qkv.middleCols(h * dh, dh);
            auto k = c.qkv.middleCols(D + h * dh, dh);
            auto v = c.qkv.middleCols(2 * D + h * dh, dh);
            auto p = c.probs.middleRows(h * n, n);
            p.noalias() = q * k.transpose();
            p *= scale;
            for (int r = 0; r < n; ++r) {
                S mx = p.row(r).maxCoeff();
                p.row(r) = (p.row(r).array() - mx).exp();
                p.row(r) /= p.row(r).sum();
            }
            c.ctx.middleCols(h * dh, dh).noalias() = p * v;
        }
        out.forward(c.ctx, y);
    }

    void backward(const RowMat<S>& dy, const MhaCache<S>& c, RowMat<S>& dx,
                  GradAccum<S>& acc) const {
        const int n = int(c.in.rows()), D = int(c.in.cols()), dh = D / heads;
        const S scale = S(1) / std::sqrt(S(dh));
        RowMat<S> dctx;
        out.backward(c.ctx, dy, &dctx, acc);
        RowMat<S> dqkv = RowMat<S>::Zero(n, 3 * D);
        RowMat<S> dp(n, n), ds(n, n);
        for (int h = 0; h < heads; ++h) {
            auto q = c.qkv.middleCols(h * dh, dh);
            auto k = c.qkv.middleCols(D + h * dh, dh);
            auto v = c.qkv.middleCols(2 * D + h * dh, dh);
            auto p = c.probs.middleRows(h * n, n);
            auto dc = dctx.middleCols(h * dh, dh);
            dp.noalias() = dc * v.transpose();
            dqkv.middleCols(2 * D + h * dh, dh).noalias() = p.transpose() * dc;
            // softmax backward
            for (int r = 0; r < n; ++r) {
                S dot = dp.row(r).dot(p.row(r));
                ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
            }
            dqkv.middleCols(h * dh, dh).noalias() = ds * k * scale;
            dqkv.middleCols(D + h * dh, dh).noalias() = ds.transpose() * q * scale;
        }
        qkv.backward(c.in, dqkv, &dx, acc);
    }
};

// ------------------------------------------------------------------
// Two-layer MLP with SiLU.

template <typename S>
struct MlpCache {
    RowMat<S> in, pre, act;
};

template <typename S>
struct Mlp {
    Linear<S> fc1, fc2;

    Mlp() = default;
    Mlp(const std::string& name, int dim, int hidden)
        : fc1(name + ".fc1", hidden, dim), fc2(name + ".fc2", dim, hidden) {}

    void collect(std::vector<Param<S>*>& ps) {
        fc1.collect(ps);
        fc2.collect(ps);
    }
    void init(Rng& rng) {
        fc1.init_normal(rng, 1.0);
        fc2.init_normal(rng, 1.0);
    }

    void forward(const RowMat<S>& x, RowMat<S>& y, MlpCache<S>& c) const {
        c.in = x;
        fc1.forward(x, c.pre);
        silu_forward(c.pre, c.act);
        fc2.forward(c.act, y);
    }

    void backward(const RowMat<S>& dy, const MlpCache<S>& c, RowMat<S>& dx,
                  GradAccum<S>& acc) const {
        RowMat<S> dact, dpre;
        fc2.backward(c.act, dy, &dact, acc);
        silu_backward(c.pre, dact, dpre);
        fc1.backward(c.in, dpre, &dx, acc);
    }
};

// ------------------------------------------------------------------
// DiT block: adaptive-norm modulated attention + MLP, returning the
// residual update only. Zero-initialized gates make the update vanish.

template <typename S>
struct BlockCache {
    RowMat<S> x;           // block input
    RowMat<S> n1;          // LN1 output
    VecX<S> istd1;
    RowMat<S> m1pe;        // modulated + frame positional encoding
    MhaCache<S> attn;
    RowMat<S> attn_out;    // pre-gate attention branch
    RowMat<S> h;           // x + g1 .* attn_out
    RowMat<S> n2;
    VecX<S> istd2;
    RowMat<S> m2;
    MlpCache<S> mlp;
    RowMat<S> mlp_out;     // pre-gate mlp branch
    VecX<S> cond;          // conditioning vector used
    VecX<S> ada_in;        // silu(cond)
    VecX<S> mod6;          // (shift1, scale1, gate1, shift2, scale2, gate2)
    std::vector<int> frame_of_row;  // token row -> frame positional index
};

template <typename S>
struct DiTBlock {
    Mha<S> attn;
    Mlp<S> mlp;
    Linear<S> ada;  // cond -> 6*D modulation
    int dim = 0;

    DiTBlock() = default;
    DiTBlock(const std::string& name, int D, int heads, int mlp_hidden)
        : attn(name + ".attn", D, heads),
          mlp(name + ".mlp", D, mlp_hidden),
          ada(name + ".ada", 6 * D, D),
          dim(D) {}

    void collect(std::vector<Param<S>*>& ps) {
        attn.collect(ps);
        mlp.collect(ps);
        ada.collect(ps);
    }

    void init(Rng& rng) {
        attn.init(rng);
        mlp.init(rng);
        ada.init_zero();  // inert modulation, zero gates
    }

    // x: (F*P) x D tokens of one sequence; frame_of_row maps each token row
    // to its frame positional index; pe_table is the shared frame positional
    // encoding. The conditioning vector is fixed across the sequence.
    // Returns the residual update dx (caller adds it to x).
    // ada_override substitutes the modulation map (sequential baseline
    // fine-tunes a separate copy for the cross-view pass).
    void forward(const RowMat<S>& x, const VecX<S>& cond, const std::vector<int>& frame_of_row,
                 const RowMat<S>& pe_table, RowMat<S>& dx_out, BlockCache<S>& c,
                 const Linear<S>* ada_override = nullptr) const {
        const Linear<S>& ada_map = ada_override ? *ada_override : ada;
        const int D = dim;
        c.x = x;
        c.cond = cond;
        c.frame_of_row = frame_of_row;
        c.ada_in = (cond.array() / (S(1) + (-cond.array()).exp())).matrix();
        RowMat<S> mod;
        ada_map.forward(c.ada_in.transpose(), mod);
        c.mod6 = mod.row(0).transpose();
        auto sh1 = c.mod6.segment(0, D), sc1 = c.mod6.segment(D, D), g1 = c.mod6.segment(2 * D, D);
        auto sh2 = c.mod6.segment(3 * D, D), sc2 = c.mod6.segment(4 * D, D),
             g2 = c.mod6.segment(5 * D, D);

        LayerNorm<S>::forward(x, c.n1, c.istd1);
        c.m1pe = (c.n1.array().rowwise() * (S(1) + sc1.array()).transpose()).matrix();
        c.m1pe.rowwise() += sh1.transpose();
        for (int r = 0; r < c.m1pe.rows(); ++r)
            c.m1pe.row(r) += pe_table.row(frame_of_row[size_t(r)]);

        attn.forward(c.m1pe, c.attn_out, c.attn);
        c.h = x + (c.attn_out.array().rowwise() * g1.array().transpose()).matrix();

        LayerNorm<S>::forward(c.h, c.n2, c.istd2);
        c.m2 = (c.n2.array().rowwise() * (S(1) + sc2.array()).transpose()).matrix();
        c.m2.rowwise() += sh2.transpose();
        mlp.forward(c.m2, c.mlp_out, c.mlp);

        dx_out = (c.attn_out.array().rowwise() * g1.array().transpose()).matrix() +
                 (c.mlp_out.array().rowwise() * g2.array().transpose()).matrix();
    }

    // d_out is the gradient w.r.t. (x + dx); produces the gradient w.r.t. x,
    // accumulates parameter/PE gradients and the conditioning gradient.
    void backward(const RowMat<S>& d_out, const BlockCache<S>& c, const RowMat<S>& pe_table,
                  Param<S>& pe_param, RowMat<S>& dx, VecX<S>& d_cond, GradAccum<S>& acc,
                  const Linear<S>* ada_override = nullptr) const {
        const Linear<S>& ada_map = ada_override ? *ada_override : ada;
        const int D = dim;
        auto sc1 = c.mod6.segment(D, D), g1 = c.mod6.segment(2 * D, D);
        auto sc2 = c.mod6.segment(4 * D, D), g2 = c.mod6.segment(5 * D, D);
        VecX<S> dmod6 = VecX<S>::Zero(6 * D);

        // out = h + g2 .* mlp_out, where h = x + g1 .* attn_out
        RowMat<S> d_mlp_out = (d_out.array().rowwise() * g2.array().transpose()).matrix();
        dmod6.segment(5 * D, D) += (d_out.array() * c.mlp_out.array()).colwise().sum().matrix().transpose();

        RowMat<S> d_m2, d_n2, d_h;
        mlp.backward(d_mlp_out, c.mlp, d_m2, acc);
        dmod6.segment(3 * D, D) += d_m2.colwise().sum().transpose();
        dmod6.segment(4 * D, D) += (d_m2.array() * c.n2.array()).colwise().sum().matrix().transpose();
        d_n2 = (d_m2.array().rowwise() * (S(1) + sc2.array()).transpose()).matrix();
        LayerNorm<S>::backward(c.n2, c.istd2, d_n2, d_h);
        d_h += d_out;

        RowMat<S> d_attn_out = (d_h.array().rowwise() * g1.array().transpose()).matrix();
        dmod6.segment(2 * D, D) +=
            (d_h.array() * c.attn_out.array()).colwise().sum().matrix().transpose();

        RowMat<S> d_m1pe, d_n1, d_x1;
        attn.backward(d_attn_out, c.attn, d_m1pe, acc);
        if (pe_param.trainable) {
            auto gpe = acc.of(pe_param).mat2();
            for (int r = 0; r < d_m1pe.rows(); ++r)
                gpe.row(c.frame_of_row[size_t(r)]) += d_m1pe.row(r);
        }
        (void)pe_table;
        dmod6.segment(0, D) += d_m1pe.colwise().sum().transpose();
        dmod6.segment(D, D) += (d_m1pe.array() * c.n1.array()).colwise().sum().matrix().transpose();
        d_n1 = (d_m1pe.array().rowwise() * (S(1) + sc1.array()).transpose()).matrix();
        LayerNorm<S>::backward(c.n1, c.istd1, d_n1, d_x1);

        dx = d_h + d_x1;

        RowMat<S> d_ada_in;
        ada_map.backward(c.ada_in.transpose(), RowMat<S>(dmod6.transpose()), &d_ada_in, acc);
        // silu'(cond)
        auto sg = (S(1) / (S(1) + (-c.cond.array()).exp())).eval();
        d_cond += (d_ada_in.row(0).transpose().array() * sg * (S(1) + c.cond.array() * (S(1) - sg)))
                      .matrix();
    }
};

}  // namespace gridflow
