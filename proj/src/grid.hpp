#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "util.hpp"

namespace gridflow {

// A V x T grid of H x W x C frames, values in [0,1].
// Row v (fixed viewpoint) is an ordinary video; column t (fixed timestep)
// sweeps the viewpoint over a frozen instant. Storage order is
// (v, t, h, w, c), row-major.
struct FrameGrid {
    int V = 0, T = 0, H = 0, W = 0, C = 0;
    std::vector<float> data;

    FrameGrid() = default;
    FrameGrid(int v, int t, int h, int w, int c)
        : V(v), T(t), H(h), W(w), C(c), data(size_t(v) * t * h * w * c, 0.0f) {
        check(v >= 1 && t >= 1 && h >= 1 && w >= 1 && c >= 1, ErrCode::dimension,
              format("FrameGrid dims must all be >= 1, got V=%d T=%d H=%d W=%d C=%d", v, t, h, w, c));
    }

    size_t frame_size() const { return size_t(H) * W * C; }
    size_t frame_count() const { return size_t(V) * T; }

    float* frame(int v, int t) { return data.data() + (size_t(v) * T + t) * frame_size(); }
    const float* frame(int v, int t) const { return data.data() + (size_t(v) * T + t) * frame_size(); }

    float& at(int v, int t, int h, int w, int c) {
        return data[(((size_t(v) * T + t) * H + h) * W + w) * C + c];
    }
    float at(int v, int t, int h, int w, int c) const {
        return data[(((size_t(v) * T + t) * H + h) * W + w) * C + c];
    }

    bool same_shape(const FrameGrid& o) const {
        return V == o.V && T == o.T && H == o.H && W == o.W && C == o.C;
    }
};

// Conditioning mask over the grid: true marks frames supplied clean.
struct GridMask {
    int V = 0, T = 0;
    std::vector<uint8_t> given;

    GridMask() = default;
    GridMask(int v, int t, bool value = false) : V(v), T(t), given(size_t(v) * t, value ? 1 : 0) {}

    uint8_t& at(int v, int t) { return given[size_t(v) * T + t]; }
    bool at(int v, int t) const { return given[size_t(v) * T + t] != 0; }

    int count_given() const {
        int n = 0;
        for (auto g : given) n += g ? 1 : 0;
        return n;
    }

    static GridMask first_row_col(int v, int t) {
        GridMask m(v, t);
        for (int j = 0; j < t; ++j) m.at(0, j) = 1;
        for (int i = 0; i < v; ++i) m.at(i, 0) = 1;
        return m;
    }
};

// Per-frame patch tokens, [V][T][P][D].
struct TokenGrid {
    int V = 0, T = 0, P = 0, D = 0;
    std::vector<float> data;

    TokenGrid() = default;
    TokenGrid(int v, int t, int p, int d)
        : V(v), T(t), P(p), D(d), data(size_t(v) * t * p * d, 0.0f) {}

    float* token(int v, int t, int p) {
        return data.data() + ((size_t(v) * T + t) * P + p) * D;
    }
    const float* token(int v, int t, int p) const {
        return data.data() + ((size_t(v) * T + t) * P + p) * D;
    }
};

// Throws unless every FrameGrid invariant holds (dims >= 1, all values
// finite and inside [0,1]); the message names the offending axis or the
// first offending coordinate.
void validate_grid(const FrameGrid& g);

// Frames of row v in timestep order, as a 1 x T grid.
FrameGrid row_video(const FrameGrid& g, int v);

// Frames of column t in viewpoint order, as a V x 1 grid.
FrameGrid column_video(const FrameGrid& g, int t);

// Splits every frame into p x p patches (raster order, row-major within the
// frame) and applies `embed`, a D x (p*p*C) matrix acting on the flattened
// patch (h-major, then w, then c). No bias; pass an identity to keep pixels.
TokenGrid patchify(const FrameGrid& g, int p, std::span<const float> embed, int token_dim);

// Inverse raster placement of projected patches. `project` is a
// (p*p*C) x D matrix. When `clamp_unit` is set the output is clamped to
// [0,1] (final sample use); velocity fields must pass false.
FrameGrid unpatchify(const TokenGrid& tg, int p, int H, int W, int C,
                     std::span<const float> project, bool clamp_unit);

// --- grid container file (".4rgf") ---
// magic "4RGF", format version u32 LE, V,T,H,W,C u32 LE, dtype u8
// (0 = float32), then V*T*H*W*C float32 LE in (v,t,h,w,c) order.
void save_grid(const FrameGrid& g, const std::filesystem::path& path);
FrameGrid load_grid(const std::filesystem::path& path);

// PNG export: one image per frame named v{v:03}_t{t:03}.png plus a tiled
// contact sheet of the whole grid (contact_sheet.png).
void export_grid_png(const FrameGrid& g, const std::filesystem::path& dir);

}  // namespace gridflow
