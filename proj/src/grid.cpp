#include "grid.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "png_io.hpp"

namespace gridflow {

namespace {
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
}  // namespace

void validate_grid(const FrameGrid& g) {
    const struct {
        const char* name;
        int value;
    } axes[] = {{"V", g.V}, {"T", g.T}, {"H", g.H}, {"W", g.W}, {"C", g.C}};
    for (auto [name, value] : axes)
        check(value >= 1, ErrCode::dimension, format("grid axis %s must be >= 1, got %d", name, value));
    check(g.data.size() == size_t(g.V) * g.T * g.H * g.W * g.C, ErrCode::dimension,
          "grid buffer size does not match V*T*H*W*C");
    for (int v = 0; v < g.V; ++v)
        for (int t = 0; t < g.T; ++t) {
            const float* f = g.frame(v, t);
            for (size_t i = 0; i < g.frame_size(); ++i) {
                float x = f[i];
                if (!(std::isfinite(x) && x >= 0.0f && x <= 1.0f)) {
                    size_t hw = i / g.C;
                    fail(ErrCode::value,
                         format("grid value out of [0,1] at (v=%d,t=%d,h=%zu,w=%zu,c=%zu): %g", v, t,
                                hw / g.W, hw % g.W, i % g.C, double(x)));
                }
            }
        }
}

FrameGrid row_video(const FrameGrid& g, int v) {
    check(v >= 0 && v < g.V, ErrCode::dimension, format("row index %d out of range [0,%d)", v, g.V));
    FrameGrid out(1, g.T, g.H, g.W, g.C);
    std::memcpy(out.data.data(), g.frame(v, 0), g.frame_size() * g.T * sizeof(float));
    return out;
}

FrameGrid column_video(const FrameGrid& g, int t) {
    check(t >= 0 && t < g.T, ErrCode::dimension, format("column index %d out of range [0,%d)", t, g.T));
    FrameGrid out(g.V, 1, g.H, g.W, g.C);
    for (int v = 0; v < g.V; ++v)
        std::memcpy(out.frame(v, 0), g.frame(v, t), g.frame_size() * sizeof(float));
    return out;
}

// Gathers the flattened p x p x C patches of one frame into rows of `rows`.
static void frame_to_patch_rows(const FrameGrid& g, int v, int t, int p, MMap rows) {
    const int pw = g.W / p;
    const float* f = g.frame(v, t);
    for (int k = 0; k < rows.rows(); ++k) {
        int py = k / pw, px = k % pw;
        float* dst = rows.data() + size_t(k) * rows.cols();
        for (int dy = 0; dy < p; ++dy) {
            const float* src = f + ((size_t(py) * p + dy) * g.W + size_t(px) * p) * g.C;
            std::memcpy(dst, src, size_t(p) * g.C * sizeof(float));
            dst += size_t(p) * g.C;
        }
    }
}

TokenGrid patchify(const FrameGrid& g, int p, std::span<const float> embed, int token_dim) {
    check(p >= 1, ErrCode::dimension, "patch side must be >= 1");
    check(g.H % p == 0, ErrCode::dimension, format("H=%d not divisible by patch side %d", g.H, p));
    check(g.W % p == 0, ErrCode::dimension, format("W=%d not divisible by patch side %d", g.W, p));
    const int patch_dim = p * p * g.C;
    const int P = (g.H / p) * (g.W / p);
    check(embed.size() == size_t(token_dim) * patch_dim, ErrCode::dimension,
          "embed map size must be D * (p*p*C)");

    TokenGrid tg(g.V, g.T, P, token_dim);
    CMap E(embed.data(), token_dim, patch_dim);
    std::vector<float> scratch(size_t(P) * patch_dim);
    for (int v = 0; v < g.V; ++v)
        for (int t = 0; t < g.T; ++t) {
            MMap rows(scratch.data(), P, patch_dim);
            frame_to_patch_rows(g, v, t, p, rows);
            MMap out(tg.token(v, t, 0), P, token_dim);
            out.noalias() = rows * E.transpose();
        }
    return tg;
}

FrameGrid unpatchify(const TokenGrid& tg, int p, int H, int W, int C,
                     std::span<const float> project, bool clamp_unit) {
    const int patch_dim = p * p * C;
    check(size_t(tg.P) * p * p == size_t(H) * W, ErrCode::dimension,
          format("P=%d patches of side %d cannot tile a %dx%d frame", tg.P, p, H, W));
    check(project.size() == size_t(patch_dim) * tg.D, ErrCode::dimension,
          "project map size must be (p*p*C) * D");

    FrameGrid g(tg.V, tg.T, H, W, C);
    CMap Pr(project.data(), patch_dim, tg.D);
    const int pw = W / p;
    std::vector<float> scratch(size_t(tg.P) * patch_dim);
    for (int v = 0; v < tg.V; ++v)
        for (int t = 0; t < tg.T; ++t) {
            CMap toks(tg.token(v, t, 0), tg.P, tg.D);
            MMap rows(scratch.data(), tg.P, patch_dim);
            rows.noalias() = toks * Pr.transpose();
            float* f = g.frame(v, t);
            for (int k = 0; k < tg.P; ++k) {
                int py = k / pw, px = k % pw;
                const float* src = rows.data() + size_t(k) * patch_dim;
                for (int dy = 0; dy < p; ++dy) {
                    float* dst = f + ((size_t(py) * p + dy) * W + size_t(px) * p) * C;
                    std::memcpy(dst, src, size_t(p) * C * sizeof(float));
                    src += size_t(p) * C;
                }
            }
        }
    if (clamp_unit)
        for (auto& x : g.data) x = std::isfinite(x) ? std::min(1.0f, std::max(0.0f, x)) : 0.0f;
    return g;
}

static constexpr char kGridMagic[4] = {'4', 'R', 'G', 'F'};
static constexpr uint32_t kGridVersion = 1;

void save_grid(const FrameGrid& g, const std::filesystem::path& path) {
    ByteWriter w;
    w.raw(kGridMagic, 4);
    w.u32(kGridVersion);
    w.u32(uint32_t(g.V));
    w.u32(uint32_t(g.T));
    w.u32(uint32_t(g.H));
    w.u32(uint32_t(g.W));
    w.u32(uint32_t(g.C));
    w.u8(0);  // dtype: float32
    for (float x : g.data) w.f32(x);
    write_file_bytes(path, w.buf.data(), w.buf.size());
}

FrameGrid load_grid(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes.data(), bytes.size());
    char magic[4];
    r.raw(magic, 4);
    check(std::memcmp(magic, kGridMagic, 4) == 0, ErrCode::io, "not a 4RGF file: " + path.string());
    uint32_t ver = r.u32();
    check(ver == kGridVersion, ErrCode::io, format("unsupported 4RGF version %u", ver));
    uint32_t V = r.u32(), T = r.u32(), H = r.u32(), W = r.u32(), C = r.u32();
    check(V >= 1 && T >= 1 && H >= 1 && W >= 1 && C >= 1, ErrCode::dimension,
          "4RGF header has an empty axis");
    uint8_t dtype = r.u8();
    check(dtype == 0, ErrCode::io, format("unsupported 4RGF dtype tag %u", unsigned(dtype)));
    FrameGrid g(int(V), int(T), int(H), int(W), int(C));
    for (auto& x : g.data) x = r.f32();
    return g;
}

static std::vector<uint8_t> frame_to_rgb8(const FrameGrid& g, int v, int t) {
    std::vector<uint8_t> px(size_t(g.H) * g.W * 3);
    const float* f = g.frame(v, t);
    for (size_t i = 0; i < size_t(g.H) * g.W; ++i)
        for (int c = 0; c < 3; ++c) {
            float x = f[i * g.C + std::min(c, g.C - 1)];
            x = std::min(1.0f, std::max(0.0f, x));
            px[i * 3 + c] = uint8_t(std::lround(x * 255.0f));
        }
    return px;
}

void export_grid_png(const FrameGrid& g, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (int v = 0; v < g.V; ++v)
        for (int t = 0; t < g.T; ++t)
            write_png_rgb8(dir / format("v%03d_t%03d.png", v, t), g.W, g.H, frame_to_rgb8(g, v, t));

    const int gap = 2;
    int sw = g.T * g.W + (g.T - 1) * gap;
    int sh = g.V * g.H + (g.V - 1) * gap;
    std::vector<uint8_t> sheet(size_t(sw) * sh * 3, 255);
    for (int v = 0; v < g.V; ++v)
        for (int t = 0; t < g.T; ++t) {
            auto px = frame_to_rgb8(g, v, t);
            int y0 = v * (g.H + gap), x0 = t * (g.W + gap);
            for (int y = 0; y < g.H; ++y)
                std::memcpy(&sheet[(size_t(y0 + y) * sw + x0) * 3], &px[size_t(y) * g.W * 3],
                            size_t(g.W) * 3);
        }
    write_png_rgb8(dir / "contact_sheet.png", sw, sh, sheet);
}

}  // namespace gridflow
