#include "synth.hpp"

#include <algorithm>
#include <cmath>

namespace gridflow {

static constexpr double kPi = 3.14159265358979323846;

AffineTrajectory sample_trajectory(Rng& rng, int V, const TrajectoryBounds& bounds) {
    check(V >= 1, ErrCode::dimension, "trajectory needs V >= 1");
    AffineTrajectory traj;
    traj.maps.resize(size_t(V));
    traj.theta.assign(size_t(V), 0.0);
    traj.log_scale.assign(size_t(V), 0.0);
    traj.trans.assign(size_t(V), {0.0, 0.0});

    const double th_max = bounds.theta_max_deg * kPi / 180.0;
    const double s_max = bounds.log_scale_max;
    const double t_max = bounds.trans_max;

    // base rates plus a small per-step wander, clamped to the bounds
    double th_rate = rng.uniform(-0.8, 0.8) * th_max;
    double s_rate = rng.uniform(-0.8, 0.8) * s_max;
    double dir = rng.uniform(0.0, 2.0 * kPi);
    double speed = rng.uniform(0.2, 0.8) * t_max;
    double tx_rate = speed * std::cos(dir), ty_rate = speed * std::sin(dir);

    double th = 0, ls = 0, tx = 0, ty = 0;
    traj.maps[0] = Affine2::identity();
    for (int v = 1; v < V; ++v) {
        th_rate = std::clamp(th_rate + rng.uniform(-0.2, 0.2) * th_max, -th_max, th_max);
        s_rate = std::clamp(s_rate + rng.uniform(-0.2, 0.2) * s_max, -s_max, s_max);
        tx_rate += rng.uniform(-0.2, 0.2) * t_max;
        ty_rate += rng.uniform(-0.2, 0.2) * t_max;
        double tn = std::hypot(tx_rate, ty_rate);
        if (tn > t_max) {
            tx_rate *= t_max / tn;
            ty_rate *= t_max / tn;
        }
        th += th_rate;
        ls += s_rate;
        tx += tx_rate;
        ty += ty_rate;
        traj.theta[size_t(v)] = th;
        traj.log_scale[size_t(v)] = ls;
        traj.trans[size_t(v)] = {tx, ty};
        double s = std::exp(ls), c = std::cos(th), sn = std::sin(th);
        Affine2& A = traj.maps[size_t(v)];
        A.m[0] = float(s * c);
        A.m[1] = float(-s * sn);
        A.m[2] = float(s * sn);
        A.m[3] = float(s * c);
        A.tx = float(tx);
        A.ty = float(ty);
    }
    return traj;
}

void warp_frame(const float* src, int H, int W, int C, const Affine2& A, float* dst) {
    if (A.is_identity()) {
        std::copy(src, src + size_t(H) * W * C, dst);
        return;
    }
    const double cx = 0.5 * (W - 1), cy = 0.5 * (H - 1);
    const double det = double(A.m[0]) * A.m[3] - double(A.m[1]) * A.m[2];
    check(std::abs(det) > 1e-12, ErrCode::value, "affine map is singular");
    const double i00 = A.m[3] / det, i01 = -A.m[1] / det;
    const double i10 = -A.m[2] / det, i11 = A.m[0] / det;

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double px = x - cx - A.tx, py = y - cy - A.ty;
            double sx = i00 * px + i01 * py + cx;
            double sy = i10 * px + i11 * py + cy;
            sx = std::clamp(sx, 0.0, double(W - 1));
            sy = std::clamp(sy, 0.0, double(H - 1));
            int x0 = int(sx), y0 = int(sy);
            int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            double fx = sx - x0, fy = sy - y0;
            const float* p00 = src + (size_t(y0) * W + x0) * C;
            const float* p01 = src + (size_t(y0) * W + x1) * C;
            const float* p10 = src + (size_t(y1) * W + x0) * C;
            const float* p11 = src + (size_t(y1) * W + x1) * C;
            float* o = dst + (size_t(y) * W + x) * C;
            for (int ch = 0; ch < C; ++ch)
                o[ch] = float((1 - fy) * ((1 - fx) * p00[ch] + fx * p01[ch]) +
                              fy * ((1 - fx) * p10[ch] + fx * p11[ch]));
        }
}

FrameGrid pseudo_grid(const FrameGrid& video, const AffineTrajectory& traj) {
    const int V = int(traj.maps.size());
    const int T = int(video.frame_count());
    check(V >= 1, ErrCode::dimension, "trajectory is empty");
    FrameGrid g(V, T, video.H, video.W, video.C);
    for (int v = 0; v < V; ++v)
        for (int t = 0; t < T; ++t) {
            const float* f = video.data.data() + size_t(t) * video.frame_size();
            warp_frame(f, g.H, g.W, g.C, traj.maps[size_t(v)], g.frame(v, t));
        }
    return g;
}

// ------------------------------------------------------------------

void primitive_center(const Primitive& pr, int t, float* x, float* y) {
    double px = pr.cx, py = pr.cy;
    switch (pr.motion) {
        case MotionKind::none:
            break;
        case MotionKind::linear:
            px += double(pr.mp[0]) * t;
            py += double(pr.mp[1]) * t;
            break;
        case MotionKind::orbit: {
            double a = double(pr.mp[1]) + double(pr.mp[2]) * t;
            px += double(pr.mp[0]) * std::cos(a);
            py += double(pr.mp[0]) * std::sin(a);
            break;
        }
        case MotionKind::oscillate: {
            double s = std::sin(double(pr.mp[2]) + double(pr.mp[3]) * t);
            px += double(pr.mp[0]) * s;
            py += double(pr.mp[1]) * s;
            break;
        }
    }
    *x = float(px);
    *y = float(py);
}

static float primitive_sdf(const Primitive& pr, float px, float py, int t, float cx, float cy) {
    float dx = px - cx, dy = py - cy;
    float ang = pr.angle0 + pr.spin * float(t);
    float ca = std::cos(-ang), sa = std::sin(-ang);
    float rx = ca * dx - sa * dy, ry = sa * dx + ca * dy;
    switch (pr.kind) {
        case PrimKind::disc:
            return std::sqrt(rx * rx + ry * ry) - pr.size;
        case PrimKind::box: {
            float qx = std::abs(rx) - pr.size, qy = std::abs(ry) - pr.size * 0.75f;
            float ox = std::max(qx, 0.0f), oy = std::max(qy, 0.0f);
            return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0f);
        }
        case PrimKind::triangle: {
            // equilateral triangle of circumradius size
            const float k = std::sqrt(3.0f);
            float qx = std::abs(rx) - pr.size, qy = ry + pr.size / k;
            if (qx + k * qy > 0.0f) {
                float nx = (qx - k * qy) / 2.0f, ny = (-k * qx - qy) / 2.0f;
                qx = nx;
                qy = ny;
            }
            qx -= std::clamp(qx, -2.0f * pr.size, 0.0f);
            return -std::sqrt(qx * qx + qy * qy) * (qy < 0 ? -1.0f : 1.0f);
        }
    }
    return 1e9f;
}

SceneSpec sample_scene(Rng& rng, int H, int W, bool dynamic) {
    SceneSpec s;
    s.seed = rng.next_u64();
    for (int c = 0; c < 3; ++c) s.bg_top[c] = float(rng.uniform(0.05, 0.45));
    for (int c = 0; c < 3; ++c) s.bg_bottom[c] = float(rng.uniform(0.05, 0.45));
    s.arc_deg = float(rng.uniform(30.0, 50.0));
    s.parallax = float(rng.uniform(8.0, 14.0));
    s.base_azimuth_deg = 0;

    int n = 1 + int(rng.below(3));
    // distinct depth slots keep painter ordering well-defined
    std::vector<double> slots = {-0.55, -0.2, 0.25, 0.6};
    for (int i = int(slots.size()) - 1; i > 0; --i)
        std::swap(slots[size_t(i)], slots[rng.below(uint64_t(i) + 1)]);
    for (int i = 0; i < n; ++i) {
        Primitive p;
        p.kind = PrimKind(rng.below(3));
        p.depth = float(slots[size_t(i)] + rng.uniform(-0.05, 0.05));
        p.cx = float(rng.uniform(0.3, 0.7) * W);
        p.cy = float(rng.uniform(0.3, 0.7) * H);
        p.size = float(rng.uniform(0.09, 0.18) * std::min(H, W));
        for (int c = 0; c < 3; ++c) p.color[c] = float(rng.uniform(0.5, 1.0));
        p.angle0 = float(rng.uniform(0.0, 2.0 * kPi));
        if (dynamic) {
            p.spin = float(rng.uniform(-0.25, 0.25));
            p.motion = MotionKind(1 + rng.below(3));
            switch (p.motion) {
                case MotionKind::linear:
                    p.mp[0] = float(rng.uniform(-1.2, 1.2));
                    p.mp[1] = float(rng.uniform(-1.2, 1.2));
                    break;
                case MotionKind::orbit:
                    p.mp[0] = float(rng.uniform(0.05, 0.16) * std::min(H, W));  // radius
                    p.mp[1] = float(rng.uniform(0.0, 2.0 * kPi));               // phase
                    p.mp[2] = float(rng.uniform(-0.5, 0.5));                    // rate
                    break;
                case MotionKind::oscillate:
                    p.mp[0] = float(rng.uniform(-3.0, 3.0));
                    p.mp[1] = float(rng.uniform(-3.0, 3.0));
                    p.mp[2] = float(rng.uniform(0.0, 2.0 * kPi));
                    p.mp[3] = float(rng.uniform(0.3, 0.9));
                    break;
                default:
                    break;
            }
        }
        s.prims.push_back(p);
    }
    // far-to-near once; depths are distinct by construction
    std::sort(s.prims.begin(), s.prims.end(),
              [](const Primitive& a, const Primitive& b) { return a.depth > b.depth; });
    return s;
}

void render_frame(const SceneSpec& spec, int v, int V, int t, int H, int W, float* out) {
    const double step_deg = V > 1 ? double(spec.arc_deg) / (V - 1) : 0.0;
    const double azim = (double(spec.base_azimuth_deg) + step_deg * v) * kPi / 180.0;
    const double sweep = std::sin(azim);

    for (int y = 0; y < H; ++y) {
        float fy = H > 1 ? float(y) / float(H - 1) : 0.0f;
        for (int x = 0; x < W; ++x) {
            float* px = out + (size_t(y) * W + x) * 3;
            for (int c = 0; c < 3; ++c)
                px[c] = spec.bg_top[c] + (spec.bg_bottom[c] - spec.bg_top[c]) * fy;
        }
    }
    for (const Primitive& pr : spec.prims) {
        float cx, cy;
        primitive_center(pr, t, &cx, &cy);
        cx += float(double(spec.parallax) * pr.depth * sweep);
        // bounding box with soft edge margin
        float m = pr.size * 1.8f + 2.0f;
        int x0 = std::max(0, int(cx - m)), x1 = std::min(W - 1, int(cx + m) + 1);
        int y0 = std::max(0, int(cy - m)), y1 = std::min(H - 1, int(cy + m) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                float d = primitive_sdf(pr, float(x), float(y), t, cx, cy);
                float cov = std::clamp(0.5f - d, 0.0f, 1.0f);
                if (cov <= 0.0f) continue;
                float* px = out + (size_t(y) * W + x) * 3;
                for (int c = 0; c < 3; ++c) px[c] += cov * (pr.color[c] - px[c]);
            }
    }
    // keep values inside [0,1] against float round-off
    for (size_t i = 0; i < size_t(H) * W * 3; ++i) out[i] = std::clamp(out[i], 0.0f, 1.0f);
}

FrameGrid render_scene(const SceneSpec& spec, int V, int T, int H, int W) {
    FrameGrid g(V, T, H, W, 3);
    for (int v = 0; v < V; ++v)
        for (int t = 0; t < T; ++t) render_frame(spec, v, V, t, H, W, g.frame(v, t));
    return g;
}

// ------------------------------------------------------------------

namespace {
enum : uint64_t { kTagDynamic = 11, kTagFreeze = 12, kTagGrid = 13 };
}

BaseDatasets make_base_datasets(uint64_t seed, int n_dynamic, int n_freeze, int F, int H, int W) {
    BaseDatasets out;
    out.dynamic_videos.reserve(size_t(std::max(0, n_dynamic)));
    out.freeze_videos.reserve(size_t(std::max(0, n_freeze)));
    for (int i = 0; i < n_dynamic; ++i) {
        Rng rng(derive_seed(seed, kTagDynamic, uint64_t(i)));
        SceneSpec spec = sample_scene(rng, H, W, /*dynamic=*/true);
        // a single viewpoint somewhere on the ring
        spec.base_azimuth_deg = float(rng.uniform(0.0, spec.arc_deg));
        out.dynamic_videos.push_back({render_scene(spec, 1, F, H, W), false});
    }
    for (int i = 0; i < n_freeze; ++i) {
        Rng rng(derive_seed(seed, kTagFreeze, uint64_t(i)));
        SceneSpec spec = sample_scene(rng, H, W, /*dynamic=*/false);
        out.freeze_videos.push_back({render_scene(spec, F, 1, H, W), true});
    }
    return out;
}

std::vector<FrameGrid> make_grid_dataset(uint64_t seed, int count, int V, int T, int H, int W) {
    std::vector<FrameGrid> grids;
    grids.reserve(size_t(std::max(0, count)));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, kTagGrid, uint64_t(i)));
        SceneSpec spec = sample_scene(rng, H, W, /*dynamic=*/true);
        grids.push_back(render_scene(spec, V, T, H, W));
    }
    return grids;
}

}  // namespace gridflow
