#pragma once

#include "grid.hpp"

namespace gridflow {

// 2D affine map: dest = M * src + t, coordinates relative to frame center.
struct Affine2 {
    float m[4] = {1, 0, 0, 1};  // row-major 2x2
    float tx = 0, ty = 0;

    static Affine2 identity() { return {}; }
    bool is_identity() const {
        return m[0] == 1 && m[1] == 0 && m[2] == 0 && m[3] == 1 && tx == 0 && ty == 0;
    }
};

struct TrajectoryBounds {
    double theta_max_deg = 4.0;   // per-step rotation
    double log_scale_max = 0.03;  // per-step |d log s|
    double trans_max = 2.0;       // per-step translation norm, pixels
};

// Per-view affine maps built by integrating smoothly varying increments;
// A_0 is always the identity.
struct AffineTrajectory {
    std::vector<Affine2> maps;
    // integration state per step, kept for property checks
    std::vector<double> theta, log_scale;
    std::vector<std::pair<double, double>> trans;
};

AffineTrajectory sample_trajectory(Rng& rng, int V, const TrajectoryBounds& bounds);

// Warps one frame: out(p) = in(A^{-1}(p)), bilinear sampling, edge clamp.
void warp_frame(const float* src, int H, int W, int C, const Affine2& A, float* dst);

// grid[v][t] = warp(video[t], A_v). The video is any grid with V*T == frame
// count read in storage order (rows of a 1xT grid, columns of a Vx1 grid).
FrameGrid pseudo_grid(const FrameGrid& video, const AffineTrajectory& traj);

// ------------------------------------------------------------------
// Procedural scenes: a handful of soft-edged primitives over a background
// gradient, viewed from a ring of cameras with horizontal parallax
// proportional to depth. Depth 0 sits on the fixation plane (zero parallax).

enum class PrimKind { disc, box, triangle };
enum class MotionKind { none, linear, orbit, oscillate };

struct Primitive {
    PrimKind kind = PrimKind::disc;
    float depth = 0;        // parallax scale; painter order: far (large) first
    float cx = 0, cy = 0;   // base position, pixels
    float size = 4;         // radius / half-extent, pixels
    float color[3] = {1, 1, 1};
    float angle0 = 0, spin = 0;  // radians, radians per timestep
    MotionKind motion = MotionKind::none;
    float mp[4] = {0, 0, 0, 0};  // motion params (per kind)
};

struct SceneSpec {
    std::vector<Primitive> prims;
    float bg_top[3] = {0, 0, 0};
    float bg_bottom[3] = {0, 0, 0};
    float arc_deg = 40;        // camera ring arc across V views
    float parallax = 10;       // horizontal pixels per unit depth at sin=1
    float base_azimuth_deg = 0;
    uint64_t seed = 0;
};

// Position of a primitive at time t (deterministic, closed form).
void primitive_center(const Primitive& pr, int t, float* x, float* y);

SceneSpec sample_scene(Rng& rng, int H, int W, bool dynamic);

// Renders frame (v,t): primitives at their motion positions, shifted
// horizontally by parallax * depth * sin(azimuth_v), painter-composited
// far-to-near over the background gradient.
void render_frame(const SceneSpec& spec, int v, int V, int t, int H, int W, float* out);

FrameGrid render_scene(const SceneSpec& spec, int V, int T, int H, int W);

// ------------------------------------------------------------------
// Dataset assembly.

struct VideoItem {
    FrameGrid frames;  // 1xT (dynamic) or Vx1 (freeze-time)
    bool freeze = false;
};

struct BaseDatasets {
    std::vector<VideoItem> dynamic_videos;
    std::vector<VideoItem> freeze_videos;
};

// dynamic set: single-view renders of moving scenes; freeze set: ring sweeps
// of static scenes. Item seeds derive from (seed, kind, index).
BaseDatasets make_base_datasets(uint64_t seed, int n_dynamic, int n_freeze, int F, int H, int W);

std::vector<FrameGrid> make_grid_dataset(uint64_t seed, int count, int V, int T, int H, int W);

}  // namespace gridflow
