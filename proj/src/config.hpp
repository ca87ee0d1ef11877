#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "util.hpp"

namespace gridflow {

// Flat `key = value` run configuration with section prefixes. Every field
// has a default; files with any keys must state the config version.
struct RunConfig {
    std::string version = "1";

    // model
    int L = 8, D = 128, heads = 4, p = 8;
    int H = 32, W = 32, V = 8, T = 8;

    // flow
    int steps = 50;           // sampler Euler steps
    double rho = 0.2;         // per-frame conditioning probability
    double q = 0.3;           // probability of the unconditional mask
    double lr = 1e-3;
    int iters_base = 12000;
    int iters_stage_a = 20000;
    int iters_stage_b = 3000;
    int batch = 8;            // base-model batch
    int batch_4d = 1;         // grid batch

    // data
    int videos_dynamic = 256;
    int videos_freeze = 128;
    int scenes = 256;              // 4D training grids
    double traj_theta_max = 4.0;   // degrees per view step
    double traj_scale_max = 0.03;  // |d log s| per view step
    double traj_trans_max = 2.0;   // pixels per view step

    std::string variant = "soft";
    uint64_t seed = 0;
    std::string out = "out";

    void validate() const;
    std::string serialize() const;  // canonical key = value text
};

// Parses a config file; unknown keys, type mismatches and a missing version
// are errors that name the offending line. An empty file yields defaults.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

// Run manifest: the effective config echoed back plus run.* bookkeeping
// keys; loadable as a config again.
void save_manifest(const RunConfig& cfg, const std::map<std::string, std::string>& run_extras,
                   const std::filesystem::path& path);

std::string build_id();

}  // namespace gridflow
