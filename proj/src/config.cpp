#include "config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

namespace gridflow {

std::string build_id() {
#ifdef GRIDFLOW_BUILD_ID
    return GRIDFLOW_BUILD_ID;
#else
    return "unknown";
#endif
}

namespace {

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, int line)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, int line,
                            const char* want) {
    fail(ErrCode::invalid_argument,
         format("config line %d: key '%s' expects %s, got '%s'", line, key.c_str(), want,
                value.c_str()));
}

int64_t parse_int(const std::string& key, const std::string& v, int line) {
    int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, line, "an integer");
    return out;
}

double parse_double(const std::string& key, const std::string& v, int line) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(out)) bad_value(key, v, line, "a number");
        return out;
    } catch (const std::exception&) {
        bad_value(key, v, line, "a number");
    }
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

#define INT_FIELD(key, member)                                                       \
    Field{key, [](const RunConfig& c) { return std::to_string(c.member); },          \
          [](RunConfig& c, const std::string& v, int line) {                         \
              c.member = int(parse_int(key, v, line));                               \
          }}
#define DBL_FIELD(key, member)                                              \
    Field{key, [](const RunConfig& c) { return fmt_double(c.member); },     \
          [](RunConfig& c, const std::string& v, int line) {                \
              c.member = parse_double(key, v, line);                        \
          }}
#define STR_FIELD(key, member)                                      \
    Field{key, [](const RunConfig& c) { return c.member; },         \
          [](RunConfig& c, const std::string& v, int) { c.member = v; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        STR_FIELD("version", version),
        INT_FIELD("model.L", L),
        INT_FIELD("model.D", D),
        INT_FIELD("model.heads", heads),
        INT_FIELD("model.p", p),
        INT_FIELD("model.H", H),
        INT_FIELD("model.W", W),
        INT_FIELD("model.V", V),
        INT_FIELD("model.T", T),
        INT_FIELD("flow.steps", steps),
        DBL_FIELD("flow.rho", rho),
        DBL_FIELD("flow.q", q),
        DBL_FIELD("flow.lr", lr),
        INT_FIELD("flow.iters_base", iters_base),
        INT_FIELD("flow.iters_stage_a", iters_stage_a),
        INT_FIELD("flow.iters_stage_b", iters_stage_b),
        INT_FIELD("flow.batch", batch),
        INT_FIELD("flow.batch_4d", batch_4d),
        INT_FIELD("data.videos_dynamic", videos_dynamic),
        INT_FIELD("data.videos_freeze", videos_freeze),
        INT_FIELD("data.scenes", scenes),
        DBL_FIELD("data.traj_theta_max", traj_theta_max),
        DBL_FIELD("data.traj_scale_max", traj_scale_max),
        DBL_FIELD("data.traj_trans_max", traj_trans_max),
        STR_FIELD("variant", variant),
        Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
              [](RunConfig& c, const std::string& v, int line) {
                  c.seed = uint64_t(parse_int("seed", v, line));
              }},
        STR_FIELD("out", out),
    };
    return f;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::validate() const {
    check(version == "1", ErrCode::invalid_argument,
          "unsupported config version '" + version + "' (expected 1)");
    check(L >= 1, ErrCode::invalid_argument, "model.L must be >= 1");
    check(D >= 1 && heads >= 1 && D % heads == 0, ErrCode::invalid_argument,
          "model.D must be a positive multiple of model.heads");
    check(p >= 1 && H >= 1 && W >= 1 && H % p == 0 && W % p == 0, ErrCode::invalid_argument,
          "model.H and model.W must be positive multiples of model.p");
    check(V >= 1 && T >= 1, ErrCode::invalid_argument, "model.V and model.T must be >= 1");
    check(steps >= 1, ErrCode::invalid_argument, "flow.steps must be >= 1");
    check(rho >= 0.0 && rho <= 1.0, ErrCode::invalid_argument, "flow.rho must be in [0,1]");
    check(q >= 0.0 && q <= 1.0, ErrCode::invalid_argument, "flow.q must be in [0,1]");
    check(lr > 0.0, ErrCode::invalid_argument, "flow.lr must be positive");
    check(iters_base >= 0 && iters_stage_a >= 0 && iters_stage_b >= 0, ErrCode::invalid_argument,
          "iteration counts must be >= 0");
    check(batch >= 1 && batch_4d >= 1, ErrCode::invalid_argument, "batch sizes must be >= 1");
    check(videos_dynamic >= 0 && videos_freeze >= 0 && scenes >= 0, ErrCode::invalid_argument,
          "data counts must be >= 0");
    check(traj_theta_max >= 0 && traj_scale_max >= 0 && traj_trans_max >= 0,
          ErrCode::invalid_argument, "trajectory bounds must be >= 0");
    bool known_variant = false;
    for (const char* v : {"soft", "hard", "free_soft", "free_hard", "sequential"})
        if (variant == v) known_variant = true;
    check(known_variant, ErrCode::invalid_argument, "unknown variant '" + variant + "'");
}

std::string RunConfig::serialize() const {
    std::string out_text;
    for (const auto& f : fields()) {
        out_text += f.key;
        out_text += " = ";
        out_text += f.get(*this);
        out_text += "\n";
    }
    return out_text;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool saw_version = false;
    int first_key_line = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        check(eq != std::string::npos, ErrCode::invalid_argument,
              format("%s line %d: expected 'key = value'", origin.c_str(), lineno));
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (first_key_line == 0) first_key_line = lineno;
        if (key == "version") saw_version = true;
        if (key.rfind("run.", 0) == 0) continue;  // manifest bookkeeping, informational
        bool found = false;
        for (const auto& f : fields())
            if (key == f.key) {
                f.set(cfg, value, lineno);
                found = true;
                break;
            }
        check(found, ErrCode::invalid_argument,
              format("%s line %d: unknown config key '%s'", origin.c_str(), lineno, key.c_str()));
    }
    if (first_key_line > 0 && !saw_version)
        fail(ErrCode::invalid_argument,
             format("%s line %d: config file does not declare a version", origin.c_str(),
                    first_key_line));
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    return parse_config_text(read_file_text(path), path.string());
}

void save_manifest(const RunConfig& cfg, const std::map<std::string, std::string>& run_extras,
                   const std::filesystem::path& path) {
    std::string text = "# run manifest; loadable as a config\n";
    text += cfg.serialize();
    for (const auto& [k, v] : run_extras) text += "run." + k + " = " + v + "\n";
    write_file_text(path, text);
}

}  // namespace gridflow
