#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridflow {

enum class ErrCode {
    invalid_argument,
    dimension,   // axis/shape problems
    value,       // out-of-range or non-finite values
    io,
    state,       // precondition on pipeline state (missing stage, bad variant)
    numeric,     // divergence / non-finite number mid-computation
};

struct Error : std::runtime_error {
    ErrCode code;
    Error(ErrCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

[[noreturn]] void fail(ErrCode code, const std::string& msg);

inline void check(bool ok, ErrCode code, const std::string& msg) {
    if (!ok) fail(code, msg);
}

std::string format(const char* fmt, ...);

// ------------------------------------------------------------------
// Deterministic RNG.
//
// All randomness in the project flows from one master seed. Independent
// streams (dataset items, training steps, sampler noise) are derived with
// splitmix64 over (seed, tag, index) so parallel producers stay bit-exact.

uint64_t splitmix64(uint64_t x);

inline uint64_t derive_seed(uint64_t master, uint64_t tag, uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ (0x9e3779b97f4a7c15ULL * (tag + 1))) + index);
}

struct Rng {
    uint64_t s[4];

    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s) si = x = splitmix64(x);
    }

    // xoshiro256++
    uint64_t next_u64() {
        auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const uint64_t result = rotl(s[0] + s[3], 23) + s[0];
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    uint64_t below(uint64_t n) { return next_u64() % n; }

    // standard normal via Box-Muller; pairs cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ------------------------------------------------------------------
// Parallel helpers.
//
// Work is split into a fixed number of chunks derived from the problem, not
// from the thread count, and any reductions run serially in chunk order.
// Results are therefore byte-identical no matter how many workers run.

int worker_threads();  // honors GRIDFLOW_THREADS

// Invokes fn(i) for i in [0,n) in parallel; fn must write disjoint state.
void parallel_for(int n, const std::function<void(int)>& fn);

// ------------------------------------------------------------------
// Small file helpers.

void write_file_bytes(const std::filesystem::path& p, const void* data, size_t n);
std::vector<uint8_t> read_file_bytes(const std::filesystem::path& p);
std::string read_file_text(const std::filesystem::path& p);
void write_file_text(const std::filesystem::path& p, const std::string& text);

struct ByteWriter {
    std::vector<uint8_t> buf;
    void raw(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) {
        uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
        raw(b, 4);
    }
    void u64(uint64_t v) {
        u32(uint32_t(v));
        u32(uint32_t(v >> 32));
    }
    void f32(float v) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
};

struct ByteReader {
    const uint8_t* p;
    size_t n;
    size_t off = 0;
    ByteReader(const void* data, size_t size) : p(static_cast<const uint8_t*>(data)), n(size) {}
    void raw(void* out, size_t k) {
        check(off + k <= n, ErrCode::io, "unexpected end of file");
        std::memcpy(out, p + off, k);
        off += k;
    }
    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint8_t b[4];
        raw(b, 4);
        return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
    }
    uint64_t u64() {
        uint64_t lo = u32(), hi = u32();
        return lo | hi << 32;
    }
    float f32() {
        uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str() {
        uint64_t k = u64();
        check(off + k <= n, ErrCode::io, "unexpected end of file");
        std::string s(reinterpret_cast<const char*>(p + off), k);
        off += k;
        return s;
    }
};

}  // namespace gridflow
