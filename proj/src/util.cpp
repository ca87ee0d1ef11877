#include "util.hpp"

#include <omp.h>

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace gridflow {

void fail(ErrCode code, const std::string& msg) { throw Error(code, msg); }

std::string format(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list args2;
    va_copy(args2, args);
    int n = std::vsnprintf(nullptr, 0, fmt, args);
    va_end(args);
    std::string out(n > 0 ? size_t(n) : 0, '\0');
    if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
    va_end(args2);
    return out;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

int worker_threads() {
    static int cached = [] {
        int hw = int(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("GRIDFLOW_THREADS")) {
            int cap = std::atoi(env);
            if (cap > 0 && cap < hw) hw = cap;
        }
        return hw;
    }();
    return cached;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int threads = std::min(worker_threads(), n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr err;
#pragma omp parallel for num_threads(threads) schedule(static)
    for (int i = 0; i < n; ++i) {
        try {
            fn(i);
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
}

void write_file_bytes(const std::filesystem::path& p, const void* data, size_t n) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    check(f.good(), ErrCode::io, "cannot open for writing: " + p.string());
    f.write(static_cast<const char*>(data), std::streamsize(n));
    check(f.good(), ErrCode::io, "write failed: " + p.string());
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary | std::ios::ate);
    check(f.good(), ErrCode::io, "cannot open: " + p.string());
    std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> buf(size_t(n));
    f.read(reinterpret_cast<char*>(buf.data()), n);
    check(f.good(), ErrCode::io, "read failed: " + p.string());
    return buf;
}

std::string read_file_text(const std::filesystem::path& p) {
    auto b = read_file_bytes(p);
    return std::string(b.begin(), b.end());
}

void write_file_text(const std::filesystem::path& p, const std::string& text) {
    write_file_bytes(p, text.data(), text.size());
}

}  // namespace gridflow
