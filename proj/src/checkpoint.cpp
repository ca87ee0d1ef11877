#include "checkpoint.hpp"

#include <map>

namespace gridflow {

static constexpr char kMagic[4] = {'G', 'F', 'C', 'K'};
static constexpr uint32_t kVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const ParamSet<float>& params) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.str(meta.variant);
    w.str(meta.config_text);
    w.u32(uint32_t(params.items.size()));
    for (const auto* p : params.items) {
        w.str(p->name);
        w.u8(uint8_t(p->w.shape.size()));
        for (int d : p->w.shape) w.u32(uint32_t(d));
        for (float x : p->w.v) w.f32(x);
    }
    write_file_bytes(path, w.buf.data(), w.buf.size());
}

namespace {
struct RawCkpt {
    CheckpointMeta meta;
    // name -> (shape, offset into data buffer)
    std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> tensors;
};

RawCkpt read_all(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes.data(), bytes.size());
    char magic[4];
    r.raw(magic, 4);
    check(std::memcmp(magic, kMagic, 4) == 0, ErrCode::io,
          "not a gridflow checkpoint: " + path.string());
    uint32_t ver = r.u32();
    check(ver == kVersion, ErrCode::io, format("unsupported checkpoint version %u", ver));
    RawCkpt out;
    out.meta.variant = r.str();
    out.meta.config_text = r.str();
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        uint8_t nd = r.u8();
        std::vector<int> shape(nd);
        size_t count = 1;
        for (auto& d : shape) {
            d = int(r.u32());
            count *= size_t(d);
        }
        std::vector<float> data(count);
        for (auto& x : data) x = r.f32();
        out.tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    return out;
}
}  // namespace

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes.data(), bytes.size());
    char magic[4];
    r.raw(magic, 4);
    check(std::memcmp(magic, kMagic, 4) == 0, ErrCode::io,
          "not a gridflow checkpoint: " + path.string());
    uint32_t ver = r.u32();
    check(ver == kVersion, ErrCode::io, format("unsupported checkpoint version %u", ver));
    CheckpointMeta meta;
    meta.variant = r.str();
    meta.config_text = r.str();
    return meta;
}

void load_checkpoint_into(const std::filesystem::path& path, const ParamSet<float>& params,
                          bool strict) {
    RawCkpt raw = read_all(path);
    size_t used = 0;
    for (auto* p : params.items) {
        auto it = raw.tensors.find(p->name);
        check(it != raw.tensors.end(), ErrCode::io,
              "checkpoint is missing tensor '" + p->name + "': " + path.string());
        check(it->second.first == p->w.shape, ErrCode::dimension,
              "checkpoint tensor '" + p->name + "' has mismatched shape");
        p->w.v = it->second.second;
        ++used;
    }
    if (strict)
        check(used == raw.tensors.size(), ErrCode::io,
              format("checkpoint has %zu unused tensors", raw.tensors.size() - used));
}

}  // namespace gridflow
