#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "mind/tensor.hpp"

// Checkpoint container: "MINDCKPT" magic, u32 format version, u32 tensor
// count, then per tensor (sorted by name): u32 name length, name bytes,
// u32 rank, u32 dims, row-major float32 little-endian payload; finally a
// u64-length-prefixed JSON metadata blob. save -> load -> save is
// byte-identical.

namespace mind {

inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'N', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    std::map<std::string, Tensor<float>> tensors;
    nlohmann::json metadata;
};

namespace ckpt_detail {

template <class T>
inline void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
inline T take(const std::string& in, size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const CheckpointData& data, const std::string& path) {
    std::string out;
    out.append(kCheckpointMagic, 8);
    ckpt_detail::put<std::uint32_t>(out, kCheckpointVersion);
    ckpt_detail::put<std::uint32_t>(out, std::uint32_t(data.tensors.size()));
    for (const auto& [name, t] : data.tensors) {
        ckpt_detail::put<std::uint32_t>(out, std::uint32_t(name.size()));
        out.append(name);
        ckpt_detail::put<std::uint32_t>(out, std::uint32_t(t.shape.size()));
        for (int d : t.shape) ckpt_detail::put<std::uint32_t>(out, std::uint32_t(d));
        out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
    }
    const std::string meta = data.metadata.dump();
    ckpt_detail::put<std::uint64_t>(out, std::uint64_t(meta.size()));
    out.append(meta);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw IoError("short write: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    size_t pos = 0;
    if (in.size() < 8 || std::memcmp(in.data(), kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic");
    pos = 8;
    const auto version = ckpt_detail::take<std::uint32_t>(in, pos);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = ckpt_detail::take<std::uint32_t>(in, pos);
    CheckpointData data;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = ckpt_detail::take<std::uint32_t>(in, pos);
        if (pos + name_len > in.size()) throw FormatError("checkpoint: truncated name");
        std::string name(in.data() + pos, name_len);
        pos += name_len;
        const auto rank = ckpt_detail::take<std::uint32_t>(in, pos);
        std::vector<int> shape(rank);
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = int(ckpt_detail::take<std::uint32_t>(in, pos));
            numel *= d;
        }
        if (pos + size_t(numel) * 4 > in.size()) throw FormatError("checkpoint: truncated tensor payload");
        Tensor<float> t;
        t.shape = std::move(shape);
        t.data.resize(size_t(numel));
        std::memcpy(t.data.data(), in.data() + pos, size_t(numel) * 4);
        pos += size_t(numel) * 4;
        data.tensors.emplace(std::move(name), std::move(t));
    }
    const auto meta_len = ckpt_detail::take<std::uint64_t>(in, pos);
    if (pos + meta_len > in.size()) throw FormatError("checkpoint: truncated metadata");
    data.metadata = nlohmann::json::parse(in.substr(pos, meta_len));
    return data;
}

}  // namespace mind
