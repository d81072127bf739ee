#include "capsdet/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "capsdet/errors.hpp"

namespace capsdet {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

void put_u32(std::string& out, uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::string& out, uint64_t v) { put_bytes(out, &v, 8); }
void put_i64(std::string& out, int64_t v) { put_bytes(out, &v, 8); }
void put_f64(std::string& out, double v) { put_bytes(out, &v, 8); }

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

void put_tensor(std::string& out, const Tensor& t) {
    const Shape& s = t.shape();
    put_u32(out, static_cast<uint32_t>(s.size()));
    for (int d : s) put_u32(out, static_cast<uint32_t>(d));
    put_u64(out, static_cast<uint64_t>(t.size()));
    put_bytes(out, t.data(), static_cast<size_t>(t.size()) * sizeof(double));
}

struct Cursor {
    const uint8_t* p;
    size_t len;
    size_t off = 0;

    void need(size_t n) const {
        if (off + n > len) throw FormatError("checkpoint: unexpected end of data");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, p + off, 4);
        off += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, p + off, 8);
        off += 8;
        return v;
    }
    int64_t i64() {
        need(8);
        int64_t v;
        std::memcpy(&v, p + off, 8);
        off += 8;
        return v;
    }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, p + off, 8);
        off += 8;
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
    Tensor tensor() {
        uint32_t rank = u32();
        if (rank > 16) throw FormatError("checkpoint: implausible tensor rank");
        Shape shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(u32());
        uint64_t numel = u64();
        if (numel != static_cast<uint64_t>(shape_numel(shape)))
            throw FormatError("checkpoint: tensor size disagrees with shape");
        need(numel * sizeof(double));
        Tensor t(shape);
        std::memcpy(t.data(), p + off, numel * sizeof(double));
        off += numel * sizeof(double);
        return t;
    }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    if (ckpt.names.size() != ckpt.values.size() || ckpt.names.size() != ckpt.l2.size())
        throw ContractError("save_checkpoint: slot arrays disagree");
    if (!ckpt.adam_m.empty() &&
        (ckpt.adam_m.size() != ckpt.names.size() || ckpt.adam_v.size() != ckpt.names.size()))
        throw ContractError("save_checkpoint: optimizer moments must cover every slot");

    std::string body;
    put_bytes(body, kMagic, 8);
    put_u32(body, kVersion);
    put_str(body, ckpt.model_kind);
    put_str(body, ckpt.config_echo);
    put_i64(body, ckpt.step);
    put_u64(body, ckpt.rng_key);
    put_u64(body, ckpt.rng_counter);
    put_u32(body, static_cast<uint32_t>(ckpt.names.size()));
    for (size_t i = 0; i < ckpt.names.size(); ++i) {
        put_str(body, ckpt.names[i]);
        put_f64(body, ckpt.l2[i]);
        put_tensor(body, ckpt.values[i]);
    }
    body.push_back(ckpt.adam_m.empty() ? '\0' : '\x01');
    if (!ckpt.adam_m.empty()) {
        for (const Tensor& t : ckpt.adam_m) put_tensor(body, t);
        for (const Tensor& t : ckpt.adam_v) put_tensor(body, t);
    }

    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                      static_cast<uInt>(body.size()));
    put_u32(body, static_cast<uint32_t>(crc));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("cannot write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16) throw FormatError("checkpoint: file too short");
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("checkpoint: bad magic");

    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
                      static_cast<uInt>(bytes.size() - 4));
    if (static_cast<uint32_t>(crc) != stored_crc)
        throw FormatError("checkpoint: checksum mismatch (truncated or corrupt)");

    Cursor c{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size() - 4, 8};
    Checkpoint ckpt;
    ckpt.version = c.u32();
    if (ckpt.version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(ckpt.version));
    ckpt.model_kind = c.str();
    ckpt.config_echo = c.str();
    ckpt.step = c.i64();
    ckpt.rng_key = c.u64();
    ckpt.rng_counter = c.u64();
    uint32_t slots = c.u32();
    ckpt.names.reserve(slots);
    ckpt.values.reserve(slots);
    ckpt.l2.reserve(slots);
    for (uint32_t i = 0; i < slots; ++i) {
        ckpt.names.push_back(c.str());
        ckpt.l2.push_back(c.f64());
        ckpt.values.push_back(c.tensor());
    }
    c.need(1);
    bool has_moments = c.p[c.off++] != 0;
    if (has_moments) {
        for (uint32_t i = 0; i < slots; ++i) ckpt.adam_m.push_back(c.tensor());
        for (uint32_t i = 0; i < slots; ++i) ckpt.adam_v.push_back(c.tensor());
    }
    if (c.off != c.len) throw FormatError("checkpoint: trailing bytes");
    return ckpt;
}

}  // namespace capsdet
