#include "metacl/codec.hpp"

#include <cstring>
#include <fstream>

#include "metacl/errors.hpp"

namespace metacl {

bool trainable_by_name(std::string_view name) {
    auto ends_with = [&](std::string_view suf) {
        return name.size() >= suf.size() && name.substr(name.size() - suf.size()) == suf;
    };
    return !ends_with(".running_mean") && !ends_with(".running_var");
}

Tensor& ParamSet::at(std::string_view name) {
    for (auto& e : entries) {
        if (e.name == name) return e.value;
    }
    throw ContractError("no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamSet::at(std::string_view name) const {
    for (const auto& e : entries) {
        if (e.name == name) return e.value;
    }
    throw ContractError("no parameter named '" + std::string(name) + "'");
}

bool ParamSet::has(std::string_view name) const {
    for (const auto& e : entries) {
        if (e.name == name) return true;
    }
    return false;
}

int64_t ParamSet::total_len() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
}

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (size_t i = 0; i < a.entries.size(); ++i) {
        if (a.entries[i].name != b.entries[i].name) return false;
        if (!bitwise_equal(a.entries[i].value, b.entries[i].value)) return false;
    }
    return true;
}

WeightVector flatten(const ParamSet& params) {
    WeightVector w;
    w.values.reserve(size_t(params.total_len()));
    for (const auto& e : params.entries) {
        w.manifest.push_back({e.name, e.value.shape});
        w.values.insert(w.values.end(), e.value.data.begin(), e.value.data.end());
    }
    return w;
}

ParamSet unflatten(const WeightVector& w) {
    int64_t expected = 0;
    for (const auto& m : w.manifest) expected += shape_numel(m.shape);
    if (expected != w.total_len()) {
        throw FormatError(FormatError::Kind::LengthMismatch,
                          "weight vector length " + std::to_string(w.total_len()) +
                              " does not match manifest total " + std::to_string(expected));
    }
    ParamSet p;
    int64_t off = 0;
    for (const auto& m : w.manifest) {
        int64_t n = shape_numel(m.shape);
        Tensor t = Tensor::from(
            m.shape, std::vector<double>(w.values.begin() + off, w.values.begin() + off + n));
        p.entries.push_back({m.name, std::move(t), trainable_by_name(m.name)});
        off += n;
    }
    return p;
}

ChunkSet chunk(const WeightVector& w, int64_t chunk_size) {
    if (chunk_size < 1) throw ContractError("chunk: chunk_size must be >= 1");
    ChunkSet c;
    c.chunk_size = chunk_size;
    c.manifest = w.manifest;
    int64_t total = w.total_len();
    int64_t num_chunks = (total + chunk_size - 1) / chunk_size;
    c.pad_len = num_chunks * chunk_size - total;
    c.chunks.reserve(size_t(num_chunks));
    for (int64_t i = 0; i < num_chunks; ++i) {
        std::vector<double> one(size_t(chunk_size), 0.0);
        int64_t start = i * chunk_size;
        int64_t count = std::min(chunk_size, total - start);
        std::copy(w.values.begin() + start, w.values.begin() + start + count, one.begin());
        c.chunks.push_back(std::move(one));
    }
    return c;
}

WeightVector unchunk(const ChunkSet& c) {
    if (c.pad_len < 0 || c.pad_len >= c.chunk_size || (c.chunks.empty() && c.pad_len != 0)) {
        throw FormatError(FormatError::Kind::CorruptField,
                          "unchunk: pad_len " + std::to_string(c.pad_len) +
                              " invalid for chunk_size " + std::to_string(c.chunk_size));
    }
    for (const auto& one : c.chunks) {
        if (int64_t(one.size()) != c.chunk_size) {
            throw FormatError(FormatError::Kind::LengthMismatch,
                              "unchunk: chunk of length " + std::to_string(one.size()) +
                                  " in a chunk set of size " + std::to_string(c.chunk_size));
        }
    }
    WeightVector w;
    w.manifest = c.manifest;
    int64_t total = int64_t(c.chunks.size()) * c.chunk_size - c.pad_len;
    w.values.reserve(size_t(total));
    for (const auto& one : c.chunks) {
        w.values.insert(w.values.end(), one.begin(), one.end());
    }
    w.values.resize(size_t(total));
    return w;
}

namespace {

constexpr char kMagic[4] = {'M', 'C', 'W', 'T'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw FormatError(FormatError::Kind::Truncated,
                              std::string("checkpoint truncated while reading ") + what);
        }
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return uint8_t(buf[pos++]);
    }
    double f64(const char* what) {
        need(8, what);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= uint64_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_u32(out, uint32_t(params.entries.size()));
    for (const auto& e : params.entries) {
        put_u16(out, uint16_t(e.name.size()));
        out.append(e.name);
        out.push_back(char(e.value.shape.size()));
        for (int64_t d : e.value.shape) put_u32(out, uint32_t(d));
    }
    for (const auto& e : params.entries) {
        for (double v : e.value.data) put_f64(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw Error("write failed for '" + path + "'");
}

ParamSet load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "' for reading");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    std::string magic = r.bytes(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::BadMagic, "not a checkpoint file: bad magic");
    }
    uint16_t version = r.u16("version");
    if (version != kVersion) {
        throw FormatError(FormatError::Kind::BadVersion,
                          "unsupported checkpoint version " + std::to_string(version));
    }
    uint32_t count = r.u32("entry count");
    ParamSet p;
    int64_t total = 0;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = r.u16("name length");
        std::string name = r.bytes(name_len, "name");
        uint8_t rank = r.u8("rank");
        Shape shape;
        for (uint8_t d = 0; d < rank; ++d) shape.push_back(int64_t(r.u32("dim")));
        total += shape_numel(shape);
        p.entries.push_back({std::move(name), Tensor::zeros(shape), true});
    }
    if (buf.size() - r.pos != size_t(total) * 8) {
        throw FormatError(FormatError::Kind::LengthMismatch,
                          "checkpoint data section is " + std::to_string(buf.size() - r.pos) +
                              " bytes, manifest requires " + std::to_string(total * 8));
    }
    for (auto& e : p.entries) {
        for (auto& v : e.value.data) v = r.f64("value");
        e.trainable = trainable_by_name(e.name);
    }
    return p;
}

}  // namespace metacl
