#include "openparts/container.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>

#include "openparts/error.hpp"

namespace openparts::io {

namespace {

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back(static_cast<uint8_t>(v & 0xff));
    b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<uint8_t>& buf;
    uint64_t off = 0;

    void need(uint64_t n, const char* what) {
        if (off + n > buf.size())
            throw DataError(std::string("container truncated while reading ") + what, off);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(buf[off] | (buf[off + 1] << 8));
        off += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return buf[off++];
    }
};

constexpr uint64_t kMaxElements = uint64_t(1) << 33;

}  // namespace

bool TensorFile::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

const Entry& TensorFile::at(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw ParamError("container has no entry named '" + name + "'");
}

void TensorFile::put(const std::string& name, std::vector<uint64_t> dims, const double* data) {
    if (has(name)) throw ParamError("duplicate container entry '" + name + "'");
    Entry e;
    e.name = name;
    e.dtype = Entry::Dtype::F32;
    e.dims = std::move(dims);
    e.f64.assign(data, data + e.count());
    entries.push_back(std::move(e));
}

void TensorFile::put(const std::string& name, const Tensor2& t) {
    put(name, {static_cast<uint64_t>(t.rows), static_cast<uint64_t>(t.cols)}, t.data.data());
}

void TensorFile::put_scalar(const std::string& name, double v) { put(name, {}, &v); }

void TensorFile::put_i64(const std::string& name, std::vector<uint64_t> dims,
                         const int64_t* data) {
    if (has(name)) throw ParamError("duplicate container entry '" + name + "'");
    Entry e;
    e.name = name;
    e.dtype = Entry::Dtype::I64;
    e.dims = std::move(dims);
    e.i64.assign(data, data + e.count());
    entries.push_back(std::move(e));
}

Tensor2 TensorFile::matrix(const std::string& name) const {
    const Entry& e = at(name);
    if (e.dtype != Entry::Dtype::F32) throw ParamError("entry '" + name + "' is not float");
    int r = 1, c = 1;
    if (e.dims.size() == 1) {
        r = 1;
        c = static_cast<int>(e.dims[0]);
    } else if (e.dims.size() == 2) {
        r = static_cast<int>(e.dims[0]);
        c = static_cast<int>(e.dims[1]);
    } else if (e.dims.size() > 2) {
        throw ParamError("entry '" + name + "' has rank > 2");
    }
    return Tensor2(r, c, e.f64);
}

Tensor2 TensorFile::slice(const std::string& name, uint64_t index) const {
    const Entry& e = at(name);
    if (e.dtype != Entry::Dtype::F32 || e.dims.size() != 3)
        throw ParamError("entry '" + name + "' is not a rank-3 float tensor");
    if (index >= e.dims[0]) throw ParamError("slice index out of range for '" + name + "'");
    int r = static_cast<int>(e.dims[1]);
    int c = static_cast<int>(e.dims[2]);
    Tensor2 out(r, c);
    size_t base = static_cast<size_t>(index) * r * c;
    std::copy(e.f64.begin() + base, e.f64.begin() + base + static_cast<size_t>(r) * c,
              out.data.begin());
    return out;
}

std::vector<int64_t> TensorFile::ints(const std::string& name) const {
    const Entry& e = at(name);
    if (e.dtype != Entry::Dtype::I64) throw ParamError("entry '" + name + "' is not i64");
    return e.i64;
}

double TensorFile::scalar(const std::string& name) const {
    const Entry& e = at(name);
    if (e.dtype != Entry::Dtype::F32 || e.count() != 1)
        throw ParamError("entry '" + name + "' is not a scalar");
    return e.f64[0];
}

std::vector<uint8_t> to_bytes(const TensorFile& tf) {
    std::vector<uint8_t> b;
    b.push_back('F');
    b.push_back('T');
    b.push_back('E');
    b.push_back('N');
    put_u16(b, kContainerVersion);
    put_u32(b, static_cast<uint32_t>(tf.entries.size()));
    for (const auto& e : tf.entries) {
        if (e.name.size() > 0xffff) throw ParamError("entry name too long");
        if (e.dims.size() > 3) throw ParamError("entry rank > 3");
        put_u16(b, static_cast<uint16_t>(e.name.size()));
        b.insert(b.end(), e.name.begin(), e.name.end());
        b.push_back(static_cast<uint8_t>(e.dtype));
        b.push_back(static_cast<uint8_t>(e.dims.size()));
        for (uint64_t d : e.dims) put_u64(b, d);
        if (e.dtype == Entry::Dtype::F32) {
            for (double v : e.f64) {
                float f = static_cast<float>(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                put_u32(b, bits);
            }
        } else {
            for (int64_t v : e.i64) put_u64(b, static_cast<uint64_t>(v));
        }
    }
    return b;
}

TensorFile read_bytes(const std::vector<uint8_t>& buf) {
    Reader r{buf};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), "FTEN", 4) != 0)
        throw DataError("bad container magic", 0);
    r.off = 4;
    uint64_t version_off = r.off;
    uint16_t version = r.u16("version");
    if (version != kContainerVersion)
        throw DataError("unsupported container version " + std::to_string(version), version_off);
    uint32_t count = r.u32("entry count");

    TensorFile tf;
    std::set<std::string> seen;
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        uint16_t name_len = r.u16("name length");
        r.need(name_len, "name");
        e.name.assign(reinterpret_cast<const char*>(buf.data() + r.off), name_len);
        r.off += name_len;
        if (!seen.insert(e.name).second)
            throw DataError("duplicate entry name '" + e.name + "'", r.off - name_len);

        uint64_t dtype_off = r.off;
        uint8_t dtype = r.u8("dtype");
        if (dtype > 1) throw DataError("unknown dtype " + std::to_string(dtype), dtype_off);
        e.dtype = static_cast<Entry::Dtype>(dtype);

        uint64_t rank_off = r.off;
        uint8_t rank = r.u8("rank");
        if (rank > 3) throw DataError("rank " + std::to_string(rank) + " exceeds 3", rank_off);

        uint64_t n = 1;
        for (uint8_t a = 0; a < rank; ++a) {
            uint64_t d = r.u64("dims");
            if (d != 0 && n > kMaxElements / std::max<uint64_t>(d, 1))
                throw DataError("entry size overflow", r.off - 8);
            e.dims.push_back(d);
            n *= d;
        }

        if (e.dtype == Entry::Dtype::F32) {
            r.need(n * 4, "f32 payload");
            e.f64.resize(n);
            for (uint64_t k = 0; k < n; ++k) {
                uint32_t bits = 0;
                for (int byte = 0; byte < 4; ++byte)
                    bits |= static_cast<uint32_t>(buf[r.off + k * 4 + byte]) << (8 * byte);
                float f;
                std::memcpy(&f, &bits, 4);
                e.f64[k] = static_cast<double>(f);
            }
            r.off += n * 4;
        } else {
            r.need(n * 8, "i64 payload");
            e.i64.resize(n);
            for (uint64_t k = 0; k < n; ++k) {
                uint64_t bits = 0;
                for (int byte = 0; byte < 8; ++byte)
                    bits |= static_cast<uint64_t>(buf[r.off + k * 8 + byte]) << (8 * byte);
                e.i64[k] = static_cast<int64_t>(bits);
            }
            r.off += n * 8;
        }
        tf.entries.push_back(std::move(e));
    }
    return tf;
}

void write_file(const TensorFile& tf, const std::string& path) {
    auto bytes = to_bytes(tf);
    std::filesystem::path target(path);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    FILE* f = std::fopen(tmp.string().c_str(), "wb");
    if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
    size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    int rc = std::fclose(f);
    if (written != bytes.size() || rc != 0) {
        std::filesystem::remove(tmp);
        throw IoError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
    }
}

TensorFile read_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open '" + path + "'");
    std::fseek(f, 0, SEEK_END);
    long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> buf(sz > 0 ? static_cast<size_t>(sz) : 0);
    size_t got = buf.empty() ? 0 : std::fread(buf.data(), 1, buf.size(), f);
    std::fclose(f);
    if (got != buf.size()) throw IoError("short read from '" + path + "'");
    return read_bytes(buf);
}

}  // namespace openparts::io
