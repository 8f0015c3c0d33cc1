#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "openparts/tensor.hpp"

namespace openparts::io {

// Binary tensor container.
//
// Layout, all integers little-endian:
//   magic   "FTEN" (4 bytes)
//   version u16, currently 1
//   count   u32
//   then per entry:
//     name_len u16, name bytes (UTF-8, unique within the file)
//     dtype    u8: 0 = f32, 1 = i64
//     rank     u8: 0..3 (rank 0 is a scalar with an empty dim list)
//     dims     u64 per axis
//     payload  dense row-major values
//
// Floats are stored as f32 on disk and widened to f64 in memory.
struct Entry {
    enum class Dtype : uint8_t { F32 = 0, I64 = 1 };

    std::string name;
    Dtype dtype = Dtype::F32;
    std::vector<uint64_t> dims;
    std::vector<double> f64;
    std::vector<int64_t> i64;

    uint64_t count() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
};

struct TensorFile {
    std::vector<Entry> entries;

    bool has(const std::string& name) const;
    const Entry& at(const std::string& name) const;

    // Appends a float entry; data is converted to f32 on write.
    void put(const std::string& name, std::vector<uint64_t> dims, const double* data);
    void put(const std::string& name, const Tensor2& t);
    void put_scalar(const std::string& name, double v);
    void put_i64(const std::string& name, std::vector<uint64_t> dims, const int64_t* data);

    // Reads a rank-2 (or rank-0/1) float entry as a matrix.
    Tensor2 matrix(const std::string& name) const;
    // Slice `index` of a rank-3 float entry, as a dims[1] x dims[2] matrix.
    Tensor2 slice(const std::string& name, uint64_t index) const;
    std::vector<int64_t> ints(const std::string& name) const;
    double scalar(const std::string& name) const;
};

constexpr uint16_t kContainerVersion = 1;

// Serializes to a temporary file in the destination directory, then renames.
void write_file(const TensorFile& tf, const std::string& path);
TensorFile read_file(const std::string& path);

// Same encoding, in memory. read_bytes throws DataError with the offending
// byte offset on malformed input.
std::vector<uint8_t> to_bytes(const TensorFile& tf);
TensorFile read_bytes(const std::vector<uint8_t>& buf);

}  // namespace openparts::io
