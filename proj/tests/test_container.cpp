#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "openparts/container.hpp"
#include "openparts/error.hpp"

namespace io = openparts::io;
using openparts::DataError;
using openparts::ParamError;
using openparts::Tensor2;

namespace {

// Independent encoder so the reader is checked against bytes the writer
// never produced.
struct ByteWriter {
    std::vector<uint8_t> b;

    void u8(uint8_t v) { b.push_back(v); }
    void u16(uint16_t v) {
        b.push_back(static_cast<uint8_t>(v & 0xff));
        b.push_back(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void header(uint32_t count) {
        b = {'F', 'T', 'E', 'N'};
        u16(1);
        u32(count);
    }
    void name(const std::string& s) {
        u16(static_cast<uint16_t>(s.size()));
        b.insert(b.end(), s.begin(), s.end());
    }
};

}  // namespace

TEST_CASE("container round trips floats through f32") {
    io::TensorFile tf;
    Tensor2 m(2, 3, {1.0, -2.5, 0.0, 1e-8, 3.14159265358979, -1e20});
    tf.put("m", m);
    tf.put_scalar("s", 0.1);

    auto bytes = io::to_bytes(tf);
    io::TensorFile back = io::read_bytes(bytes);

    Tensor2 got = back.matrix("m");
    REQUIRE(got.rows == 2);
    REQUIRE(got.cols == 3);
    for (int i = 0; i < 6; ++i) {
        double expect = static_cast<double>(static_cast<float>(m.data[i]));
        CHECK(got.data[i] == expect);
    }
    CHECK(back.scalar("s") == static_cast<double>(0.1f));
}

TEST_CASE("container serialization is stable after one narrowing pass") {
    io::TensorFile tf;
    Tensor2 m(1, 4, {0.1, 0.2, 0.3, 0.4});
    tf.put("weights", m);
    std::vector<int64_t> ids = {0, -1, 42};
    tf.put_i64("ids", {3}, ids.data());

    auto b1 = io::to_bytes(tf);
    auto b2 = io::to_bytes(io::read_bytes(b1));
    CHECK(b1 == b2);
}

TEST_CASE("container keeps i64 exact") {
    io::TensorFile tf;
    std::vector<int64_t> v = {0, 1, -1, INT64_MAX, INT64_MIN, 1234567890123456789LL};
    tf.put_i64("v", {static_cast<uint64_t>(v.size())}, v.data());
    auto back = io::read_bytes(io::to_bytes(tf));
    CHECK(back.ints("v") == v);
}

TEST_CASE("container ranks 0 through 3") {
    io::TensorFile tf;
    tf.put_scalar("r0", 7.5);
    std::vector<double> r1 = {1, 2, 3};
    tf.put("r1", {3}, r1.data());
    tf.put("r2", Tensor2(2, 2, {1, 2, 3, 4}));
    std::vector<double> r3 = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    tf.put("r3", {2, 2, 3}, r3.data());

    auto back = io::read_bytes(io::to_bytes(tf));
    CHECK(back.scalar("r0") == 7.5);

    Tensor2 m1 = back.matrix("r1");
    CHECK(m1.rows == 1);
    CHECK(m1.cols == 3);

    Tensor2 s0 = back.slice("r3", 0);
    Tensor2 s1 = back.slice("r3", 1);
    REQUIRE(s0.rows == 2);
    REQUIRE(s0.cols == 3);
    CHECK(s0.data == std::vector<double>({1, 2, 3, 4, 5, 6}));
    CHECK(s1.data == std::vector<double>({7, 8, 9, 10, 11, 12}));
    CHECK_THROWS_AS((void)back.slice("r3", 2), ParamError);
    CHECK_THROWS_AS((void)back.slice("r2", 0), ParamError);
}

TEST_CASE("container accessor type mismatches") {
    io::TensorFile tf;
    tf.put("f", Tensor2(1, 2, {2.0, 3.0}));
    std::vector<int64_t> one = {1};
    tf.put_i64("i", {1}, one.data());

    CHECK_THROWS_AS((void)tf.matrix("i"), ParamError);
    CHECK_THROWS_AS((void)tf.ints("f"), ParamError);
    CHECK_THROWS_AS((void)tf.scalar("f"), ParamError);
    CHECK_THROWS_AS((void)tf.at("missing"), ParamError);
    CHECK_THROWS_AS(tf.put("f", Tensor2(1, 1, {3.0})), ParamError);
}

TEST_CASE("container scalar accepts any single-element float entry") {
    io::TensorFile tf;
    std::vector<double> v = {4.25};
    tf.put("one", {1}, v.data());
    CHECK(tf.scalar("one") == 4.25);
}

TEST_CASE("container rejects bad magic at offset 0") {
    ByteWriter w;
    w.header(0);
    w.b[0] = 'X';
    try {
        io::read_bytes(w.b);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.offset == 0);
    }
}

TEST_CASE("container rejects unknown version at offset 4") {
    ByteWriter w;
    w.header(0);
    w.b[4] = 9;
    try {
        io::read_bytes(w.b);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.offset == 4);
    }
}

TEST_CASE("container rejects truncated payload") {
    io::TensorFile tf;
    tf.put("m", Tensor2(2, 2, {1, 2, 3, 4}));
    auto bytes = io::to_bytes(tf);
    bytes.resize(bytes.size() - 5);
    CHECK_THROWS_AS(io::read_bytes(bytes), DataError);

    // Cutting inside the header is also caught.
    std::vector<uint8_t> stub(bytes.begin(), bytes.begin() + 7);
    CHECK_THROWS_AS(io::read_bytes(stub), DataError);
}

TEST_CASE("container rejects duplicate names, offset at second name") {
    // Two rank-0 f32 entries, both named "aa".
    ByteWriter w;
    w.header(2);
    w.name("aa");
    w.u8(0);
    w.u8(0);
    w.f32(1.0f);
    uint64_t second_name_off = w.b.size() + 2;
    w.name("aa");
    w.u8(0);
    w.u8(0);
    w.f32(2.0f);
    try {
        io::read_bytes(w.b);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.offset == second_name_off);
    }
}

TEST_CASE("container rejects unknown dtype at its own offset") {
    ByteWriter w;
    w.header(1);
    w.name("x");
    uint64_t dtype_off = w.b.size();
    w.u8(7);
    w.u8(0);
    w.f32(0.0f);
    try {
        io::read_bytes(w.b);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.offset == dtype_off);
    }
}

TEST_CASE("container rejects rank above 3") {
    ByteWriter w;
    w.header(1);
    w.name("x");
    w.u8(0);
    uint64_t rank_off = w.b.size();
    w.u8(4);
    try {
        io::read_bytes(w.b);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.offset == rank_off);
    }
}

TEST_CASE("container rejects element count overflow before allocating") {
    ByteWriter w;
    w.header(1);
    w.name("x");
    w.u8(0);
    w.u8(2);
    w.u64(uint64_t(1) << 32);
    w.u64(uint64_t(1) << 32);
    CHECK_THROWS_AS(io::read_bytes(w.b), DataError);
}

TEST_CASE("container zero-size dims are legal") {
    ByteWriter w;
    w.header(1);
    w.name("empty");
    w.u8(0);
    w.u8(1);
    w.u64(0);
    io::TensorFile tf = io::read_bytes(w.b);
    CHECK(tf.at("empty").count() == 0);
}

TEST_CASE("container reader matches an independently encoded file") {
    ByteWriter w;
    w.header(2);
    w.name("vec");
    w.u8(0);
    w.u8(1);
    w.u64(2);
    w.f32(1.5f);
    w.f32(-2.0f);
    w.name("tags");
    w.u8(1);
    w.u8(1);
    w.u64(3);
    w.u64(static_cast<uint64_t>(int64_t(5)));
    w.u64(static_cast<uint64_t>(int64_t(-7)));
    w.u64(0);

    io::TensorFile tf = io::read_bytes(w.b);
    Tensor2 v = tf.matrix("vec");
    CHECK(v.data == std::vector<double>({1.5, -2.0}));
    CHECK(tf.ints("tags") == std::vector<int64_t>({5, -7, 0}));

    // And the writer emits the identical byte stream.
    CHECK(io::to_bytes(tf) == w.b);
}

TEST_CASE("container file writes are atomic and overwrite cleanly") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "openparts_container_test";
    fs::create_directories(dir);
    fs::path p = dir / "t.ften";

    io::TensorFile tf;
    tf.put("a", Tensor2(1, 2, {1, 2}));
    io::write_file(tf, p.string());
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));

    io::TensorFile tf2;
    tf2.put("a", Tensor2(1, 2, {9, 9}));
    io::write_file(tf2, p.string());
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));

    io::TensorFile back = io::read_file(p.string());
    CHECK(back.matrix("a").data == std::vector<double>({9, 9}));

    CHECK_THROWS_AS(io::read_file((dir / "absent.ften").string()), openparts::IoError);
    fs::remove_all(dir);
}
