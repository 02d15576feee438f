#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace blend {

/// File could not be opened, read or written, or its contents are malformed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Little-endian primitive writer over an ostream.
class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& os) : os_(os) {}

    void u8(std::uint8_t v) { put(&v, 1); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { put(s.data(), s.size()); }
    /// u32 length prefix followed by raw bytes.
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

private:
    template <typename U>
    void le(U v) {
        unsigned char buf[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        put(buf, sizeof(U));
    }
    void put(const void* p, std::size_t n) {
        os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!os_) throw IoError("write failed");
    }

    std::ostream& os_;
};

/// Little-endian primitive reader; throws IoError on truncation.
class BinaryReader {
public:
    explicit BinaryReader(std::istream& is) : is_(is) {}

    std::uint8_t u8() {
        std::uint8_t v;
        get(&v, 1);
        return v;
    }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        if (n) get(s.data(), n);
        return s;
    }
    std::string str(std::size_t max_len = 1u << 24) {
        const auto n = u32();
        if (n > max_len) throw IoError("string length " + std::to_string(n) + " exceeds limit");
        return bytes(n);
    }
    void expect_magic(std::string_view magic, std::string_view what) {
        if (bytes(magic.size()) != magic) throw IoError(std::string(what) + ": bad magic");
    }
    bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

private:
    template <typename U>
    U le() {
        unsigned char buf[sizeof(U)];
        get(buf, sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
        return v;
    }
    void get(void* p, std::size_t n) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) throw IoError("unexpected end of file");
    }

    std::istream& is_;
};

/// Provenance trailer appended to every binary artifact: "PROV" + text.
void write_provenance(BinaryWriter& w, std::string_view text);
std::string read_provenance(BinaryReader& r);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace blend
