#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace leq::io {

/// Little-endian byte sink.
class ByteWriter {
public:
    void put_bytes(std::string_view bytes);
    void put_u32(std::uint32_t v);
    void put_u64(std::uint64_t v);
    void put_f64(double v);
    void put_f64s(std::span<const double> values);

    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

/// Little-endian byte source; throws FormatError on truncation.
class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : data_(bytes) {}

    std::string_view get_bytes(std::size_t n);
    std::uint32_t get_u32();
    std::uint64_t get_u64();
    double get_f64();
    std::vector<double> get_f64s(std::size_t n);

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

/// Appends a CRC32 footer of everything written so far.
std::string seal_with_crc(const ByteWriter& w);

/// Verifies and strips the CRC32 footer; throws FormatError on mismatch.
std::string_view unseal_crc(std::string_view bytes);

}  // namespace leq::io
