#include "leq/binary_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "leq/errors.hpp"

namespace leq::io {

namespace {

template <class T>
T to_little(T v)
{
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

}  // namespace

void ByteWriter::put_bytes(std::string_view bytes) { buf_.append(bytes); }

void ByteWriter::put_u32(std::uint32_t v)
{
    v = to_little(v);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void ByteWriter::put_u64(std::uint64_t v)
{
    v = to_little(v);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void ByteWriter::put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::put_f64s(std::span<const double> values)
{
    for (double v : values) put_f64(v);
}

std::string_view ByteReader::get_bytes(std::size_t n)
{
    if (n > remaining()) throw FormatError("truncated file");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::uint32_t ByteReader::get_u32()
{
    std::uint32_t v;
    std::memcpy(&v, get_bytes(sizeof v).data(), sizeof v);
    return to_little(v);
}

std::uint64_t ByteReader::get_u64()
{
    std::uint64_t v;
    std::memcpy(&v, get_bytes(sizeof v).data(), sizeof v);
    return to_little(v);
}

double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

std::vector<double> ByteReader::get_f64s(std::size_t n)
{
    if (n > remaining() / 8) throw FormatError("truncated file");
    std::vector<double> out(n);
    for (auto& v : out) v = get_f64();
    return out;
}

std::uint32_t crc32(std::string_view bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write to '" + path + "' failed");
}

std::string seal_with_crc(const ByteWriter& w)
{
    ByteWriter out;
    out.put_bytes(w.bytes());
    out.put_u32(crc32(w.bytes()));
    return out.bytes();
}

std::string_view unseal_crc(std::string_view bytes)
{
    if (bytes.size() < 4) throw FormatError("truncated file: missing checksum");
    const auto body = bytes.substr(0, bytes.size() - 4);
    ByteReader footer(bytes.substr(bytes.size() - 4));
    if (footer.get_u32() != crc32(body)) throw FormatError("checksum mismatch");
    return body;
}

}  // namespace leq::io
