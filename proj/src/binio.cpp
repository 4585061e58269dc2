#include "hv/binio.hpp"

#include <cstring>
#include <fstream>

namespace hv {

std::uint64_t fnv1a64(const std::uint8_t* p, std::size_t n) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

void ByteWriter::put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::put_u32(std::uint32_t x) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(x >> (8 * i));
    put_bytes(b, 4);
}

void ByteWriter::put_u64(std::uint64_t x) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(x >> (8 * i));
    put_bytes(b, 8);
}

void ByteWriter::put_f64(double x) {
    std::uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(bits));
    put_u64(bits);
}

void ByteWriter::put_magic(const char* magic) {
    put_bytes(magic, std::strlen(magic));
}

std::uint64_t ByteWriter::checksum() const {
    return fnv1a64(buf_.data() + checksum_from_, buf_.size() - checksum_from_);
}

void ByteReader::need(std::size_t n) const {
    if (pos_ + n > buf_.size())
        throw ChecksumMismatch("truncated file: payload shorter than header promises");
}

std::uint8_t ByteReader::get_u8() {
    need(1);
    return buf_[pos_++];
}

std::uint32_t ByteReader::get_u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return x;
}

std::uint64_t ByteReader::get_u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return x;
}

double ByteReader::get_f64() {
    const std::uint64_t bits = get_u64();
    double x = 0.0;
    std::memcpy(&x, &bits, sizeof(x));
    return x;
}

void ByteReader::expect_magic(const char* magic) {
    const std::size_t n = std::strlen(magic);
    if (pos_ + n > buf_.size() ||
        std::memcmp(buf_.data() + pos_, magic, n) != 0)
        throw FormatVersionMismatch(std::string("bad magic, expected ") + magic);
    pos_ += n;
}

std::uint64_t ByteReader::checksum_so_far() const {
    return fnv1a64(buf_.data() + checksum_from_, pos_ - checksum_from_);
}

void atomic_write_file(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot open for write: " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoFailure("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoFailure("rename failed for: " + path.string());
    }
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    atomic_write_file(path, bytes);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open for read: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoFailure("read failed: " + path.string());
    return bytes;
}

} // namespace hv
