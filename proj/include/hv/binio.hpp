#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hv/errors.hpp"

namespace hv {

// Little-endian byte buffer writer with a running FNV-1a 64 checksum over the
// payload bytes appended after mark_checksum_start().
class ByteWriter {
public:
    void put_bytes(const void* p, std::size_t n);
    void put_u8(std::uint8_t x) { put_bytes(&x, 1); }
    void put_u32(std::uint32_t x);
    void put_u64(std::uint64_t x);
    void put_f64(double x);
    void put_magic(const char* magic); // raw ASCII, no terminator

    void mark_checksum_start() { checksum_from_ = buf_.size(); }
    std::uint64_t checksum() const;

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t checksum_from_ = 0;
};

// Reader over a fully loaded file. Premature end of data throws
// ChecksumMismatch: the header promised more bytes than the file holds.
class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

    std::uint8_t get_u8();
    std::uint32_t get_u32();
    std::uint64_t get_u64();
    double get_f64();
    void expect_magic(const char* magic); // throws FormatVersionMismatch

    void mark_checksum_start() { checksum_from_ = pos_; }
    // FNV-1a of [checksum_from_, pos_)
    std::uint64_t checksum_so_far() const;

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const;

    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
    std::size_t checksum_from_ = 0;
};

std::uint64_t fnv1a64(const std::uint8_t* p, std::size_t n);

// Writes to path + ".tmp" and renames into place, so a failed write never
// leaves a partial file at path. Throws IoFailure.
void atomic_write_file(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

} // namespace hv
