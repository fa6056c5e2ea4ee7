#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace advlab::util {

// FNV-1a 64-bit. Used for content addressing and file checksums; not
// cryptographic.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(std::string_view s);

std::string to_hex(std::uint64_t v);

std::string read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, std::string_view data);
bool file_exists(const std::string& path);
std::uint64_t file_hash(const std::string& path);
void make_dirs(const std::string& path);

// Runs fn(i) for i in [0, n). Worker partitioning never changes results:
// every index is independent and output slots are disjoint.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

// Little-endian binary serialization for the model file format.
class ByteWriter {
public:
    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void bytes(const void* data, std::size_t len);
    void str(std::string_view s);  // u32 length + bytes
    const std::string& buffer() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string context);
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::string_view raw(std::size_t len);
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::size_t len);
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string context_;
};

}  // namespace advlab::util
