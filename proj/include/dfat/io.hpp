#pragma once

// File formats shared by every module:
//  * array container  - "DFATARR1", u32 rank, u64 dims[rank], f64 row-major data
//  * tensor blob      - "DFATPAR1", u64 count, then per tensor
//                       u32 name length, name bytes, u64 rows, u64 cols, f64 row-major data
//  * key-value text   - one `key = value` per line, `#` comments, dotted keys
// All integers and doubles are little-endian.

#include "dfat/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dfat::io {

namespace fs = std::filesystem;

void write_array(const fs::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_array(const fs::path& path);

struct NamedTensor {
    std::string name;
    Eigen::MatrixXd value;
};

void write_tensors(const fs::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const fs::path& path);

class KeyValues {
public:
    KeyValues() = default;

    static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValues load(const fs::path& path);
    void save(const fs::path& path) const;
    std::string to_string() const;

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set(const std::string& key, const char* value) { values_[key] = value; }
    void set(const std::string& key, double value);
    void set(const std::string& key, std::int64_t value);
    void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
    void set(const std::string& key, std::uint64_t value);
    void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    std::uint64_t get_uint(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::string origin_ = "<memory>";
};

std::string format_double(double v);
std::vector<std::string> split(const std::string& text, char sep);
std::string trim(const std::string& text);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

// 64-bit FNV-1a over raw bytes, rendered as 16 hex digits.
class Fingerprint {
public:
    void update(const void* data, std::size_t bytes);
    void update(const std::string& s) { update(s.data(), s.size()); }
    void update(const Eigen::MatrixXd& m);
    std::string hex() const;

private:
    std::uint64_t state_ = 14695981039346656037ull;
};

}  // namespace dfat::io
