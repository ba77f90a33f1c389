#include "dfat/io.hpp"

#include "dfat/errors.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace dfat::io {

namespace {

constexpr char kArrayMagic[8] = {'D', 'F', 'A', 'T', 'A', 'R', 'R', '1'};
constexpr char kTensorMagic[8] = {'D', 'F', 'A', 'T', 'P', 'A', 'R', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const fs::path& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("truncated binary file: " + path.string());
    return v;
}

void put_matrix_data(std::ostream& os, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(os, m(r, c));
    }
}

Eigen::MatrixXd take_matrix_data(std::istream& is, std::uint64_t rows, std::uint64_t cols, const fs::path& path) {
    constexpr std::uint64_t kMaxEntries = std::uint64_t{1} << 32;
    if (rows * cols > kMaxEntries) throw DataError("implausible tensor size in " + path.string());
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = take<double>(is, path);
    }
    return m;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    return os;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    return is;
}

void expect_magic(std::istream& is, const char (&magic)[8], const fs::path& path) {
    char buf[8];
    is.read(buf, 8);
    if (!is || std::memcmp(buf, magic, 8) != 0) throw DataError("bad file header: " + path.string());
}

}  // namespace

void write_array(const fs::path& path, const Eigen::MatrixXd& m) {
    auto os = open_out(path);
    os.write(kArrayMagic, 8);
    put<std::uint32_t>(os, 2);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    put_matrix_data(os, m);
    if (!os) throw DataError("write failed: " + path.string());
}

Eigen::MatrixXd read_array(const fs::path& path) {
    auto is = open_in(path);
    expect_magic(is, kArrayMagic, path);
    const auto rank = take<std::uint32_t>(is, path);
    if (rank == 0 || rank > 8) throw DataError("unsupported array rank in " + path.string());
    std::vector<std::uint64_t> dims(rank);
    for (auto& d : dims) d = take<std::uint64_t>(is, path);
    // Higher ranks flatten trailing dimensions into columns.
    std::uint64_t cols = 1;
    for (std::size_t k = 1; k < dims.size(); ++k) cols *= dims[k];
    return take_matrix_data(is, dims[0], cols, path);
}

void write_tensors(const fs::path& path, const std::vector<NamedTensor>& tensors) {
    auto os = open_out(path);
    os.write(kTensorMagic, 8);
    put<std::uint64_t>(os, tensors.size());
    for (const auto& t : tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint64_t>(os, static_cast<std::uint64_t>(t.value.rows()));
        put<std::uint64_t>(os, static_cast<std::uint64_t>(t.value.cols()));
        put_matrix_data(os, t.value);
    }
    if (!os) throw DataError("write failed: " + path.string());
}

std::vector<NamedTensor> read_tensors(const fs::path& path) {
    auto is = open_in(path);
    expect_magic(is, kTensorMagic, path);
    const auto count = take<std::uint64_t>(is, path);
    if (count > 100000) throw DataError("implausible tensor count in " + path.string());
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto len = take<std::uint32_t>(is, path);
        if (len > 4096) throw DataError("implausible tensor name length in " + path.string());
        std::string name(len, '\0');
        is.read(name.data(), len);
        const auto rows = take<std::uint64_t>(is, path);
        const auto cols = take<std::uint64_t>(is, path);
        out.push_back({std::move(name), take_matrix_data(is, rows, cols, path)});
    }
    return out;
}

std::string trim(const std::string& text) {
    const auto b = text.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = text.find_last_not_of(" \t\r\n");
    return text.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string format_double(double v) {
    // Shortest representation that round-trips exactly.
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    auto os = open_out(path);
    os << text;
    if (!os) throw DataError("write failed: " + path.string());
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
    KeyValues kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        kv.values_[key] = trim(t.substr(eq + 1));
    }
    return kv;
}

KeyValues KeyValues::load(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open key-value file: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
}

std::string KeyValues::to_string() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
}

void KeyValues::save(const fs::path& path) const { write_text(path, to_string()); }

void KeyValues::set(const std::string& key, double value) { values_[key] = format_double(value); }
void KeyValues::set(const std::string& key, std::int64_t value) { values_[key] = std::to_string(value); }
void KeyValues::set(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }

const std::string& KeyValues::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(origin_ + ": missing key `" + key + "`");
    return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key) const {
    const std::string& s = get(key);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError(origin_ + ": key `" + key + "` is not a number: " + s);
    }
    return v;
}

std::int64_t KeyValues::get_int(const std::string& key) const {
    const std::string& s = get(key);
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError(origin_ + ": key `" + key + "` is not an integer: " + s);
    }
    return v;
}

std::uint64_t KeyValues::get_uint(const std::string& key) const {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError(origin_ + ": key `" + key + "` is not an unsigned integer: " + s);
    }
    return v;
}

bool KeyValues::get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(origin_ + ": key `" + key + "` is not a boolean: " + s);
}

void Fingerprint::update(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        state_ ^= p[i];
        state_ *= 1099511628211ull;
    }
}

void Fingerprint::update(const Eigen::MatrixXd& m) {
    const std::int64_t dims[2] = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
    update(dims, sizeof(dims));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            update(&v, sizeof(v));
        }
    }
}

std::string Fingerprint::hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << state_;
    return os.str();
}

}  // namespace dfat::io
