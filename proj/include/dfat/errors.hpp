#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dfat {

// Error categories double as CLI exit-code classes.
enum class ErrorKind {
    config,     // invalid configuration, arguments, shapes or lengths
    data,       // unreadable or schema-violating input files
    numerical,  // non-finite values during training or evaluation
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

inline std::string_view error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "config";
        case ErrorKind::data: return "data";
        case ErrorKind::numerical: return "numerical";
    }
    return "unknown";
}

inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::data: return 3;
        case ErrorKind::numerical: return 4;
    }
    return 1;
}

}  // namespace dfat
