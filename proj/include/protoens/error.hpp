#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace protoens {

// Every failure raised by the library derives from Error. The CLI maps
// ConfigError subclasses to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class InvalidConfig : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class EmptyClass : public Error {
public:
    using Error::Error;
};

class EpisodeInconsistency : public Error {
public:
    using Error::Error;
};

class DatasetTooSmall : public Error {
public:
    DatasetTooSmall(const std::string& what, int class_id)
        : Error(what), class_id_(class_id) {}
    int class_id() const noexcept { return class_id_; }

private:
    int class_id_;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class UnsupportedFormat : public Error {
public:
    using Error::Error;
};

// Malformed dataset manifest content (a data error, unlike ConfigError).
class ManifestError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace protoens
