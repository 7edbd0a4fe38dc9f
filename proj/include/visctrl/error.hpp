#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace visctrl {

// Every failure carries a short machine-readable code; the CLI prints it
// verbatim and maps it to an exit status.
enum class ErrorCode { Shape, Domain, Config, Injection, Format, Io, Input };

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Shape: return "SHAPE";
    case ErrorCode::Domain: return "DOMAIN";
    case ErrorCode::Config: return "CONFIG";
    case ErrorCode::Injection: return "INJECTION";
    case ErrorCode::Format: return "FORMAT";
    case ErrorCode::Io: return "IO";
    case ErrorCode::Input: return "INPUT";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorCode::Shape, what) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error(ErrorCode::Domain, what) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};
struct InjectionError : Error {
  explicit InjectionError(const std::string& what) : Error(ErrorCode::Injection, what) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorCode::Format, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCode::Io, what) {}
};
struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ErrorCode::Input, what) {}
};

}  // namespace visctrl
