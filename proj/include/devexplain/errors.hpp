#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace devexplain {

// Maps one-to-one onto the CLI exit codes.
enum class ErrorKind { validation = 2, ingestion = 3, numerical = 4, internal = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

struct IngestionError : Error {
  explicit IngestionError(const std::string& what) : Error(ErrorKind::ingestion, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

// Runs fn and re-throws any failure with "[stage] " prefixed, keeping the kind.
template <typename Fn>
decltype(auto) in_stage(const char* stage, Fn&& fn) {
  try {
    return std::forward<Fn>(fn)();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("[") + stage + "] " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::internal, std::string("[") + stage + "] " + e.what());
  }
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace devexplain
