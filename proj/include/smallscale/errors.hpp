#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace smallscale {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file (JSON or PNM). Message carries the byte offset when known.
struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Dangling ids or duplicate ids inside a dataset / detection set.
struct IntegrityError : Error {
  IntegrityError(const std::string& msg, std::vector<std::int64_t> ids = {})
      : Error(msg), offending_ids(std::move(ids)) {}
  std::vector<std::int64_t> offending_ids;
};

/// A score-requiring operation was handed unscored detections.
struct MissingScoreError : Error {
  using Error::Error;
};

/// Cached detector has no entry for the requested (image_id, scale_tag).
struct CacheMissError : Error {
  using Error::Error;
};

/// External detector process failed (nonzero exit, bad output, timeout).
struct AdapterError : Error {
  AdapterError(const std::string& msg, std::string stderr_text = "", int exit_code = -1)
      : Error(msg), stderr_output(std::move(stderr_text)), exit_status(exit_code) {}
  std::string stderr_output;
  int exit_status;
};

}  // namespace smallscale
