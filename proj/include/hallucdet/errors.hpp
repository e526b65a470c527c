#pragma once

#include <stdexcept>
#include <string>

namespace hallucdet {

// Error taxonomy used across the library. All derive from std::runtime_error
// so callers can catch broadly or per category.

struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct argument_error : std::runtime_error {
  explicit argument_error(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};

struct contract_error : std::runtime_error {
  explicit contract_error(const std::string& msg) : std::runtime_error("contract violation: " + msg) {}
};

struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error("I/O error: " + msg) {}
};

}  // namespace hallucdet
