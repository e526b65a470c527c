#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hallucdet/matrix.hpp"

namespace hallucdet {

/// Flat key=value text container with a version header. One key per line,
/// insertion-ordered, doubles printed with 17 significant digits so files
/// round-trip bit-exactly. Used for worlds, episodes, model weights, and run
/// manifests.
class KvFile {
 public:
  static constexpr const char* kHeader = "hallucdet-kv 1";

  void set_str(const std::string& key, const std::string& value);
  void set_i64(const std::string& key, long long value);
  void set_u64(const std::string& key, std::uint64_t value);
  void set_f64(const std::string& key, double value);
  void set_vec(const std::string& key, const Vec& value);
  void set_mat(const std::string& key, const Matrix& value);

  bool has(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;
  long long get_i64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  Vec get_vec(const std::string& key) const;
  Matrix get_mat(const std::string& key) const;

  const std::vector<std::string>& keys() const { return order_; }

  std::string to_string() const;
  static KvFile from_string(const std::string& text);

  void write(const std::string& path) const;
  static KvFile read(const std::string& path);

 private:
  void set_raw(const std::string& key, std::string value);
  const std::string& raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

std::string format_f64(double value);

}  // namespace hallucdet
