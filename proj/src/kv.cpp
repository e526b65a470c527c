#include "hallucdet/kv.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hallucdet/errors.hpp"

namespace hallucdet {

std::string format_f64(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

namespace {

// ERANGE alone is not fatal: strtod reports it for subnormal underflow while
// still returning the correctly rounded value. Only overflow (to ±HUGE_VAL)
// is an error.
bool float_out_of_range(double v) { return errno == ERANGE && (v >= HUGE_VAL || v <= -HUGE_VAL); }

double parse_f64(const std::string& text, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0' || float_out_of_range(v))
    throw parse_error("bad float for key '" + key + "': " + text);
  return v;
}

std::vector<double> parse_doubles(const std::string& text, std::size_t expect, const std::string& key) {
  std::vector<double> out;
  out.reserve(expect);
  const char* p = text.c_str();
  char* end = nullptr;
  while (true) {
    while (*p == ' ') ++p;
    if (*p == '\0') break;
    errno = 0;
    const double v = std::strtod(p, &end);
    if (end == p || float_out_of_range(v)) throw parse_error("bad float list for key '" + key + "'");
    out.push_back(v);
    p = end;
  }
  if (out.size() != expect)
    throw parse_error("key '" + key + "' expected " + std::to_string(expect) + " values, got " +
                      std::to_string(out.size()));
  return out;
}

}  // namespace

void KvFile::set_raw(const std::string& key, std::string value) {
  if (key.empty() || key.find('=') != std::string::npos || key.find('\n') != std::string::npos)
    throw argument_error("invalid kv key: '" + key + "'");
  if (value.find('\n') != std::string::npos) throw argument_error("kv value may not contain newlines");
  auto it = values_.find(key);
  if (it == values_.end()) {
    values_.emplace(key, std::move(value));
    order_.push_back(key);
  } else {
    it->second = std::move(value);
  }
}

const std::string& KvFile::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw parse_error("missing key '" + key + "'");
  return it->second;
}

void KvFile::set_str(const std::string& key, const std::string& value) { set_raw(key, value); }
void KvFile::set_i64(const std::string& key, long long value) { set_raw(key, std::to_string(value)); }
void KvFile::set_u64(const std::string& key, std::uint64_t value) { set_raw(key, std::to_string(value)); }
void KvFile::set_f64(const std::string& key, double value) { set_raw(key, format_f64(value)); }

void KvFile::set_vec(const std::string& key, const Vec& value) {
  std::string s = std::to_string(value.size());
  for (double v : value) {
    s += ' ';
    s += format_f64(v);
  }
  set_raw(key, std::move(s));
}

void KvFile::set_mat(const std::string& key, const Matrix& value) {
  std::string s = std::to_string(value.rows) + ' ' + std::to_string(value.cols);
  for (double v : value.data) {
    s += ' ';
    s += format_f64(v);
  }
  set_raw(key, std::move(s));
}

bool KvFile::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& KvFile::get_str(const std::string& key) const { return raw(key); }

long long KvFile::get_i64(const std::string& key) const {
  const std::string& s = raw(key);
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE)
    throw parse_error("bad integer for key '" + key + "': " + s);
  return v;
}

std::uint64_t KvFile::get_u64(const std::string& key) const {
  const std::string& s = raw(key);
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE)
    throw parse_error("bad integer for key '" + key + "': " + s);
  return v;
}

double KvFile::get_f64(const std::string& key) const { return parse_f64(raw(key), key); }

Vec KvFile::get_vec(const std::string& key) const {
  const std::string& s = raw(key);
  std::istringstream head(s);
  std::size_t n = 0;
  head >> n;
  if (!head) throw parse_error("bad vector header for key '" + key + "'");
  std::string rest;
  std::getline(head, rest);
  return parse_doubles(rest, n, key);
}

Matrix KvFile::get_mat(const std::string& key) const {
  const std::string& s = raw(key);
  std::istringstream head(s);
  int rows = 0, cols = 0;
  head >> rows >> cols;
  if (!head || rows < 0 || cols < 0) throw parse_error("bad matrix header for key '" + key + "'");
  std::string rest;
  std::getline(head, rest);
  return Matrix(rows, cols, parse_doubles(rest, static_cast<std::size_t>(rows) * cols, key));
}

std::string KvFile::to_string() const {
  std::string out = kHeader;
  out += '\n';
  for (const std::string& key : order_) {
    out += key;
    out += '=';
    out += values_.at(key);
    out += '\n';
  }
  return out;
}

KvFile KvFile::from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw parse_error("missing or unsupported kv header: '" + line + "'");
  KvFile kv;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw parse_error("line " + std::to_string(lineno) + ": expected key=value");
    kv.set_raw(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

void KvFile::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << to_string();
  if (!out) throw io_error("failed writing '" + path + "'");
}

KvFile KvFile::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

}  // namespace hallucdet
