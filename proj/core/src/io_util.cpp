// Copyright 2026 The CBD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cbd/io_util.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cbd/error.hpp"

namespace cbd {

namespace {

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, bytes);
}

std::uint64_t get_le(std::istream& in, int bytes) {
  char buf[8];
  in.read(buf, bytes);
  if (in.gcount() != bytes)
    throw FormatError(FormatError::Code::truncated, "unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v, 4); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v, 8); }

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le(out, bits, 8);
}

void write_f64_array(std::ostream& out, const double* data, std::size_t n) {
  write_u64(out, n);
  for (std::size_t i = 0; i < n; ++i) write_f64(out, data[i]);
}

std::uint32_t read_u32(std::istream& in) { return static_cast<std::uint32_t>(get_le(in, 4)); }
std::uint64_t read_u64(std::istream& in) { return get_le(in, 8); }

double read_f64(std::istream& in) {
  const std::uint64_t bits = get_le(in, 8);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::vector<double> read_f64_array(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n > (1ULL << 32))
    throw FormatError(FormatError::Code::malformed, "implausible array length");
  std::vector<double> out(n);
  for (std::uint64_t i = 0; i < n; ++i) out[i] = read_f64(in);
  return out;
}

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xffffffffu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

std::uint32_t crc32(const std::string& s, std::uint32_t seed) {
  return crc32(s.data(), s.size(), seed);
}

std::string format_double(double v) {
  // max_digits10 guarantees round-trip; trim to the shortest form that
  // still parses back to the same bits.
  for (int prec = 1; prec <= 17; ++prec) {
    std::ostringstream oss;
    oss.precision(prec);
    oss << v;
    const std::string s = oss.str();
    double back = 0.0;
    std::istringstream iss(s);
    iss >> back;
    if (back == v) return s;
  }
  std::ostringstream oss;
  oss.precision(17);
  oss << v;
  return oss.str();
}

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    std::size_t b = 0, e = line.size();
    while (b < e && is_space(line[b])) ++b;
    while (e > b && is_space(line[e - 1])) --e;
    if (b == e) continue;
    const std::string stripped = line.substr(b, e - b);
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw FormatError(FormatError::Code::malformed,
                        "config line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [&](std::string s) {
      std::size_t x = 0, y = s.size();
      while (x < y && is_space(s[x])) ++x;
      while (y > x && is_space(s[y - 1])) --y;
      return s.substr(x, y - x);
    };
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw FormatError(FormatError::Code::malformed,
                        "config line " + std::to_string(lineno) + ": empty key");
    cfg.entries_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::load(const std::string& path) { return parse(read_file(path)); }

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': not a number: " + it->second);
  }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::int64_t v = 0;
  const auto* begin = it->second.data();
  const auto* end = begin + it->second.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ValidationError("config key '" + key + "': not an integer: " + it->second);
  return v;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ValidationError("config key '" + key + "': not a boolean: " + v);
}

void KvConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << contents;
  if (!out) throw ValidationError("write failed: " + path);
}

}  // namespace cbd
