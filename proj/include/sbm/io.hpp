#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

namespace sbm {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view version = "1.0.0";

/// Shortest decimal form that reads back to the same double.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string format_number(long long x) { return std::to_string(x); }
inline std::string format_number(std::size_t x) { return std::to_string(x); }
inline std::string format_number(int x) { return std::to_string(x); }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, x >>= 4) s[static_cast<std::size_t>(i)] = digits[x & 0xf];
  return s;
}

/// Comma-separated file with a fixed header. Fields are numbers or plain
/// identifiers; strings containing commas or quotes are quoted.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::initializer_list<std::string_view> header)
      : out_(path, std::ios::binary), columns_(header.size()) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    bool first = true;
    for (auto h : header) {
      if (!first) out_ << ',';
      out_ << h;
      first = false;
    }
    out_ << '\n';
  }

  template <class... Fields>
  void row(const Fields&... fields) {
    if (sizeof...(fields) != columns_) throw std::logic_error("CSV row width does not match the header");
    bool first = true;
    ((write_field(fields, first)), ...);
    out_ << '\n';
  }

 private:
  static std::string quote(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  }

  template <class T>
  void write_field(const T& v, bool& first) {
    if (!first) out_ << ',';
    first = false;
    if constexpr (std::is_same_v<T, bool>) {
      out_ << (v ? "true" : "false");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if constexpr (std::is_floating_point_v<T>) out_ << format_number(static_cast<double>(v));
      else out_ << std::to_string(v);
    } else {
      out_ << quote(std::string_view(v));
    }
  }

  std::ofstream out_;
  std::size_t columns_;
};

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Parses a whole file as JSON; errors carry the path.
inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

}  // namespace sbm
