#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "epitrack/core.hpp"
#include "epitrack/errors.hpp"

namespace epitrack {

// Fixed 6-decimal rendering of a micro-degree value, e.g. -74001234 -> "-74.001234".
inline std::string format_micro_deg(std::int32_t micro) {
  const bool neg = micro < 0;
  const std::int64_t abs = neg ? -static_cast<std::int64_t>(micro) : micro;
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%s%lld.%06lld", neg ? "-" : "",
                static_cast<long long>(abs / 1'000'000), static_cast<long long>(abs % 1'000'000));
  return buf;
}

inline std::string format_deg(double deg) { return format_micro_deg(to_micro_deg(deg)); }

inline std::string format_fixed(double v, int decimals = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

namespace csv {

inline double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  require(ec == std::errc() && ptr == last, Errc::bad_request,
          "cannot parse " + std::string(what) + ": \"" + std::string(s) + "\"");
  return v;
}

inline std::int64_t parse_int(std::string_view s, std::string_view what) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && ptr == s.data() + s.size(), Errc::bad_request,
          "cannot parse " + std::string(what) + ": \"" + std::string(s) + "\"");
  return v;
}

inline Timestamp parse_ts(std::string_view s) {
  const std::int64_t v = parse_int(s, "timestamp");
  require(v >= 0, Errc::bad_request, "negative timestamp: " + std::string(s));
  return v;
}

inline void split(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

// Iterates the lines of a strict-header CSV file. Fields never contain commas
// or quotes (identifiers are validated accordingly).
class Reader {
 public:
  Reader(std::istream& in, std::string_view header, std::string_view what)
      : in_(in), what_(what) {
    std::string first;
    require(static_cast<bool>(std::getline(in_, first)), Errc::bad_request,
            std::string(what_) + ": empty input, expected header \"" + std::string(header) + "\"");
    strip_cr(first);
    require(first == header, Errc::bad_request,
            std::string(what_) + ": bad header \"" + first + "\", expected \"" +
                std::string(header) + "\"");
  }

  // Returns false at end of input; skips blank lines.
  bool next(std::vector<std::string_view>& fields, std::size_t expected) {
    while (std::getline(in_, line_)) {
      ++line_no_;
      strip_cr(line_);
      if (line_.empty()) continue;
      split(line_, fields);
      require(fields.size() == expected, Errc::bad_request,
              std::string(what_) + " line " + std::to_string(line_no_) + ": expected " +
                  std::to_string(expected) + " fields, got " + std::to_string(fields.size()));
      return true;
    }
    return false;
  }

  std::size_t line_no() const { return line_no_; }

 private:
  static void strip_cr(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  }

  std::istream& in_;
  std::string what_;
  std::string line_;
  std::size_t line_no_ = 1;  // header was line 1
};

}  // namespace csv

// key=value metadata files; written in key order so saves are reproducible.
using MetaMap = std::map<std::string, std::string>;

inline MetaMap read_meta(std::istream& in) {
  MetaMap meta;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::bad_request, "meta line without '=': " + line);
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

inline void write_meta(std::ostream& out, const MetaMap& meta) {
  for (const auto& [k, v] : meta) out << k << '=' << v << '\n';
}

inline const std::string& meta_get(const MetaMap& meta, const std::string& key) {
  auto it = meta.find(key);
  require(it != meta.end(), Errc::bad_request, "meta key missing: " + key);
  return it->second;
}

}  // namespace epitrack
