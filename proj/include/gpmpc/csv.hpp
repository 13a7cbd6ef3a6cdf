#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpmpc {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip decimal representation (plain '.' decimal point).
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(context + ": cannot parse number '" + std::string(s) + "'");
  if (!std::isfinite(v))
    throw ParseError(context + ": non-finite value '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : f_(path) {
    if (!f_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void header(const std::string& line) { f_ << line << "\n"; }

  void row(const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) f_ << ',';
      f_ << format_double(values[i]);
    }
    f_ << "\n";
  }

  void raw_row(const std::string& line) { f_ << line << "\n"; }

 private:
  std::ofstream f_;
};

/// Reads a CSV file, validates the header and hands each data line (split
/// into fields) to `fn(line_number, fields)`.
template <typename Fn>
void read_csv(const std::string& path, const std::string& expected_header, Fn&& fn) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw ParseError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header)
    throw ParseError(path + ": unexpected header '" + line + "'");
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fn(lineno, split_csv_line(line));
  }
}

}  // namespace gpmpc
