#include "pubflow/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pubflow::csv {

int Table::column(std::string_view name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> split_line(std::string_view line) {
  // Strip a trailing CR so CRLF files parse cleanly.
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> cells;
  size_t start = 0;
  for (;;) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.emplace_back(line.substr(start));
      break;
    }
    cells.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing file: " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty file: " + path);
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    t.rows.push_back(split_line(line));
  }
  return t;
}

double parse_double(std::string_view cell, const std::string& context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size())
    throw std::runtime_error("non-numeric cell '" + std::string(cell) + "' (" + context + ")");
  return v;
}

double parse_double_or_missing(std::string_view cell, const std::string& context) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (cell == "nan" || cell == "NaN" || cell == "NA")
    return std::numeric_limits<double>::quiet_NaN();
  return parse_double(cell, context);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::string format_fixed(double v, int decimals) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

Writer::Writer(std::string path, bool atomic)
    : path_(std::move(path)), atomic_(atomic) {
  tmp_path_ = atomic_ ? path_ + ".tmp" : path_;
  out_.open(tmp_path_, std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open for writing: " + tmp_path_);
}

Writer::~Writer() {
  if (!committed_ && atomic_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_path_, ec);
  }
}

void Writer::row(const std::vector<std::string>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

void Writer::raw_line(const std::string& line) { out_ << line << '\n'; }

void Writer::commit() {
  out_.flush();
  if (!out_) throw std::runtime_error("write failure: " + tmp_path_);
  out_.close();
  if (atomic_) std::filesystem::rename(tmp_path_, path_);
  committed_ = true;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace pubflow::csv
