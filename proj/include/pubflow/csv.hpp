#pragma once

#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace pubflow::csv {

/// Parsed CSV contents. The dialect is minimal: comma-delimited, first row is
/// the header, no quoting (the file formats used here never need it).
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name, -1 when absent.
  int column(std::string_view name) const;
};

Table read_file(const std::string& path);

std::vector<std::string> split_line(std::string_view line);

/// Strict double parse; throws with `context` in the message.
double parse_double(std::string_view cell, const std::string& context);

/// Like parse_double but maps an empty cell to NaN (the missing sentinel).
double parse_double_or_missing(std::string_view cell, const std::string& context);

/// Shortest decimal form that round-trips back to the identical double.
std::string format_double(double v);

std::string format_fixed(double v, int decimals);

/// Buffered CSV writer. write_tmp()+commit() gives an atomic replace.
class Writer {
 public:
  explicit Writer(std::string path, bool atomic = true);
  ~Writer();

  void row(const std::vector<std::string>& cells);
  void raw_line(const std::string& line);

  /// Flushes and (when atomic) renames the temp file over the target.
  void commit();

 private:
  std::string path_;
  std::string tmp_path_;
  bool atomic_;
  bool committed_ = false;
  std::ofstream out_;
};

/// One-line helper for reading a whole file (throws when missing).
std::string read_text_file(const std::string& path);

}  // namespace pubflow::csv
