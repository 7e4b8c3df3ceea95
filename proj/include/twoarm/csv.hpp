#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace twoarm::csv {

/// A parsed comma-separated file without quoting support. Line numbers are
/// 1-based and count the header.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  /// Column index by name, or -1.
  long column(std::string_view name) const;
};

Table read(const std::string& path);
Table parse(std::istream& in, const std::string& source_name);

/// Parse a numeric field; throws ValidationError naming the line and column.
double to_double(const std::string& field, std::size_t line, std::string_view column);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

/// Write a table atomically enough for our purposes (temp file + rename).
void write(const std::string& path, const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows);

}  // namespace twoarm::csv
