#include "twoarm/csv.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "twoarm/error.hpp"

namespace twoarm::csv {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

}  // namespace

long Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<long>(i);
  return -1;
}

Table parse(std::istream& in, const std::string& source_name) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      for (std::size_t i = 0; i < t.header.size(); ++i) {
        if (t.header[i].empty())
          throw ValidationError(fmt::format("{}:{}: empty column name at position {}", source_name, lineno, i + 1));
        for (std::size_t j = 0; j < i; ++j)
          if (t.header[j] == t.header[i])
            throw ValidationError(fmt::format("{}:{}: duplicate column '{}'", source_name, lineno, t.header[i]));
      }
      continue;
    }
    if (fields.size() != t.header.size())
      throw ValidationError(fmt::format("{}:{}: expected {} fields, found {}", source_name, lineno, t.header.size(),
                                        fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (t.header.empty()) throw ValidationError(fmt::format("{}: missing header row", source_name));
  return t;
}

Table read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open '{}' for reading", path));
  return parse(in, path);
}

double to_double(const std::string& field, std::size_t line, std::string_view column) {
  double v = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || field.empty())
    throw ValidationError(fmt::format("line {}: column '{}': '{}' is not a number", line, column, field));
  return v;
}

std::string format_double(double v) { return fmt::format("{}", v); }

void write(const std::string& path, const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot open '{}' for writing", tmp.string()));
    auto put = [&](const std::vector<std::string>& fields) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << fields[i];
      }
      out << '\n';
    };
    put(header);
    for (const auto& r : rows) put(r);
    if (!out) throw Error(fmt::format("write to '{}' failed", tmp.string()));
  }
  fs::rename(tmp, target);
}

}  // namespace twoarm::csv
