#include "tallfit/csvio.hpp"

#include <fstream>
#include <sstream>

#include "tallfit/common.hpp"

namespace tallfit::csv {

int Table::find(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

Table parse(const std::string& text, const std::string& origin) {
  Table out;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool saw_any = false;
  size_t line = 1;

  auto end_field = [&] {
    row.push_back(field);
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    if (!saw_any) {
      out.header = row;
      saw_any = true;
    } else {
      if (row.size() != out.header.size())
        throw DataError(origin + ": line " + std::to_string(line) + " has " +
                        std::to_string(row.size()) + " fields, expected " +
                        std::to_string(out.header.size()));
      out.rows.push_back(row);
    }
    row.clear();
  };

  const size_t n = text.size();
  size_t i = 0;
  bool row_started = false;
  while (i < n) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    row_started = true;
    switch (c) {
      case '"':
        in_quotes = true;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        ++i;
        break;
      case '\n':
        end_row();
        ++line;
        row_started = false;
        ++i;
        break;
      default:
        field += c;
        ++i;
        break;
    }
  }
  if (in_quotes)
    throw DataError(origin + ": unterminated quoted field");
  if (row_started || !field.empty() || !row.empty()) end_row();
  if (!saw_any) throw DataError(origin + ": empty file (no header)");
  return out;
}

Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

std::string quote_field(const std::string& field) {
  bool needs = field.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

void write_file(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  auto emit = [&](const std::vector<std::string>& row) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << quote_field(row[i]);
    }
    out << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  if (!out) throw IoError("failed while writing " + path);
}

}  // namespace tallfit::csv
