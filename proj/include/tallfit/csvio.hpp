#pragma once

#include <string>
#include <vector>

namespace tallfit::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int find(const std::string& name) const;
};

// Comma-separated with optional RFC-4180 quoting ("" escapes a quote);
// tolerates CRLF line ends. Every row must match the header arity.
Table read_file(const std::string& path);
Table parse(const std::string& text, const std::string& origin);

std::string quote_field(const std::string& field);
void write_file(const std::string& path, const Table& table);

}  // namespace tallfit::csv
