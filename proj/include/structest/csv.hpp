#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "structest/common.hpp"

namespace structest {

// Shortest representation that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// Minimal RFC-style CSV: header row, UTF-8, quotes only where needed.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
      if (c == '"') out += "\"\"";
      else out += c;
    }
    out += "\"";
    return out;
  }

  void add_row(std::vector<std::string> row) {
    require(row.size() == header.size(), "csv: row width mismatch");
    rows.push_back(std::move(row));
  }

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("csv: missing column " + name);
  }

  std::string to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < header.size(); ++i)
      os << (i ? "," : "") << escape(header[i]);
    os << "\n";
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i)
        os << (i ? "," : "") << escape(row[i]);
      os << "\n";
    }
    return os.str();
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("csv: cannot open for write: " + path);
    f << to_string();
  }

  static CsvTable parse(const std::string& text) {
    CsvTable t;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool first_record = true;
    auto end_field = [&]() {
      record.push_back(field);
      field.clear();
    };
    auto end_record = [&]() {
      end_field();
      if (first_record) {
        t.header = record;
        first_record = false;
      } else {
        t.rows.push_back(record);
      }
      record.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
      char c = text[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < text.size() && text[i + 1] == '"') {
            field += '"';
            ++i;
          } else {
            in_quotes = false;
          }
        } else {
          field += c;
        }
      } else if (c == '"') {
        in_quotes = true;
      } else if (c == ',') {
        end_field();
      } else if (c == '\n') {
        end_record();
      } else if (c != '\r') {
        field += c;
      }
    }
    if (!field.empty() || !record.empty()) end_record();
    for (const auto& row : t.rows)
      require(row.size() == t.header.size(), "csv: ragged row");
    return t;
  }

  static CsvTable read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("csv: cannot open for read: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse(os.str());
  }
};

}  // namespace structest
