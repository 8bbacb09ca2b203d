#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "subseq/core.hpp"

namespace subseq {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line_no) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw FormatError(file + ":" + std::to_string(line_no) + ": expected a number, got '" + s + "'");
  return v;
}

inline long parse_long(const std::string& s, const std::string& file, std::size_t line_no) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(file + ":" + std::to_string(line_no) + ": expected an integer, got '" + s + "'");
  return v;
}

}  // namespace detail

// Series CSV: header `dim0,dim1,...`, one row per time step.
inline TimeSeries read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  const auto header = detail::split_csv_line(line);
  const std::size_t d = header.size();
  for (std::size_t i = 0; i < d; ++i) {
    if (header[i] != "dim" + std::to_string(i))
      throw FormatError(path + ":1: expected header dim0,dim1,..., got '" + header[i] + "'");
  }
  std::vector<std::vector<double>> values(d);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != d)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(d) +
                        " columns, got " + std::to_string(fields.size()));
    for (std::size_t i = 0; i < d; ++i)
      values[i].push_back(detail::parse_double(fields[i], path, line_no));
  }
  if (values[0].empty()) throw FormatError(path + ": no data rows");
  return TimeSeries(std::move(values), path);
}

inline void write_series_csv(const std::string& path, const TimeSeries& t) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  for (std::size_t d = 0; d < t.dims(); ++d) out << (d ? "," : "") << "dim" << d;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < t.length(); ++i) {
    for (std::size_t d = 0; d < t.dims(); ++d) {
      std::snprintf(buf, sizeof(buf), "%.17g", t.dim(d)[i]);
      out << (d ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw FormatError(path + ": write failed");
}

// Label CSV: header `start,label`, start indices contiguous from 0.
inline LabelSeries read_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  {
    const auto header = detail::split_csv_line(line);
    if (header.size() != 2 || header[0] != "start" || header[1] != "label")
      throw FormatError(path + ":1: expected header start,label");
  }
  std::vector<int> labels;
  int max_label = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 2)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 2 columns");
    const long start = detail::parse_long(fields[0], path, line_no);
    if (start != static_cast<long>(labels.size()))
      throw FormatError(path + ":" + std::to_string(line_no) + ": start indices must be contiguous from 0 (got " +
                        std::to_string(start) + ", expected " + std::to_string(labels.size()) + ")");
    const long label = detail::parse_long(fields[1], path, line_no);
    if (label < 0)
      throw FormatError(path + ":" + std::to_string(line_no) + ": labels must be >= 0");
    labels.push_back(static_cast<int>(label));
    if (label > max_label) max_label = static_cast<int>(label);
  }
  if (labels.empty()) throw FormatError(path + ": no label rows");
  return LabelSeries(std::move(labels), max_label + 1);
}

inline void write_labels_csv(const std::string& path, const LabelSeries& y) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "start,label\n";
  for (std::size_t i = 0; i < y.size(); ++i) out << i << "," << y.labels[i] << "\n";
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace subseq
