#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdps/types.hpp"

namespace pdps {

/// Shortest text that parses back to the same double; "nan"/"inf" for
/// non-finite values.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_header(const std::vector<std::string>& cols) {
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i > 0) out += ',';
    out += cols[i];
  }
  return out + '\n';
}

/// Header x0..x{d-1}, one row per sample.
inline std::string samples_to_csv(const Samples& s) {
  std::vector<std::string> cols;
  for (Eigen::Index j = 0; j < s.cols(); ++j) cols.push_back("x" + std::to_string(j));
  std::string out = csv_header(cols);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_double(s(i, j));
    }
    out += '\n';
  }
  return out;
}

inline Samples samples_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: missing header");
  const auto d = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    Eigen::Index cols = 0;
    while (std::getline(ls, cell, ',')) {
      values.push_back(std::stod(cell));
      ++cols;
    }
    if (cols != d) throw std::runtime_error("csv: ragged row");
    ++rows;
  }
  Samples s(rows, d);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < d; ++j) s(i, j) = values[static_cast<std::size_t>(i * d + j)];
  return s;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace pdps
