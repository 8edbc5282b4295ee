#include "umfsb/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "umfsb/error.hpp"

namespace umfsb {

void SnapshotDataset::validate() const {
  if (times.size() != clouds.size()) throw DataError("dataset: times and clouds differ in length");
  if (times.size() < 2) {
    throw DataError("dataset: need at least 2 time points, found " + std::to_string(times.size()));
  }
  const Index d = clouds.front().cols();
  if (d < 1) throw DataError("dataset: no coordinate columns");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (k > 0 && !(times[k] > times[k - 1])) throw DataError("dataset: times must increase");
    if (clouds[k].rows() == 0) {
      throw DataError("dataset: empty snapshot at t=" + std::to_string(times[k]));
    }
    if (clouds[k].cols() != d) throw DataError("dataset: inconsistent dimensions");
    if (!clouds[k].allFinite()) {
      throw DataError("dataset: non-finite value at t=" + std::to_string(times[k]));
    }
  }
}

SnapshotDataset SnapshotDataset::without(std::size_t k) const {
  if (k >= times.size()) throw InvalidArgument("dataset: index out of range");
  SnapshotDataset out;
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (j == k) continue;
    out.times.push_back(times[j]);
    out.clouds.push_back(clouds[j]);
  }
  return out;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError(where + ": not a finite number: '" + s + "'");
  }
  return v;
}

}  // namespace

SnapshotDataset read_dataset(std::istream& in, const std::string& source) {
  std::string line;
  int lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split(line);
      break;
    }
  }
  if (header.empty()) throw DataError(source + ": empty file");
  if (header.size() < 2 || trim(header[0]) != "t") {
    throw DataError(source + ":" + std::to_string(lineno) +
                    ": header must be t,x_1,...,x_d");
  }
  const std::size_t cols = header.size();
  std::map<double, std::vector<std::vector<double>>> groups;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    const std::string where = source + ":" + std::to_string(lineno);
    if (cells.size() != cols) {
      throw DataError(where + ": expected " + std::to_string(cols) + " fields, found " +
                      std::to_string(cells.size()));
    }
    const double t = parse_number(cells[0], where);
    std::vector<double> row(cols - 1);
    for (std::size_t j = 1; j < cols; ++j) row[j - 1] = parse_number(cells[j], where);
    groups[t].push_back(std::move(row));
  }
  if (groups.empty()) throw DataError(source + ": no data rows");
  SnapshotDataset data;
  for (auto& [t, rows] : groups) {
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols - 1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j + 1 < cols; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
    data.times.push_back(t);
    data.clouds.push_back(std::move(m));
  }
  if (data.times.size() < 2) {
    throw DataError(source + ": need at least 2 distinct time points, found " +
                    std::to_string(data.times.size()));
  }
  data.validate();
  return data;
}

SnapshotDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return read_dataset(in, path);
}

void write_dataset(std::ostream& out, const SnapshotDataset& data) {
  const int d = data.dim();
  out << "t";
  for (int j = 1; j <= d; ++j) out << ",x_" << j;
  out << "\n";
  out.precision(17);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const Matrix& c = data.clouds[k];
    for (Index i = 0; i < c.rows(); ++i) {
      out << data.times[k];
      for (Index j = 0; j < c.cols(); ++j) out << "," << c(i, j);
      out << "\n";
    }
  }
}

void save_dataset(const std::string& path, const SnapshotDataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset '" + path + "'");
  write_dataset(out, data);
  if (!out) throw DataError("failed writing dataset '" + path + "'");
}

}  // namespace umfsb
