#pragma once

// Snapshot datasets: T time-stamped point clouds A_k (n_k x d).
//
// Text format: a header `t,x_1,...,x_d` followed by one row per cell.
// Rows are grouped by distinct t (sorted ascending); n_k is the row count of
// each group.

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "umfsb/autodiff.hpp"

namespace umfsb {

using ad::Index;
using ad::Matrix;

struct SnapshotDataset {
  std::vector<double> times;   // strictly increasing
  std::vector<Matrix> clouds;  // same length as times, all with dim() columns

  std::size_t size() const { return times.size(); }
  int dim() const { return clouds.empty() ? 0 : static_cast<int>(clouds.front().cols()); }
  double count(std::size_t k) const { return static_cast<double>(clouds.at(k).rows()); }
  // n_k / n_0.
  double mass_ratio(std::size_t k) const { return count(k) / count(0); }

  // Throws DataError unless there are >= 2 time points, times increase,
  // every cloud is nonempty and dimensions agree.
  void validate() const;

  // Copy without snapshot k (hold-one-out).
  SnapshotDataset without(std::size_t k) const;
};

SnapshotDataset read_dataset(std::istream& in, const std::string& source = "<stream>");
SnapshotDataset load_dataset(const std::string& path);
// Full-precision (round-trip exact) text output.
void write_dataset(std::ostream& out, const SnapshotDataset& data);
void save_dataset(const std::string& path, const SnapshotDataset& data);

}  // namespace umfsb
