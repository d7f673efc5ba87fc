#include "owgr/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace owgr {

void AccuracyMatrix::record_row(std::size_t k, const std::vector<double>& accs) {
  if (k != rows_.size()) {
    throw ProtocolError("row " + std::to_string(k) + " written out of order; " +
                        std::to_string(rows_.size()) + " rows exist");
  }
  if (accs.size() != k + 1) {
    throw ProtocolError("row " + std::to_string(k) + " needs " +
                        std::to_string(k + 1) + " accuracies");
  }
  for (double a : accs) {
    if (a < 0.0 || a > 1.0) throw ProtocolError("accuracy outside [0,1]");
  }
  rows_.push_back(accs);
}

double AccuracyMatrix::at(std::size_t k, std::size_t j) const {
  if (k >= rows_.size() || j > k) throw ProtocolError("a[k][j] not recorded");
  return rows_[k][j];
}

const std::vector<double>& AccuracyMatrix::row(std::size_t k) const {
  if (k >= rows_.size()) throw ProtocolError("row not recorded");
  return rows_[k];
}

double AccuracyMatrix::avg_accuracy(std::size_t k) const {
  const auto& r = row(k);
  return std::accumulate(r.begin(), r.end(), 0.0) /
         static_cast<double>(r.size());
}

AccuracyMatrix::Forgetting AccuracyMatrix::forgetting(std::size_t k) const {
  if (k < 1) throw UndefinedMetric("forgetting needs at least two tasks");
  row(k);
  Forgetting out;
  for (std::size_t j = 0; j < k; ++j) {
    double best = rows_[j][j];
    double sum = 0.0;
    for (std::size_t l = j; l < k; ++l) {
      best = std::max(best, rows_[l][j]);
      sum += rows_[l][j];
    }
    out.per_task.push_back(best - rows_[k][j]);
    out.per_task_mean.push_back(sum / static_cast<double>(k - j) -
                                rows_[k][j]);
  }
  out.mean = std::accumulate(out.per_task.begin(), out.per_task.end(), 0.0) /
             static_cast<double>(k);
  out.mean_of_mean = std::accumulate(out.per_task_mean.begin(),
                                     out.per_task_mean.end(), 0.0) /
                     static_cast<double>(k);
  return out;
}

MetricsReport make_report(const AccuracyMatrix& m) {
  MetricsReport r;
  for (std::size_t k = 0; k < m.rows(); ++k) {
    r.rows.push_back(m.row(k));
    r.avg_acc.push_back(m.avg_accuracy(k));
    if (k >= 1) {
      const auto f = m.forgetting(k);
      r.forgetting.push_back(f.mean);
      r.forgetting_expect.push_back(f.mean_of_mean);
    }
  }
  return r;
}

}  // namespace owgr
