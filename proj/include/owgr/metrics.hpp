#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "owgr/common.hpp"

namespace owgr {

// Lower-triangular accuracy bookkeeping: a[k][j] is the test accuracy on
// task j after training through task k (1-indexed in reports, 0-indexed
// here). Each row is written exactly once, in order.
class AccuracyMatrix {
 public:
  void record_row(std::size_t k, const std::vector<double>& accs);
  std::size_t rows() const { return rows_.size(); }
  double at(std::size_t k, std::size_t j) const;
  const std::vector<double>& row(std::size_t k) const;

  double avg_accuracy(std::size_t k) const;

  struct Forgetting {
    std::vector<double> per_task;       // f_j^k, max over earlier rows
    double mean = 0.0;                  // F_k
    std::vector<double> per_task_mean;  // expectation-over-l variant, logged
    double mean_of_mean = 0.0;          // alongside the canonical max form
  };
  Forgetting forgetting(std::size_t k) const;

 private:
  std::vector<std::vector<double>> rows_;
};

struct MetricsReport {
  std::string case_name;
  std::string method;
  std::string params;
  std::uint64_t seed = 0;
  std::vector<double> avg_acc;           // A_k for k = 1..tau
  std::vector<double> forgetting;        // F_k for k = 2..tau
  std::vector<double> forgetting_expect; // expectation-variant F_k
  std::vector<std::vector<double>> rows; // the raw matrix
  std::vector<std::string> flags;
};

MetricsReport make_report(const AccuracyMatrix& m);

}  // namespace owgr
