#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "owgr/metrics.hpp"
#include "owgr/rng.hpp"

using namespace owgr;

TEST_CASE("record_row: ordering and shape protocol") {
  AccuracyMatrix m;
  m.record_row(0, {0.9});
  CHECK(m.at(0, 0) == 0.9);
  CHECK_THROWS_AS(m.record_row(2, {0.1, 0.2, 0.3}), ProtocolError);
  CHECK_THROWS_AS(m.record_row(1, {0.5}), ProtocolError);
  CHECK_THROWS_AS(m.record_row(1, {0.5, 1.5}), ProtocolError);
  m.record_row(1, {0.6, 0.8});
  CHECK_THROWS_AS(m.record_row(1, {0.6, 0.8}), ProtocolError);  // rewrite
}

TEST_CASE("avg_accuracy: trivial rows") {
  AccuracyMatrix m;
  m.record_row(0, {1.0});
  CHECK(m.avg_accuracy(0) == doctest::Approx(1.0));
  m.record_row(1, {0.8, 0.7});
  m.record_row(2, {0.8, 0.7, 0.9});
  CHECK(m.avg_accuracy(2) == doctest::Approx(0.8));
}

TEST_CASE("forgetting: max rule and mean") {
  AccuracyMatrix m;
  m.record_row(0, {0.9});
  m.record_row(1, {0.6, 0.9});
  m.record_row(2, {0.7, 0.9, 0.8});
  const auto f = m.forgetting(2);
  CHECK(f.per_task[0] == doctest::Approx(0.2));  // max(0.9, 0.6) - 0.7
  CHECK(f.per_task[1] == doctest::Approx(0.0));
  CHECK(f.mean == doctest::Approx(0.1));
  CHECK_THROWS_AS(m.forgetting(0), UndefinedMetric);
}

TEST_CASE("forgetting: constant column has zero forgetting") {
  AccuracyMatrix m;
  m.record_row(0, {0.75});
  m.record_row(1, {0.75, 0.8});
  m.record_row(2, {0.75, 0.8, 0.9});
  const auto f = m.forgetting(2);
  CHECK(f.per_task[0] == doctest::Approx(0.0));
  CHECK(f.per_task[1] == doctest::Approx(0.0));
}

TEST_CASE("oracle: A_k and F_k match brute-force recomputation") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t tau = 2 + rng.uniform_int(7);
    AccuracyMatrix m;
    std::vector<std::vector<double>> raw;
    for (std::size_t k = 0; k < tau; ++k) {
      std::vector<double> row(k + 1);
      for (auto& v : row) v = rng.uniform();
      raw.push_back(row);
      m.record_row(k, row);
    }
    for (std::size_t k = 0; k < tau; ++k) {
      double sum = 0.0;
      for (double v : raw[k]) sum += v;
      CHECK(std::abs(m.avg_accuracy(k) - sum / (k + 1)) <= 1e-12);
      if (k >= 1) {
        const auto f = m.forgetting(k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          double best = -1.0;
          for (std::size_t l = j; l < k; ++l) best = std::max(best, raw[l][j]);
          const double fj = best - raw[k][j];
          CHECK(std::abs(f.per_task[j] - fj) <= 1e-12);
          CHECK(fj >= -1.0);
          CHECK(fj <= 1.0);
          total += fj;
        }
        CHECK(std::abs(f.mean - total / k) <= 1e-12);
      }
    }
  }
}

TEST_CASE("make_report collects the full series") {
  AccuracyMatrix m;
  m.record_row(0, {0.9});
  m.record_row(1, {0.5, 0.8});
  const auto r = make_report(m);
  CHECK(r.avg_acc.size() == 2);
  CHECK(r.forgetting.size() == 1);
  CHECK(r.forgetting[0] == doctest::Approx(0.4));
  CHECK(r.forgetting_expect.size() == 1);
}
