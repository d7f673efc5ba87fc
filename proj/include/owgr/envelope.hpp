#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "owgr/metrics.hpp"
#include "owgr/strategies.hpp"
#include "owgr/taskproto.hpp"
#include "owgr/trainer.hpp"

namespace owgr {

// One continual run: a case, its sequence parameters, a method, a seed.
struct RunSpec {
  CaseKind kind = CaseKind::NewContext;
  SequenceParams params;
  StrategyKind method = StrategyKind::Finetune;
  std::size_t replay_M = 1000;
  std::uint64_t seed = 0;         // reported replication seed
  std::uint64_t master_seed = 0;  // sweep-level salt for the run's streams

  std::string key() const;  // stable identity for journaling/resume
  // identity of the task sequence alone: method and replay capacity excluded
  // so one seed pits every method against the same sequence
  std::string sequence_key() const;
};

// Trains the full sequence, evaluating every finished task's test split
// after each round. PackNet capacity exhaustion truncates with a flag.
MetricsReport run_single(const RunSpec& spec, const Dataset& dataset,
                         const TrainConfig& base);

// One-at-a-time sweep: exactly one parameter moves, the rest sit at the
// case defaults.
struct SweepConfig {
  CaseKind kind = CaseKind::NewContext;
  std::string swept_param;  // ordering|granularity|num_tasks|
                            // gestures_per_task|replay_M
  std::vector<std::string> values;
  std::vector<StrategyKind> methods{StrategyKind::Finetune, StrategyKind::Lwf,
                                    StrategyKind::Si, StrategyKind::Packnet,
                                    StrategyKind::Replay, StrategyKind::Mas};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  void validate() const;
  // the run for one cell of the values x methods x seeds product
  RunSpec make_run(const std::string& value, StrategyKind method,
                   std::uint64_t seed, std::uint64_t master_seed) const;
};

struct ResultRow {
  std::string case_name, method, param, value;
  std::uint64_t seed = 0;
  std::size_t k = 0;  // 1-indexed round
  double A = 0.0;
  double F = 0.0;  // NaN when undefined (k = 1)
  std::string flags;
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  void sort_canonical();
  std::string to_csv() const;  // fixed header, canonical order assumed
  static ResultsTable from_csv(const std::string& text);
};

ResultsTable rows_from_report(const MetricsReport& rep,
                              const std::string& param,
                              const std::string& value);

struct SweepOptions {
  std::string out_dir;  // journal dir + results.csv/summary.csv live here
  std::size_t jobs = 1;
  std::uint64_t master_seed = 0;
  TrainConfig train;
};

// Executes the product, journaling each finished run under out_dir/runs/ so
// an interrupted sweep resumes where it left off. Output is independent of
// the job count.
ResultsTable sweep(const SweepConfig& cfg, const Dataset& dataset,
                   const SweepOptions& opts);

struct BoxStats {
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
  std::size_t n = 0;
};

// Linear interpolation between closest ranks (inclusive): [1,2,3,4] has
// median 2.5, Q1 1.75, Q3 3.25. xs need not be sorted.
double quantile_inclusive(std::vector<double> xs, double p);
BoxStats box_stats(std::vector<double> xs);

struct SummaryRow {
  std::string method, value, metric;  // metric: "A" or "F"
  BoxStats stats;
};

// Final-round rows of each run, grouped by (method, value); groups with no
// defined values are dropped.
std::vector<SummaryRow> summarize(const ResultsTable& table);
std::string summary_csv(const std::vector<SummaryRow>& rows);

}  // namespace owgr
