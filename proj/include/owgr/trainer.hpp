#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "owgr/strategies.hpp"
#include "owgr/taskproto.hpp"

namespace owgr {

struct TrainConfig {
  std::vector<double> lr_grid{1e-2, 5e-3, 1e-3, 5e-4, 1e-4};
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  std::size_t anneal_after = 10;  // unimproved val evals -> lr / 10
  std::size_t stop_after = 15;    // unimproved val evals -> terminate
  double margin = 0.2;
  double decay_factor = 0.5;
  double hyperparam_floor = 1e-6;
  std::size_t probe_epochs = 30;          // plasticity-search budget
  std::size_t packnet_retrain_epochs = 15;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;  // optional JSON-lines training log

  void validate() const;
};

struct TaskOutcome {
  GestureNet net;
  Strategy strategy;
  double val_acc = 0.0;  // best validation accuracy seen during training
  double lr = 0.0;
  StrategyConfig hyperparams;
  std::size_t epochs_run = 0;
  std::size_t decay_rounds = 0;
  bool flagged = false;  // stability search ran out of decay room
};

// Tracks the unimproved-evaluation streak that drives annealing and early
// stopping. Improvement means strictly beating the best accuracy so far.
class EarlyStopSchedule {
 public:
  EarlyStopSchedule(double lr, std::size_t anneal_after,
                    std::size_t stop_after);

  struct Decision {
    bool improved = false;
    bool annealed = false;
    bool stop = false;
    double lr = 0.0;
  };
  Decision observe(double val_acc);

  double best() const { return best_; }
  std::size_t best_index() const { return best_index_; }

 private:
  double lr_;
  std::size_t anneal_after_, stop_after_;
  double best_ = -1.0;
  std::size_t best_index_ = 0, seen_ = 0, streak_ = 0;
};

// One full pass over a task: before_task, shuffled mini-batch epochs with
// per-epoch validation, best-snapshot restore, then after_task consolidation.
// Works on copies of net/strategy; the trained pair lives in the outcome.
TaskOutcome train_task(const GestureNet& net, const Strategy& strategy,
                       const Task& task, std::size_t task_index,
                       const TrainConfig& cfg, double lr,
                       std::size_t max_epochs_override = 0);

// Finetune probes across the LR grid; returns the winner (ties go to the
// larger LR, i.e. first in grid order) and its accuracy as the reference.
std::pair<double, double> plasticity_search(const GestureNet& net,
                                            const Task& task,
                                            std::size_t task_index,
                                            const TrainConfig& cfg);

// Grid scan driving an arbitrary probe; one call per grid entry.
std::pair<double, double> plasticity_search_with(
    const std::vector<double>& lr_grid,
    const std::function<double(double)>& probe);

using TrialFn = std::function<TaskOutcome(const StrategyConfig&, double lr)>;

// Decay loop over the strategy's decayable hyperparameters; the trial
// callback runs one candidate configuration and reports its outcome.
TaskOutcome stability_search_with(const StrategyConfig& init, double best_lr,
                                  double ref_acc, const TrainConfig& cfg,
                                  const TrialFn& trial);

TaskOutcome stability_search(const GestureNet& net, const Strategy& strategy,
                             const Task& task, std::size_t task_index,
                             double best_lr, double ref_acc,
                             const TrainConfig& cfg);

// Both stages for one task: plasticity search then stability decay search.
TaskOutcome run_task_pipeline(const GestureNet& net, const Strategy& strategy,
                              const Task& task, std::size_t task_index,
                              const TrainConfig& cfg);

// Test accuracy with the task's frozen normalization snapshot.
double evaluate(const GestureNet& net,
                const std::vector<LabeledWindow>& windows, std::size_t task);

}  // namespace owgr
