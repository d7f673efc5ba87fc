#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "owgr/net.hpp"
#include "owgr/rng.hpp"
#include "owgr/taskproto.hpp"

namespace owgr {

enum class StrategyKind { Finetune, Lwf, Si, Packnet, Replay, Mas };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Finetune;
  double lwf_lambda = 1.0;
  double lwf_temperature = 2.0;       // excluded from decay
  double si_c = 1.0;
  double si_xi = 1e-3;                // excluded from decay
  double mas_lambda = 1.0;
  double packnet_keep_frac = 0.5;     // excluded from decay
  std::size_t replay_buffer = 1000;   // M, excluded from decay

  // exactly {lwf.lambda} / {si.c} / {mas.lambda}; empty otherwise
  std::vector<std::string> decayable_names() const;
  double get(const std::string& name) const;
  void set(const std::string& name, double value);
  void validate() const;
};

struct ReplayExemplar {
  TensorBuffer x;
  int y = 0;
  std::size_t task = 0;
};

struct StrategyState {
  // SI/MAS quadratic-penalty bookkeeping; lengths track theta_star
  std::vector<double> omega;
  std::vector<double> theta_star;
  std::vector<double> path_w;           // SI, reset each task
  std::vector<double> theta_task_start; // SI denominator reference

  // PackNet trunk ownership: 0 = free, t+1 = owned by task t
  std::vector<int> masks;
  std::vector<double> owned_ref;  // values of owned params, for the
                                  // monotonicity assertion

  std::vector<ReplayExemplar> buffer;

  // LwF: frozen old-head logits on the current task's train windows
  std::vector<std::size_t> teacher_heads;
  std::vector<TensorBuffer> teacher_logits;  // one N_train x C_h per old head

  std::size_t current_task = 0;
};

struct Strategy {
  StrategyConfig cfg;
  StrategyState state;
};

struct BatchLoss {
  double loss = 0.0;                  // CE + penalty, as optimized
  double task_loss = 0.0;             // CE part alone
  std::vector<double> grads;          // gradient of `loss`
  std::vector<double> task_grads;     // gradient of the CE part (SI input)
};

void before_task(Strategy& s, GestureNet& net, const Task& task,
                 std::size_t task_index);

// One training batch given by indices into task.data.train. Runs forward
// in batch-stat mode, updates running statistics, and returns the strategy's
// augmented loss and gradient.
BatchLoss augmented_loss(Strategy& s, GestureNet& net, const Task& task,
                         const std::vector<std::size_t>& batch_indices,
                         std::size_t task_index, Rng& rng);

// path_w_i += -g_i * dtheta_i
void si_accumulate(StrategyState& state, const std::vector<double>& task_grads,
                   const std::vector<double>& delta_theta);

// PackNet ownership must hold after every optimizer step.
void post_step_check(const Strategy& s, const GestureNet& net);

// Audit/resume snapshot: JSON metadata next to a raw little-endian f64
// sidecar (same path + ".f64"). Teacher logits are transient and rebuilt by
// the next before_task.
void save_strategy_state(const StrategyState& state, const std::string& path);
StrategyState load_strategy_state(const std::string& path);

struct ConsolidateOptions {
  std::size_t retrain_epochs = 15;  // PackNet phase 2
  double lr = 1e-3;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  std::uint64_t rng_key = 0;
};

void after_task(Strategy& s, GestureNet& net, const Task& task,
                std::size_t task_index, const ConsolidateOptions& opts);

// Test accuracy on a finished task. PackNet reconstructs the trunk as it
// stood at that task's training round; everything else evaluates the current
// net with the task's head and norm snapshot.
double evaluate_with_mask(const Strategy& s, const GestureNet& net,
                          const std::vector<LabeledWindow>& windows,
                          std::size_t task_index);

}  // namespace owgr
