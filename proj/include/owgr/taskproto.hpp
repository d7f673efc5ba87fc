#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "owgr/rng.hpp"
#include "owgr/synth.hpp"

namespace owgr {

enum class CaseKind { NewContext, NewGesture, NewUser };
enum class Granularity { Coarse, Fine };
enum class Ordering { Random, EasyToHard, HardToEasy };

std::string to_string(CaseKind k);
std::string to_string(Granularity g);
std::string to_string(Ordering o);
CaseKind case_from_string(const std::string& s);
Ordering ordering_from_string(const std::string& s);

struct LabeledWindow {
  TensorBuffer x;      // 6 x 120, standardized with the task's train stats
  int y = 0;           // class index within the owning task's class_map
  int record_id = 0;   // source instance, for split-hygiene checks
};

struct TaskData {
  std::vector<LabeledWindow> train, val, test;
};

struct Task {
  std::string descriptor;
  int task_key = 0;            // stable identity, ascending tie-break
  std::vector<int> class_map;  // gesture ids; kNullClass sits last
  TaskData data;
  ChannelStats stats;          // train-split standardization statistics
};

struct SequenceParams {
  std::optional<Granularity> granularity;        // new_context only
  Ordering ordering = Ordering::Random;
  std::optional<std::size_t> num_tasks;
  std::optional<std::size_t> gestures_per_task;  // new_gesture only

  // per-case defaults: new_context coarse/10, new_user 15, new_gesture 3+5
  std::size_t resolved_num_tasks(CaseKind kind) const;
  Granularity resolved_granularity() const {
    return granularity.value_or(Granularity::Coarse);
  }
  std::size_t resolved_gestures_per_task() const {
    return gestures_per_task.value_or(3);
  }
};

struct TaskSequence {
  CaseKind kind = CaseKind::NewContext;
  SequenceParams params;
  std::vector<Task> tasks;
};

TaskSequence build_sequence(CaseKind kind, const SequenceParams& params,
                            const Dataset& dataset, Rng& rng);

struct ProbeConfig {
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
};

// Held-out validation accuracy of a short finetuning probe (higher = easier).
// Defined with the trainer since it runs one.
double probe_difficulty(const Task& task, const ProbeConfig& cfg);

std::vector<Task> order_tasks(std::vector<Task> tasks, Ordering ordering,
                              const std::vector<double>* scores);

}  // namespace owgr
