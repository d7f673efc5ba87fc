#include "owgr/taskproto.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "owgr/common.hpp"

namespace owgr {

std::string to_string(CaseKind k) {
  switch (k) {
    case CaseKind::NewContext: return "new_context";
    case CaseKind::NewGesture: return "new_gesture";
    case CaseKind::NewUser: return "new_user";
  }
  return "?";
}

std::string to_string(Granularity g) {
  return g == Granularity::Coarse ? "coarse" : "fine";
}

std::string to_string(Ordering o) {
  switch (o) {
    case Ordering::Random: return "random";
    case Ordering::EasyToHard: return "easy_to_hard";
    case Ordering::HardToEasy: return "hard_to_easy";
  }
  return "?";
}

CaseKind case_from_string(const std::string& s) {
  if (s == "new_context" || s == "new-context") return CaseKind::NewContext;
  if (s == "new_gesture" || s == "new-gesture") return CaseKind::NewGesture;
  if (s == "new_user" || s == "new-user") return CaseKind::NewUser;
  throw ParamError("unknown case: " + s);
}

Ordering ordering_from_string(const std::string& s) {
  if (s == "random") return Ordering::Random;
  if (s == "easy_to_hard" || s == "E-H") return Ordering::EasyToHard;
  if (s == "hard_to_easy" || s == "H-E") return Ordering::HardToEasy;
  throw ParamError("unknown ordering: " + s);
}

std::size_t SequenceParams::resolved_num_tasks(CaseKind kind) const {
  if (num_tasks) return *num_tasks;
  switch (kind) {
    case CaseKind::NewContext: return 10;
    case CaseKind::NewUser: return 15;
    case CaseKind::NewGesture: return 5;
  }
  return 0;
}

namespace {

constexpr std::array<int, 4> kCoreGestures = {0, 1, 2, 3};

void validate_params(CaseKind kind, const SequenceParams& p) {
  if (p.granularity && kind != CaseKind::NewContext) {
    throw ParamError("granularity applies to new_context only");
  }
  if (p.gestures_per_task && kind != CaseKind::NewGesture) {
    throw ParamError("gestures_per_task applies to new_gesture only");
  }
  if (kind == CaseKind::NewUser && p.ordering != Ordering::Random) {
    throw ParamError("new_user sequences are unordered (random only)");
  }
  if (kind == CaseKind::NewGesture) {
    const std::size_t g = p.resolved_gestures_per_task();
    if (g < 1 || g > 3) {
      throw ParamError("gestures_per_task must be in [1, 3]");
    }
  }
}

// Instance-level 60/20/20 split; all windows of an instance stay together.
void fill_task_data(Task& task, const std::vector<const Instance*>& pool,
                    const std::map<int, int>& class_of_gesture, Rng& rng) {
  std::vector<const Instance*> shuffled = pool;
  rng.shuffle(shuffled);
  const std::size_t n = shuffled.size();
  const std::size_t n_train = (n * 6) / 10;
  const std::size_t n_val = (n * 2) / 10;
  for (std::size_t i = 0; i < n; ++i) {
    const Instance* inst = shuffled[i];
    auto& bucket = i < n_train            ? task.data.train
                   : i < n_train + n_val  ? task.data.val
                                          : task.data.test;
    const int y = class_of_gesture.at(inst->gesture_id);
    for (auto& w : window_segments(inst->signal)) {
      bucket.push_back({std::move(w), y, inst->record_id});
    }
  }
  if (task.data.train.empty() || task.data.val.empty() ||
      task.data.test.empty()) {
    throw CatalogError("task " + task.descriptor +
                       " has an empty split; need more instances");
  }
  task.stats = compute_channel_stats([&] {
    std::vector<TensorBuffer> xs;
    for (const auto& w : task.data.train) xs.push_back(w.x);
    return xs;
  }());
  for (auto* split : {&task.data.train, &task.data.val, &task.data.test}) {
    for (auto& w : *split) {
      std::vector<TensorBuffer> one;
      one.push_back(std::move(w.x));
      standardize(one, task.stats);
      w.x = std::move(one[0]);
    }
  }
}

std::map<int, int> class_map_lookup(const std::vector<int>& class_map) {
  std::map<int, int> lookup;
  for (std::size_t i = 0; i < class_map.size(); ++i) {
    lookup[class_map[i]] = static_cast<int>(i);
  }
  return lookup;
}

}  // namespace

TaskSequence build_sequence(CaseKind kind, const SequenceParams& params,
                            const Dataset& dataset, Rng& rng) {
  validate_params(kind, params);
  const std::size_t num_tasks = params.resolved_num_tasks(kind);
  if (num_tasks < 1) throw ParamError("num_tasks must be >= 1");

  TaskSequence seq;
  seq.kind = kind;
  seq.params = params;
  const Catalog& cat = dataset.catalog;

  std::vector<int> core_classes(kCoreGestures.begin(), kCoreGestures.end());
  core_classes.push_back(kNullClass);

  if (kind == CaseKind::NewContext) {
    const bool coarse = params.resolved_granularity() == Granularity::Coarse;
    std::vector<int> ids;
    if (coarse) {
      ids = cat.coarse_ids();
    } else {
      for (const auto& c : cat.contexts) ids.push_back(c.context_id);
    }
    if (ids.size() < num_tasks) {
      throw CatalogError("catalog offers " + std::to_string(ids.size()) + " " +
                         to_string(params.resolved_granularity()) +
                         " contexts, need " + std::to_string(num_tasks));
    }
    rng.shuffle(ids);
    ids.resize(num_tasks);
    for (int id : ids) {
      Task task;
      task.task_key = id;
      task.descriptor = "context:" + std::to_string(id);
      task.class_map = core_classes;
      std::set<int> fine;
      if (coarse) {
        for (int c : cat.coarse_children(id)) fine.insert(c);
      } else {
        fine.insert(id);
      }
      std::vector<const Instance*> pool;
      for (const auto& inst : dataset.instances) {
        if (fine.count(inst.context_id) &&
            (inst.gesture_id == kNullClass ||
             std::find(kCoreGestures.begin(), kCoreGestures.end(),
                       inst.gesture_id) != kCoreGestures.end())) {
          pool.push_back(&inst);
        }
      }
      fill_task_data(task, pool, class_map_lookup(task.class_map), rng);
      seq.tasks.push_back(std::move(task));
    }
  } else if (kind == CaseKind::NewUser) {
    std::vector<int> ids;
    for (const auto& u : cat.users) ids.push_back(u.user_id);
    if (ids.size() < num_tasks) {
      throw CatalogError("catalog offers " + std::to_string(ids.size()) +
                         " users, need " + std::to_string(num_tasks));
    }
    rng.shuffle(ids);
    ids.resize(num_tasks);
    for (int id : ids) {
      Task task;
      task.task_key = id;
      task.descriptor = "user:" + std::to_string(id);
      task.class_map = core_classes;
      std::vector<const Instance*> pool;
      for (const auto& inst : dataset.instances) {
        if (inst.user_id == id &&
            (inst.gesture_id == kNullClass ||
             std::find(kCoreGestures.begin(), kCoreGestures.end(),
                       inst.gesture_id) != kCoreGestures.end())) {
          pool.push_back(&inst);
        }
      }
      fill_task_data(task, pool, class_map_lookup(task.class_map), rng);
      seq.tasks.push_back(std::move(task));
    }
  } else {  // NewGesture
    const std::size_t per_task = params.resolved_gestures_per_task();
    if (cat.gestures.size() < per_task) {
      throw CatalogError("not enough gestures in catalog");
    }
    // gesture sets first, then deal each gesture's records across the tasks
    // that use it so no record lands in two tasks
    std::vector<std::vector<int>> sets;
    for (std::size_t t = 0; t < num_tasks; ++t) {
      std::vector<int> all;
      for (const auto& g : cat.gestures) all.push_back(g.gesture_id);
      rng.shuffle(all);
      all.resize(per_task);
      std::sort(all.begin(), all.end());
      sets.push_back(all);
    }
    std::map<int, std::vector<std::size_t>> users_of;  // gesture -> tasks
    for (std::size_t t = 0; t < num_tasks; ++t) {
      for (int g : sets[t]) users_of[g].push_back(t);
    }
    users_of[kNullClass].resize(num_tasks);
    std::iota(users_of[kNullClass].begin(), users_of[kNullClass].end(),
              std::size_t{0});

    std::map<std::size_t, std::vector<const Instance*>> pools;
    for (auto& [gesture, tasks] : users_of) {
      std::vector<const Instance*> records;
      for (const auto& inst : dataset.instances) {
        if (inst.gesture_id == gesture) records.push_back(&inst);
      }
      if (records.size() < tasks.size()) {
        throw CatalogError("too few records of gesture " +
                           std::to_string(gesture));
      }
      rng.shuffle(records);
      for (std::size_t i = 0; i < records.size(); ++i) {
        pools[tasks[i % tasks.size()]].push_back(records[i]);
      }
    }
    for (std::size_t t = 0; t < num_tasks; ++t) {
      Task task;
      task.task_key = static_cast<int>(t);
      std::string desc = "gestures:";
      for (int g : sets[t]) desc += std::to_string(g) + "+";
      desc.pop_back();
      task.descriptor = desc;
      task.class_map = sets[t];
      task.class_map.push_back(kNullClass);
      fill_task_data(task, pools[t], class_map_lookup(task.class_map), rng);
      seq.tasks.push_back(std::move(task));
    }
  }

  if (params.ordering != Ordering::Random) {
    std::vector<double> scores;
    for (const auto& t : seq.tasks) {
      scores.push_back(probe_difficulty(t, {.epochs = 10, .seed = 0}));
    }
    seq.tasks = order_tasks(std::move(seq.tasks), params.ordering, &scores);
  }
  return seq;
}

std::vector<Task> order_tasks(std::vector<Task> tasks, Ordering ordering,
                              const std::vector<double>* scores) {
  if (ordering == Ordering::Random) return tasks;
  if (scores == nullptr || scores->size() != tasks.size()) {
    throw ParamError("ordering by difficulty needs one score per task");
  }
  std::vector<std::size_t> idx(tasks.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double sa = (*scores)[a], sb = (*scores)[b];
    if (sa != sb) {
      return ordering == Ordering::EasyToHard ? sa > sb : sa < sb;
    }
    return tasks[a].task_key < tasks[b].task_key;
  });
  std::vector<Task> out;
  out.reserve(tasks.size());
  for (std::size_t i : idx) out.push_back(std::move(tasks[i]));
  return out;
}

}  // namespace owgr
