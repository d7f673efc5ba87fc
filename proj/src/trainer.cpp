#include "owgr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "owgr/common.hpp"
#include "owgr/eval.hpp"

namespace owgr {

TensorBuffer stack_windows(const std::vector<LabeledWindow>& windows,
                           const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw EmptyTask("no windows to stack");
  const auto& first = windows.at(indices[0]).x;
  TensorBuffer out({indices.size(), first.shape[0], first.shape[1]});
  const std::size_t stride = first.data.size();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& w = windows.at(indices[r]).x;
    if (w.data.size() != stride) throw ShapeError("ragged window stack");
    std::copy(w.data.begin(), w.data.end(),
              out.data.begin() + static_cast<long>(r * stride));
  }
  return out;
}

TensorBuffer stack_windows(const std::vector<LabeledWindow>& windows) {
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return stack_windows(windows, idx);
}

double evaluate_windows(const GestureNet& net,
                        const std::vector<LabeledWindow>& windows,
                        std::size_t task, const NormStats& stats) {
  if (windows.empty()) throw EmptyTask("no windows to evaluate");
  const auto batch = stack_windows(windows);
  const auto cache = net.forward_trunk(batch, NormMode::Snapshot, &stats);
  const auto logits = net.head_logits(cache, task);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < windows.size(); ++r) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < logits.shape[1]; ++c) {
      if (logits.at2(r, c) > logits.at2(r, arg)) arg = c;
    }
    hits += static_cast<int>(arg) == windows[r].y;
  }
  return static_cast<double>(hits) / static_cast<double>(windows.size());
}

double evaluate(const GestureNet& net,
                const std::vector<LabeledWindow>& windows, std::size_t task) {
  return evaluate_windows(net, windows, task, net.snapshot(task));
}

void TrainConfig::validate() const {
  if (lr_grid.empty()) throw ParamError("empty lr grid");
  for (std::size_t i = 1; i < lr_grid.size(); ++i) {
    if (lr_grid[i] >= lr_grid[i - 1]) throw ParamError("lr grid not descending");
  }
  if (margin <= 0 || margin >= 1) throw ParamError("margin must lie in (0,1)");
  if (decay_factor <= 0 || decay_factor >= 1) {
    throw ParamError("decay_factor must lie in (0,1)");
  }
  if (batch_size < 1 || max_epochs < 1) throw ParamError("degenerate budget");
  if (stop_after < anneal_after) throw ParamError("stop before anneal");
}

EarlyStopSchedule::EarlyStopSchedule(double lr, std::size_t anneal_after,
                                     std::size_t stop_after)
    : lr_(lr), anneal_after_(anneal_after), stop_after_(stop_after) {}

EarlyStopSchedule::Decision EarlyStopSchedule::observe(double val_acc) {
  Decision d;
  ++seen_;
  if (val_acc > best_) {
    best_ = val_acc;
    best_index_ = seen_ - 1;
    streak_ = 0;
    d.improved = true;
  } else {
    ++streak_;
    if (streak_ == anneal_after_) {
      lr_ /= 10.0;
      d.annealed = true;
    }
    if (streak_ >= stop_after_) d.stop = true;
  }
  d.lr = lr_;
  return d;
}

TaskOutcome train_task(const GestureNet& net0, const Strategy& strategy0,
                       const Task& task, std::size_t task_index,
                       const TrainConfig& cfg, double lr,
                       std::size_t max_epochs_override) {
  cfg.validate();
  if (task.data.train.empty() || task.data.val.empty()) {
    throw EmptyTask("task " + task.descriptor + " has an empty split");
  }

  TaskOutcome out{net0, strategy0};
  GestureNet& net = out.net;
  Strategy& strat = out.strategy;
  before_task(strat, net, task, task_index);

  const std::size_t epochs =
      max_epochs_override ? max_epochs_override : cfg.max_epochs;
  Rng shuffle_rng = Rng::derive(cfg.seed, Rng::mix(0x7ea1, task_index));
  Rng strat_rng = Rng::derive(cfg.seed, Rng::mix(0x57a7, task_index));
  OptimizerState opt(net.param_count(), lr, cfg.momentum);
  EarlyStopSchedule sched(lr, cfg.anneal_after, cfg.stop_after);
  const bool is_si = strat.cfg.kind == StrategyKind::Si;

  std::vector<std::size_t> order(task.data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> best_params = net.params();
  NormStats best_running = net.running_stats();
  std::vector<double> theta_before;

  for (std::size_t e = 0; e < epochs; ++e) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                     order.begin() + static_cast<long>(end));
      if (is_si) theta_before = net.params();
      auto bl = augmented_loss(strat, net, task, batch, task_index, strat_rng);
      sgd_update(net.params(), bl.grads, opt);
      post_step_check(strat, net);
      if (is_si) {
        std::vector<double> delta(net.param_count());
        for (std::size_t i = 0; i < delta.size(); ++i) {
          delta[i] = net.params()[i] - theta_before[i];
        }
        si_accumulate(strat.state, bl.task_grads, delta);
      }
      loss_sum += bl.loss;
      ++batches;
    }
    const double val_acc =
        evaluate_windows(net, task.data.val, task_index, net.running_stats());
    const auto d = sched.observe(val_acc);
    if (d.improved) {
      best_params = net.params();
      best_running = net.running_stats();
    }
    opt.lr = d.lr;
    out.epochs_run = e + 1;
    if (cfg.log) {
      nlohmann::json line{{"task", task_index},
                          {"epoch", e},
                          {"train_loss", loss_sum / std::max<std::size_t>(batches, 1)},
                          {"val_acc", val_acc},
                          {"lr", d.lr}};
      for (const auto& name : strat.cfg.decayable_names()) {
        line[name] = strat.cfg.get(name);
      }
      *cfg.log << line.dump() << '\n';
    }
    if (d.stop) break;
  }

  net.params() = best_params;
  net.set_running_stats(best_running);
  out.val_acc = sched.best();

  ConsolidateOptions copts;
  copts.retrain_epochs = cfg.packnet_retrain_epochs;
  copts.lr = lr;
  copts.batch_size = cfg.batch_size;
  copts.momentum = cfg.momentum;
  copts.rng_key = Rng::mix(cfg.seed, Rng::mix(0xaf7e, task_index));
  after_task(strat, net, task, task_index, copts);

  out.lr = lr;
  out.hyperparams = strat.cfg;
  return out;
}

std::pair<double, double> plasticity_search_with(
    const std::vector<double>& lr_grid,
    const std::function<double(double)>& probe) {
  if (lr_grid.empty()) throw ParamError("empty lr grid");
  double best_lr = lr_grid.front();
  double best_acc = -1.0;
  for (double lr : lr_grid) {
    const double acc = probe(lr);
    if (acc > best_acc) {  // ties keep the earlier (larger) lr
      best_acc = acc;
      best_lr = lr;
    }
  }
  return {best_lr, best_acc};
}

std::pair<double, double> plasticity_search(const GestureNet& net,
                                            const Task& task,
                                            std::size_t task_index,
                                            const TrainConfig& cfg) {
  cfg.validate();
  return plasticity_search_with(cfg.lr_grid, [&](double lr) {
    Strategy probe;
    probe.cfg.kind = StrategyKind::Finetune;
    return train_task(net, probe, task, task_index, cfg, lr, cfg.probe_epochs)
        .val_acc;
  });
}

TaskOutcome stability_search_with(const StrategyConfig& init, double best_lr,
                                  double ref_acc, const TrainConfig& cfg,
                                  const TrialFn& trial) {
  cfg.validate();
  const auto names = init.decayable_names();
  auto run = [&](const StrategyConfig& c) {
    TaskOutcome t = trial(c, best_lr);
    t.lr = best_lr;
    t.hyperparams = c;
    return t;
  };
  const double bar = ref_acc - cfg.margin;

  TaskOutcome first = run(init);
  if (names.empty() || first.val_acc >= bar) return first;

  TaskOutcome best_seen = first;
  StrategyConfig current = init;
  std::size_t rounds = 0;
  while (true) {
    ++rounds;
    for (const auto& name : names) {
      StrategyConfig cand = current;
      cand.set(name, cand.get(name) * cfg.decay_factor);
      TaskOutcome t = run(cand);
      if (t.val_acc > best_seen.val_acc) best_seen = t;
      if (t.val_acc >= bar) {
        t.decay_rounds = rounds;
        return t;
      }
    }
    for (const auto& name : names) {
      current.set(name, current.get(name) * cfg.decay_factor);
    }
    bool floored = true;
    for (const auto& name : names) {
      floored = floored && current.get(name) < cfg.hyperparam_floor;
    }
    if (floored) {
      best_seen.flagged = true;
      best_seen.decay_rounds = rounds;
      return best_seen;
    }
    TaskOutcome t = run(current);
    if (t.val_acc > best_seen.val_acc) best_seen = t;
    if (t.val_acc >= bar) {
      t.decay_rounds = rounds;
      return t;
    }
  }
}

TaskOutcome stability_search(const GestureNet& net, const Strategy& strategy,
                             const Task& task, std::size_t task_index,
                             double best_lr, double ref_acc,
                             const TrainConfig& cfg) {
  return stability_search_with(
      strategy.cfg, best_lr, ref_acc, cfg,
      [&](const StrategyConfig& c, double lr) {
        Strategy s = strategy;
        s.cfg = c;
        return train_task(net, s, task, task_index, cfg, lr);
      });
}

TaskOutcome run_task_pipeline(const GestureNet& net, const Strategy& strategy,
                              const Task& task, std::size_t task_index,
                              const TrainConfig& cfg) {
  const auto [best_lr, ref_acc] =
      plasticity_search(net, task, task_index, cfg);
  return stability_search(net, strategy, task, task_index, best_lr, ref_acc,
                          cfg);
}

double probe_difficulty(const Task& task, const ProbeConfig& cfg) {
  Rng init = Rng::derive(cfg.seed, 0xd1ff);
  GestureNet net(NetConfig{}, init);
  net.add_head(task.class_map.size(), init);
  TrainConfig tc;
  tc.seed = cfg.seed;
  tc.probe_epochs = cfg.epochs;
  return plasticity_search(net, task, 0, tc).second;
}

}  // namespace owgr
