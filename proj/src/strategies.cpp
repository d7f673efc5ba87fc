#include "owgr/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"

#include "owgr/common.hpp"
#include "owgr/eval.hpp"

namespace owgr {

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Finetune: return "finetune";
    case StrategyKind::Lwf: return "lwf";
    case StrategyKind::Si: return "si";
    case StrategyKind::Packnet: return "packnet";
    case StrategyKind::Replay: return "replay";
    case StrategyKind::Mas: return "mas";
  }
  return "?";
}

StrategyKind strategy_from_string(const std::string& s) {
  for (auto k : {StrategyKind::Finetune, StrategyKind::Lwf, StrategyKind::Si,
                 StrategyKind::Packnet, StrategyKind::Replay,
                 StrategyKind::Mas}) {
    if (to_string(k) == s) return k;
  }
  throw ParamError("unknown strategy: " + s);
}

std::vector<std::string> StrategyConfig::decayable_names() const {
  switch (kind) {
    case StrategyKind::Lwf: return {"lwf.lambda"};
    case StrategyKind::Si: return {"si.c"};
    case StrategyKind::Mas: return {"mas.lambda"};
    default: return {};
  }
}

double StrategyConfig::get(const std::string& name) const {
  if (name == "lwf.lambda") return lwf_lambda;
  if (name == "lwf.T") return lwf_temperature;
  if (name == "si.c") return si_c;
  if (name == "si.xi") return si_xi;
  if (name == "mas.lambda") return mas_lambda;
  if (name == "packnet.keep_frac") return packnet_keep_frac;
  if (name == "replay.M") return static_cast<double>(replay_buffer);
  throw ParamError("unknown hyperparameter: " + name);
}

void StrategyConfig::set(const std::string& name, double value) {
  if (name == "lwf.lambda") lwf_lambda = value;
  else if (name == "lwf.T") lwf_temperature = value;
  else if (name == "si.c") si_c = value;
  else if (name == "si.xi") si_xi = value;
  else if (name == "mas.lambda") mas_lambda = value;
  else if (name == "packnet.keep_frac") packnet_keep_frac = value;
  else if (name == "replay.M") replay_buffer = static_cast<std::size_t>(value);
  else throw ParamError("unknown hyperparameter: " + name);
}

void StrategyConfig::validate() const {
  if (lwf_lambda < 0 || si_c < 0 || mas_lambda < 0) {
    throw ParamError("stability hyperparameters must be >= 0");
  }
  if (lwf_temperature <= 0 || si_xi <= 0) {
    throw ParamError("lwf.T and si.xi must be > 0");
  }
  if (packnet_keep_frac <= 0 || packnet_keep_frac >= 1) {
    throw ParamError("packnet.keep_frac must lie in (0,1)");
  }
  if (replay_buffer < 1) throw ParamError("replay.M must be >= 1");
}

namespace {

void grow(std::vector<double>& v, std::size_t n) {
  if (v.size() < n) v.resize(n, 0.0);
}

// Teacher pass over the whole train split. The function being preserved is
// the net as it stands entering the new task, so the teacher runs with the
// current running statistics; a task-old snapshot would make the student
// chase stale-normalization behavior by warping trunk weights.
TensorBuffer old_head_logits(const GestureNet& net, const Task& task,
                             std::size_t head) {
  const auto batch = stack_windows(task.data.train);
  const NormStats stats = net.running_stats();
  const auto cache = net.forward_trunk(batch, NormMode::Snapshot, &stats);
  return net.head_logits(cache, head);
}

}  // namespace

void before_task(Strategy& s, GestureNet& net, const Task& task,
                 std::size_t task_index) {
  s.cfg.validate();
  s.state.current_task = task_index;
  auto& st = s.state;

  switch (s.cfg.kind) {
    case StrategyKind::Lwf: {
      st.teacher_heads.clear();
      st.teacher_logits.clear();
      if (s.cfg.lwf_lambda == 0.0) break;  // exact finetune degeneration
      for (std::size_t h = 0; h < task_index; ++h) {
        st.teacher_heads.push_back(h);
        st.teacher_logits.push_back(old_head_logits(net, task, h));
      }
      break;
    }
    case StrategyKind::Si: {
      st.path_w.assign(net.param_count(), 0.0);
      st.theta_task_start = net.params();
      break;
    }
    case StrategyKind::Packnet: {
      if (st.masks.empty()) st.masks.assign(net.trunk_param_count(), 0);
      for (const auto& g : net.trunk_groups()) {
        if (!g.prunable) continue;
        std::size_t free = 0;
        for (std::size_t i = 0; i < g.size; ++i) {
          free += st.masks[g.offset + i] == 0;
        }
        if (free == 0) {
          throw CapacityExhausted("no free parameters left in " + g.name);
        }
      }
      st.owned_ref = net.params();
      break;
    }
    default:
      break;
  }
  (void)task;
}

BatchLoss augmented_loss(Strategy& s, GestureNet& net, const Task& task,
                         const std::vector<std::size_t>& batch_indices,
                         std::size_t task_index, Rng& rng) {
  auto& st = s.state;
  const auto& train = task.data.train;
  if (batch_indices.empty()) throw EmptyTask("empty batch");

  // mixed batch: current samples first, replay exemplars after
  std::vector<std::size_t> replay_pick;
  if (s.cfg.kind == StrategyKind::Replay && !st.buffer.empty()) {
    std::vector<std::size_t> idx(st.buffer.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t k = std::min(st.buffer.size(), batch_indices.size());
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(idx[i], idx[i + rng.uniform_int(idx.size() - i)]);
    }
    replay_pick.assign(idx.begin(), idx.begin() + static_cast<long>(k));
  }

  const std::size_t n_cur = batch_indices.size();
  const std::size_t n_tot = n_cur + replay_pick.size();
  TensorBuffer batch({n_tot, 6, kWindowLen});
  for (std::size_t r = 0; r < n_cur; ++r) {
    const auto& w = train[batch_indices[r]].x;
    std::copy(w.data.begin(), w.data.end(),
              batch.data.begin() + static_cast<long>(r * w.data.size()));
  }
  for (std::size_t r = 0; r < replay_pick.size(); ++r) {
    const auto& w = st.buffer[replay_pick[r]].x;
    std::copy(
        w.data.begin(), w.data.end(),
        batch.data.begin() + static_cast<long>((n_cur + r) * w.data.size()));
  }

  const auto cache = net.forward_trunk(batch, NormMode::Batch, nullptr);
  net.update_running(cache);

  // per-sample routing: (head, row, label)
  std::map<std::size_t, TensorBuffer> dlogits;
  std::map<std::size_t, TensorBuffer> logits;
  auto need_head = [&](std::size_t h) {
    if (!logits.count(h)) {
      logits.emplace(h, net.head_logits(cache, h));
      dlogits.emplace(h, TensorBuffer({n_tot, net.head_classes(h)}));
    }
  };

  double ce = 0.0;
  auto add_ce = [&](std::size_t h, std::size_t row, int label) {
    need_head(h);
    const auto& l = logits.at(h);
    auto& d = dlogits.at(h);
    const std::size_t c = l.shape[1];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw LabelError("label out of range for head");
    }
    double mx = l.at2(row, 0);
    for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, l.at2(row, i));
    double denom = 0.0;
    for (std::size_t i = 0; i < c; ++i) denom += std::exp(l.at2(row, i) - mx);
    const double lse = mx + std::log(denom);
    ce += (lse - l.at2(row, static_cast<std::size_t>(label))) /
          static_cast<double>(n_tot);
    for (std::size_t i = 0; i < c; ++i) {
      const double p = std::exp(l.at2(row, i) - lse);
      d.at2(row, i) +=
          (p - (i == static_cast<std::size_t>(label) ? 1.0 : 0.0)) /
          static_cast<double>(n_tot);
    }
  };

  for (std::size_t r = 0; r < n_cur; ++r) {
    add_ce(task_index, r, train[batch_indices[r]].y);
  }
  for (std::size_t r = 0; r < replay_pick.size(); ++r) {
    const auto& ex = st.buffer[replay_pick[r]];
    add_ce(ex.task, n_cur + r, ex.y);
  }

  double loss = ce;

  // LwF knowledge distillation against the frozen teachers
  if (s.cfg.kind == StrategyKind::Lwf && s.cfg.lwf_lambda > 0.0) {
    const double temp = s.cfg.lwf_temperature;
    const double lam = s.cfg.lwf_lambda;
    for (std::size_t ti = 0; ti < st.teacher_heads.size(); ++ti) {
      const std::size_t h = st.teacher_heads[ti];
      need_head(h);
      const auto& l = logits.at(h);
      auto& d = dlogits.at(h);
      const auto& teacher = st.teacher_logits[ti];
      const std::size_t c = l.shape[1];
      for (std::size_t r = 0; r < n_cur; ++r) {
        const std::size_t trow = batch_indices[r];
        // soft targets p = softmax(teacher/T), q = softmax(current/T)
        std::vector<double> p(c), q(c);
        double mp = -1e300, mq = -1e300;
        for (std::size_t i = 0; i < c; ++i) {
          mp = std::max(mp, teacher.at2(trow, i) / temp);
          mq = std::max(mq, l.at2(r, i) / temp);
        }
        double sp = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
          p[i] = std::exp(teacher.at2(trow, i) / temp - mp);
          q[i] = std::exp(l.at2(r, i) / temp - mq);
          sp += p[i];
          sq += q[i];
        }
        for (std::size_t i = 0; i < c; ++i) {
          p[i] /= sp;
          q[i] /= sq;
          loss += -lam * temp * temp * p[i] * std::log(std::max(q[i], 1e-300)) /
                  static_cast<double>(n_cur);
          d.at2(r, i) +=
              lam * temp * (q[i] - p[i]) / static_cast<double>(n_cur);
        }
      }
    }
  }

  BatchLoss out;
  out.task_loss = ce;
  out.grads = net.backward(cache, dlogits);
  if (s.cfg.kind == StrategyKind::Si) out.task_grads = out.grads;

  // quadratic importance penalty around the last consolidation point
  const double coeff = s.cfg.kind == StrategyKind::Si    ? s.cfg.si_c
                       : s.cfg.kind == StrategyKind::Mas ? s.cfg.mas_lambda
                                                         : 0.0;
  if (coeff > 0.0 && !st.theta_star.empty()) {
    const auto& params = net.params();
    for (std::size_t i = 0; i < st.theta_star.size(); ++i) {
      const double d = params[i] - st.theta_star[i];
      loss += coeff * st.omega[i] * d * d;
      out.grads[i] += 2.0 * coeff * st.omega[i] * d;
    }
  }

  // PackNet phase 1: parameters owned by earlier tasks stay put
  if (s.cfg.kind == StrategyKind::Packnet) {
    for (std::size_t i = 0; i < st.masks.size(); ++i) {
      if (st.masks[i] != 0) out.grads[i] = 0.0;
    }
  }

  if (!std::isfinite(loss)) throw NumericsError("non-finite augmented loss");
  out.loss = loss;
  return out;
}

void si_accumulate(StrategyState& state, const std::vector<double>& task_grads,
                   const std::vector<double>& delta_theta) {
  if (task_grads.size() != delta_theta.size() ||
      state.path_w.size() != task_grads.size()) {
    throw ShapeError("si_accumulate length mismatch");
  }
  for (std::size_t i = 0; i < task_grads.size(); ++i) {
    state.path_w[i] += -task_grads[i] * delta_theta[i];
  }
}

void save_strategy_state(const StrategyState& state, const std::string& path) {
  std::vector<double> raw;
  auto append = [&](const std::vector<double>& v) {
    raw.insert(raw.end(), v.begin(), v.end());
  };
  append(state.omega);
  append(state.theta_star);
  append(state.path_w);
  append(state.theta_task_start);
  append(state.owned_ref);

  nlohmann::json j;
  j["current_task"] = state.current_task;
  j["masks"] = state.masks;
  j["omega"] = state.omega.size();
  j["theta_star"] = state.theta_star.size();
  j["path_w"] = state.path_w.size();
  j["theta_task_start"] = state.theta_task_start.size();
  j["owned_ref"] = state.owned_ref.size();
  auto& buf = j["buffer"] = nlohmann::json::array();
  for (const auto& ex : state.buffer) {
    buf.push_back({{"y", ex.y}, {"task", ex.task}, {"shape", ex.x.shape}});
    append(ex.x.data);
  }

  std::ofstream meta(path, std::ios::trunc);
  if (!meta) throw IoError("cannot write " + path);
  meta << j.dump(2) << '\n';
  std::ofstream side(path + ".f64", std::ios::trunc | std::ios::binary);
  if (!side) throw IoError("cannot write " + path + ".f64");
  side.write(reinterpret_cast<const char*>(raw.data()),
             static_cast<std::streamsize>(raw.size() * sizeof(double)));
  if (!side) throw IoError("short write to " + path + ".f64");
}

StrategyState load_strategy_state(const std::string& path) {
  std::ifstream meta(path);
  if (!meta) throw IoError("cannot read " + path);
  nlohmann::json j;
  meta >> j;
  std::ifstream side(path + ".f64", std::ios::binary);
  if (!side) throw IoError("cannot read " + path + ".f64");

  StrategyState st;
  st.current_task = j.at("current_task").get<std::size_t>();
  st.masks = j.at("masks").get<std::vector<int>>();
  auto take = [&](std::size_t n) {
    std::vector<double> v(n);
    side.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    if (!side) throw IoError("truncated sidecar " + path + ".f64");
    return v;
  };
  st.omega = take(j.at("omega").get<std::size_t>());
  st.theta_star = take(j.at("theta_star").get<std::size_t>());
  st.path_w = take(j.at("path_w").get<std::size_t>());
  st.theta_task_start = take(j.at("theta_task_start").get<std::size_t>());
  st.owned_ref = take(j.at("owned_ref").get<std::size_t>());
  for (const auto& e : j.at("buffer")) {
    ReplayExemplar ex;
    ex.y = e.at("y").get<int>();
    ex.task = e.at("task").get<std::size_t>();
    ex.x.shape = e.at("shape").get<std::vector<std::size_t>>();
    ex.x.data = take(TensorBuffer::numel_of(ex.x.shape));
    st.buffer.push_back(std::move(ex));
  }
  return st;
}

void post_step_check(const Strategy& s, const GestureNet& net) {
  if (s.cfg.kind != StrategyKind::Packnet) return;
  const auto& st = s.state;
  const auto& params = net.params();
  for (std::size_t i = 0; i < st.masks.size(); ++i) {
    const int owner = st.masks[i];
    if (owner != 0 && static_cast<std::size_t>(owner - 1) < st.current_task &&
        params[i] != st.owned_ref[i]) {
      throw ProtocolError("packnet ownership violated at parameter " +
                          std::to_string(i));
    }
  }
}

namespace {

// PackNet phase 2: retrain the subset just assigned to this task.
void packnet_retrain(Strategy& s, GestureNet& net, const Task& task,
                     std::size_t task_index, const ConsolidateOptions& opts) {
  Rng rng = Rng::derive(opts.rng_key, 0x9acc);
  OptimizerState opt(net.param_count(), opts.lr, opts.momentum);
  const auto hg = net.head_group(task_index);
  const int cur_owner = static_cast<int>(task_index) + 1;
  std::vector<std::size_t> order(task.data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < opts.retrain_epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                     order.begin() + static_cast<long>(end));
      const auto batch_x = stack_windows(task.data.train, batch);
      const auto cache = net.forward_trunk(batch_x, NormMode::Batch, nullptr);
      net.update_running(cache);
      std::vector<int> labels;
      for (std::size_t i : batch) labels.push_back(task.data.train[i].y);
      auto [loss, dlogits] =
          cross_entropy(net.head_logits(cache, task_index), labels);
      (void)loss;
      auto grads = net.backward(cache, {{task_index, dlogits}});
      for (std::size_t i = 0; i < s.state.masks.size(); ++i) {
        if (s.state.masks[i] != cur_owner) grads[i] = 0.0;
      }
      for (std::size_t i = net.trunk_param_count(); i < grads.size(); ++i) {
        if (i < hg.offset || i >= hg.offset + hg.size) grads[i] = 0.0;
      }
      sgd_update(net.params(), grads, opt);
      post_step_check(s, net);
    }
  }
}

}  // namespace

void after_task(Strategy& s, GestureNet& net, const Task& task,
                std::size_t task_index, const ConsolidateOptions& opts) {
  auto& st = s.state;
  const std::size_t n = net.param_count();

  switch (s.cfg.kind) {
    case StrategyKind::Si: {
      grow(st.omega, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double dtot = net.params()[i] - st.theta_task_start[i];
        const double w = std::max(st.path_w[i], 0.0);  // rectified
        st.omega[i] += w / (dtot * dtot + s.cfg.si_xi);
      }
      st.theta_star = net.params();
      break;
    }
    case StrategyKind::Mas: {
      grow(st.omega, n);
      const auto& train = task.data.train;
      const double inv_n = 1.0 / static_cast<double>(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) {
        const auto x = stack_windows(train, {i});
        const auto cache =
            net.forward_trunk(x, NormMode::Running, nullptr);
        const auto logits = net.head_logits(cache, task_index);
        TensorBuffer d({1, logits.shape[1]});
        for (std::size_t c = 0; c < logits.shape[1]; ++c) {
          d.at2(0, c) = 2.0 * logits.at2(0, c);
        }
        const auto g = net.backward(cache, {{task_index, d}});
        for (std::size_t k = 0; k < n; ++k) st.omega[k] += std::abs(g[k]) * inv_n;
      }
      st.theta_star = net.params();
      break;
    }
    case StrategyKind::Packnet: {
      const int cur_owner = static_cast<int>(task_index) + 1;
      for (const auto& g : net.trunk_groups()) {
        if (!g.prunable) continue;
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < g.size; ++i) {
          if (st.masks[g.offset + i] == 0) free.push_back(g.offset + i);
        }
        const auto keep = static_cast<std::size_t>(
            std::floor(s.cfg.packnet_keep_frac *
                       static_cast<double>(free.size())));
        if (keep < 1) {
          throw CapacityExhausted("layer " + g.name +
                                  " has no keepable weight left");
        }
        std::sort(free.begin(), free.end(), [&](std::size_t a, std::size_t b) {
          const double ma = std::abs(net.params()[a]);
          const double mb = std::abs(net.params()[b]);
          if (ma != mb) return ma > mb;
          return a < b;
        });
        for (std::size_t i = 0; i < free.size(); ++i) {
          if (i < keep) {
            st.masks[free[i]] = cur_owner;
          } else {
            net.params()[free[i]] = 0.0;  // pruned, still free
          }
        }
      }
      if (task_index == 0) {
        // biases and norm affines train once and freeze with task 1
        for (const auto& g : net.trunk_groups()) {
          if (g.prunable) continue;
          for (std::size_t i = 0; i < g.size; ++i) st.masks[g.offset + i] = 1;
        }
      }
      packnet_retrain(s, net, task, task_index, opts);
      st.owned_ref = net.params();
      break;
    }
    case StrategyKind::Replay: {
      const std::size_t tasks_seen = task_index + 1;
      const std::size_t quota = s.cfg.replay_buffer / tasks_seen;
      std::vector<ReplayExemplar> kept;
      for (std::size_t t = 0; t < task_index; ++t) {
        std::size_t used = 0;
        for (auto& ex : st.buffer) {
          if (ex.task == t && used < quota) {
            kept.push_back(std::move(ex));
            ++used;
          }
        }
      }
      Rng rng = Rng::derive(opts.rng_key, 0xb0f);
      std::vector<std::size_t> idx(task.data.train.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      rng.shuffle(idx);
      const std::size_t take = std::min(quota, idx.size());
      for (std::size_t i = 0; i < take; ++i) {
        const auto& w = task.data.train[idx[i]];
        kept.push_back({w.x, w.y, task_index});
      }
      st.buffer = std::move(kept);
      // rehearsal keeps every seen task's windows in the normalization
      // stream, so the current running statistics describe old tasks
      // better than the snapshots frozen when those tasks finished
      for (std::size_t t = 0; t <= task_index; ++t) net.snapshot_norms(t);
      break;
    }
    default:
      break;
  }

  net.snapshot_norms(task_index);
}

double evaluate_with_mask(const Strategy& s, const GestureNet& net,
                          const std::vector<LabeledWindow>& windows,
                          std::size_t task_index) {
  net.head_classes(task_index);  // MissingHead on unknown tasks
  if (s.cfg.kind != StrategyKind::Packnet) {
    return evaluate_windows(net, windows, task_index,
                            net.snapshot(task_index));
  }
  GestureNet masked = net;
  const int round = static_cast<int>(task_index) + 1;
  for (std::size_t i = 0; i < s.state.masks.size(); ++i) {
    const int owner = s.state.masks[i];
    if (owner == 0 || owner > round) masked.params()[i] = 0.0;
  }
  return evaluate_windows(masked, windows, task_index,
                          net.snapshot(task_index));
}

}  // namespace owgr
