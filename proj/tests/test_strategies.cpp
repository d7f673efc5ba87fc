#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "owgr/common.hpp"
#include "owgr/eval.hpp"
#include "owgr/strategies.hpp"
#include "owgr/trainer.hpp"

using namespace owgr;

namespace {

Task toy_task(std::size_t n_train, std::size_t n_val, std::uint64_t seed,
              std::size_t classes = 2, double signal = 2.0) {
  Task t;
  t.descriptor = "toy" + std::to_string(seed);
  for (std::size_t c = 0; c + 1 < classes; ++c) t.class_map.push_back((int)c);
  t.class_map.push_back(kNullClass);
  Rng rng = Rng::derive(seed, 0x707);
  auto make = [&](std::size_t n, std::vector<LabeledWindow>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      const int y = static_cast<int>(i % classes);
      TensorBuffer x({6, kWindowLen});
      for (std::size_t c = 0; c < 6; ++c) {
        for (std::size_t s = 0; s < kWindowLen; ++s) {
          double v = 0.1 * rng.normal();
          if (c == static_cast<std::size_t>(y)) v += signal;
          x.at2(c, s) = v;
        }
      }
      out.push_back({std::move(x), y, static_cast<int>(i)});
    }
  };
  make(n_train, t.data.train);
  make(n_val, t.data.val);
  t.data.test = t.data.val;
  return t;
}

GestureNet fresh_net(std::uint64_t seed, std::initializer_list<std::size_t> heads) {
  Rng rng = Rng::derive(seed, 0x4e7);
  GestureNet net(NetConfig{}, rng);
  for (auto c : heads) net.add_head(c, rng);
  return net;
}

std::vector<std::size_t> first_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

TEST_CASE("decayable hyperparameter sets match the decay protocol") {
  StrategyConfig c;
  c.kind = StrategyKind::Lwf;
  CHECK(c.decayable_names() == std::vector<std::string>{"lwf.lambda"});
  c.kind = StrategyKind::Si;
  CHECK(c.decayable_names() == std::vector<std::string>{"si.c"});
  c.kind = StrategyKind::Mas;
  CHECK(c.decayable_names() == std::vector<std::string>{"mas.lambda"});
  for (auto k : {StrategyKind::Finetune, StrategyKind::Packnet,
                 StrategyKind::Replay}) {
    c.kind = k;
    CHECK(c.decayable_names().empty());
  }

  CHECK(c.get("lwf.T") == 2.0);
  CHECK(c.get("si.xi") == 1e-3);
  CHECK(c.get("packnet.keep_frac") == 0.5);
  CHECK(c.get("replay.M") == 1000.0);
  CHECK_THROWS_AS(c.get("nope"), ParamError);

  StrategyConfig bad;
  bad.lwf_temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = {};
  bad.packnet_keep_frac = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = {};
  bad.si_c = -0.5;
  CHECK_THROWS_AS(bad.validate(), ParamError);
}

TEST_CASE("first-task LwF reduces to plain cross entropy") {
  const auto task = toy_task(12, 4, 1);
  auto net_a = fresh_net(2, {2});
  auto net_b = fresh_net(2, {2});
  Strategy lwf, ft;
  lwf.cfg.kind = StrategyKind::Lwf;
  ft.cfg.kind = StrategyKind::Finetune;
  before_task(lwf, net_a, task, 0);
  before_task(ft, net_b, task, 0);
  CHECK(lwf.state.teacher_heads.empty());
  Rng ra(9), rb(9);
  const auto a = augmented_loss(lwf, net_a, task, first_indices(12), 0, ra);
  const auto b = augmented_loss(ft, net_b, task, first_indices(12), 0, rb);
  CHECK(a.loss == b.loss);
  CHECK(a.grads == b.grads);
}

TEST_CASE("SI starts each task with a zeroed path accumulator") {
  const auto task = toy_task(8, 4, 2);
  auto net = fresh_net(3, {2});
  Strategy si;
  si.cfg.kind = StrategyKind::Si;
  before_task(si, net, task, 0);
  CHECK(si.state.path_w == std::vector<double>(net.param_count(), 0.0));
  CHECK(si.state.theta_task_start == net.params());
}

TEST_CASE("quadratic penalty vanishes at the consolidation point") {
  const auto task = toy_task(10, 4, 3);
  for (auto kind : {StrategyKind::Si, StrategyKind::Mas}) {
    auto net_a = fresh_net(4, {2});
    auto net_b = fresh_net(4, {2});
    Strategy pen, ft;
    pen.cfg.kind = kind;
    pen.state.theta_star = net_a.params();  // theta == theta*
    pen.state.omega.assign(net_a.param_count(), 3.0);
    ft.cfg.kind = StrategyKind::Finetune;
    Rng ra(1), rb(1);
    const auto a = augmented_loss(pen, net_a, task, first_indices(10), 0, ra);
    const auto b = augmented_loss(ft, net_b, task, first_indices(10), 0, rb);
    CHECK(a.loss == b.loss);
    CHECK(a.grads == b.grads);
  }
}

TEST_CASE("quadratic penalty has the analytic value and gradient") {
  const auto task = toy_task(10, 4, 5);
  auto net_a = fresh_net(6, {2});
  auto net_b = fresh_net(6, {2});
  Strategy mas, ft;
  mas.cfg.kind = StrategyKind::Mas;  // lambda = 1
  ft.cfg.kind = StrategyKind::Finetune;
  const std::size_t i = 17;
  mas.state.theta_star = net_a.params();
  mas.state.theta_star[i] -= 0.5;  // theta - theta* = 0.5
  mas.state.omega.assign(net_a.param_count(), 0.0);
  mas.state.omega[i] = 2.0;
  Rng ra(1), rb(1);
  const auto a = augmented_loss(mas, net_a, task, first_indices(10), 0, ra);
  const auto b = augmented_loss(ft, net_b, task, first_indices(10), 0, rb);
  CHECK(a.loss - b.loss == doctest::Approx(1.0 * 2.0 * 0.25).epsilon(1e-12));
  CHECK(a.grads[i] - b.grads[i] ==
        doctest::Approx(2.0 * 1.0 * 2.0 * 0.5).epsilon(1e-12));
  for (std::size_t k = 0; k < a.grads.size(); ++k) {
    if (k != i) CHECK(a.grads[k] == b.grads[k]);
  }
}

TEST_CASE("penalty gradient matches central finite differences") {
  const auto task = toy_task(8, 4, 6);
  auto net = fresh_net(7, {2});
  Strategy si;
  si.cfg.kind = StrategyKind::Si;
  si.cfg.si_c = 0.7;
  Rng wr(88);
  si.state.theta_star = net.params();
  si.state.omega.resize(net.param_count());
  for (auto& o : si.state.omega) o = wr.uniform(0.0, 2.0);
  for (auto& t : si.state.theta_star) t += 0.05 * wr.normal();
  before_task(si, net, task, 0);
  si.state.theta_star = net.params();
  for (auto& t : si.state.theta_star) t += 0.05 * wr.normal();

  Rng rg(1);
  const auto base = augmented_loss(si, net, task, first_indices(8), 0, rg);
  const double eps = 1e-5;
  for (std::size_t trial = 0; trial < 6; ++trial) {
    const std::size_t i = wr.uniform_int(net.param_count());
    const double orig = net.params()[i];
    Rng r1(1), r2(1);
    net.params()[i] = orig + eps;
    const double lp = augmented_loss(si, net, task, first_indices(8), 0, r1).loss;
    net.params()[i] = orig - eps;
    const double lm = augmented_loss(si, net, task, first_indices(8), 0, r2).loss;
    net.params()[i] = orig;
    const double num = (lp - lm) / (2 * eps);
    const double denom = std::max({std::abs(num), std::abs(base.grads[i]), 1e-8});
    CHECK(std::abs(num - base.grads[i]) / denom < 1e-5);
  }
}

TEST_CASE("path accumulation follows -g * dtheta") {
  StrategyState st;
  st.path_w = {0.0};
  si_accumulate(st, {-1.0}, {0.1});
  CHECK(st.path_w[0] == doctest::Approx(0.1).epsilon(1e-15));
  si_accumulate(st, {5.0}, {0.0});
  CHECK(st.path_w[0] == doctest::Approx(0.1).epsilon(1e-15));
  st.path_w = {0.0};
  for (int i = 0; i < 3; ++i) si_accumulate(st, {-1.0}, {0.1});
  CHECK(st.path_w[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(si_accumulate(st, {1.0, 2.0}, {0.1}), ShapeError);
}

TEST_CASE("LwF distillation: matched logits add teacher entropy, zero gradient") {
  const auto task = toy_task(16, 4, 8);
  auto net = fresh_net(9, {2, 2});

  // make batch, running, and snapshot statistics coincide on the full
  // train set so the student reproduces the teacher exactly
  const auto full = stack_windows(task.data.train);
  const auto warm = net.forward_trunk(full, NormMode::Batch, nullptr);
  net.update_running(warm, 1.0);
  net.snapshot_norms(0);

  Strategy lwf, ft;
  lwf.cfg.kind = StrategyKind::Lwf;  // lambda 1, T 2
  ft.cfg.kind = StrategyKind::Finetune;
  before_task(lwf, net, task, 1);
  REQUIRE(lwf.state.teacher_heads == std::vector<std::size_t>{0});

  auto net_b = net;
  Rng ra(1), rb(1);
  const auto a = augmented_loss(lwf, net, task, first_indices(16), 1, ra);
  const auto b = augmented_loss(ft, net_b, task, first_indices(16), 1, rb);

  // distillation gradient vanishes when student equals teacher
  for (std::size_t k = 0; k < a.grads.size(); ++k) {
    CHECK(a.grads[k] == doctest::Approx(b.grads[k]).epsilon(1e-9));
  }

  // loss excess = lambda T^2 * mean teacher soft-target entropy
  const auto& teacher = lwf.state.teacher_logits[0];
  double entropy = 0.0;
  const double temp = 2.0;
  for (std::size_t r = 0; r < teacher.shape[0]; ++r) {
    double mx = -1e300, z = 0.0;
    for (std::size_t c = 0; c < teacher.shape[1]; ++c) {
      mx = std::max(mx, teacher.at2(r, c) / temp);
    }
    for (std::size_t c = 0; c < teacher.shape[1]; ++c) {
      z += std::exp(teacher.at2(r, c) / temp - mx);
    }
    for (std::size_t c = 0; c < teacher.shape[1]; ++c) {
      const double p = std::exp(teacher.at2(r, c) / temp - mx) / z;
      entropy += -p * std::log(p);
    }
  }
  entropy /= static_cast<double>(teacher.shape[0]);
  CHECK(a.loss - b.task_loss ==
        doctest::Approx(temp * temp * entropy).epsilon(1e-9));
}

TEST_CASE("replay mixes buffer samples into the batch with equal weights") {
  const auto t0 = toy_task(8, 4, 10);
  const auto t1 = toy_task(12, 4, 11);
  auto net = fresh_net(12, {2, 2});
  Strategy rp;
  rp.cfg.kind = StrategyKind::Replay;
  for (std::size_t i = 0; i < 4; ++i) {
    rp.state.buffer.push_back({t0.data.train[i].x, t0.data.train[i].y, 0});
  }
  before_task(rp, net, t1, 1);
  Rng rg(42), probe(42);
  auto net_copy = net;
  const auto out = augmented_loss(rp, net, t1, first_indices(12), 1, rg);

  // reproduce the exemplar draw, then recount the mixed-batch loss by hand
  std::vector<std::size_t> idx{0, 1, 2, 3};
  for (std::size_t i = 0; i < 4; ++i) {
    std::swap(idx[i], idx[i + probe.uniform_int(idx.size() - i)]);
  }
  TensorBuffer mixed({16, 6, kWindowLen});
  std::vector<int> labels(16);
  std::vector<std::size_t> heads(16);
  for (std::size_t r = 0; r < 12; ++r) {
    const auto& w = t1.data.train[r];
    std::copy(w.x.data.begin(), w.x.data.end(),
              mixed.data.begin() + static_cast<long>(r * w.x.data.size()));
    labels[r] = w.y;
    heads[r] = 1;
  }
  for (std::size_t r = 0; r < 4; ++r) {
    const auto& ex = rp.state.buffer[idx[r]];
    std::copy(ex.x.data.begin(), ex.x.data.end(),
              mixed.data.begin() +
                  static_cast<long>((12 + r) * ex.x.data.size()));
    labels[12 + r] = ex.y;
    heads[12 + r] = ex.task;
  }
  const auto cache = net_copy.forward_trunk(mixed, NormMode::Batch, nullptr);
  double want = 0.0;
  std::map<std::size_t, TensorBuffer> logits;
  for (std::size_t r = 0; r < 16; ++r) {
    if (!logits.count(heads[r])) {
      logits.emplace(heads[r], net_copy.head_logits(cache, heads[r]));
    }
    const auto& l = logits.at(heads[r]);
    double mx = -1e300, z = 0.0;
    for (std::size_t c = 0; c < l.shape[1]; ++c) mx = std::max(mx, l.at2(r, c));
    for (std::size_t c = 0; c < l.shape[1]; ++c) z += std::exp(l.at2(r, c) - mx);
    want += (mx + std::log(z) -
             l.at2(r, static_cast<std::size_t>(labels[r]))) /
            16.0;
  }
  CHECK(out.loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("replay quotas shrink to floor(M/t) with a bounded buffer") {
  auto net = fresh_net(13, {2, 2, 2});
  Strategy rp;
  rp.cfg.kind = StrategyKind::Replay;
  rp.cfg.replay_buffer = 6;
  ConsolidateOptions opts;
  const auto t0 = toy_task(10, 4, 20);
  const auto t1 = toy_task(10, 4, 21);
  const auto t2 = toy_task(10, 4, 22);
  after_task(rp, net, t0, 0, opts);
  CHECK(rp.state.buffer.size() == 6);  // floor(6/1)
  after_task(rp, net, t1, 1, opts);
  after_task(rp, net, t2, 2, opts);
  std::map<std::size_t, int> per_task;
  for (const auto& ex : rp.state.buffer) per_task[ex.task]++;
  CHECK(per_task[0] == 2);
  CHECK(per_task[1] == 2);
  CHECK(per_task[2] == 2);
  CHECK(rp.state.buffer.size() <= rp.cfg.replay_buffer);
}

TEST_CASE("MAS importance matches the analytic head-bias sensitivity") {
  const auto task = toy_task(1, 1, 30);  // single training sample
  auto net = fresh_net(14, {2});
  Strategy mas;
  mas.cfg.kind = StrategyKind::Mas;
  ConsolidateOptions opts;
  after_task(mas, net, task, 0, opts);

  const auto x = stack_windows(task.data.train, {0});
  const auto logits =
      net.forward(x, 0, NormMode::Snapshot, &net.running_stats());
  const auto hg = net.head_group(0);
  const std::size_t f = net.config().neck_channels;
  const std::size_t bias_off = hg.offset + 2 * f;
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(mas.state.omega[bias_off + c] ==
          doctest::Approx(std::abs(2.0 * logits.at2(0, c))).epsilon(1e-12));
  }
  CHECK(mas.state.theta_star == net.params());
}

TEST_CASE("importance accumulators never shrink across tasks") {
  const auto t0 = toy_task(6, 2, 31);
  const auto t1 = toy_task(6, 2, 32);
  for (auto kind : {StrategyKind::Si, StrategyKind::Mas}) {
    auto net = fresh_net(15, {2, 2});
    Strategy s;
    s.cfg.kind = kind;
    ConsolidateOptions opts;
    before_task(s, net, t0, 0);
    if (kind == StrategyKind::Si) {
      for (auto& w : s.state.path_w) w = 0.01;  // pretend progress
    }
    after_task(s, net, t0, 0, opts);
    const auto omega1 = s.state.omega;
    for (double o : omega1) CHECK(o >= 0.0);
    before_task(s, net, t1, 1);
    after_task(s, net, t1, 1, opts);
    REQUIRE(s.state.omega.size() >= omega1.size());
    for (std::size_t i = 0; i < omega1.size(); ++i) {
      CHECK(s.state.omega[i] >= omega1[i]);
    }
  }
}

TEST_CASE("packnet prunes free weights by magnitude") {
  const auto task = toy_task(8, 4, 40);
  auto net = fresh_net(16, {2, 2});
  Strategy pn;
  pn.cfg.kind = StrategyKind::Packnet;
  before_task(pn, net, task, 0);  // sizes the mask vector

  // pretend task 0 owns everything except a handful of probe slots
  for (auto& m : pn.state.masks) m = 1;
  const auto& groups = net.trunk_groups();
  const ParamGroup* probe = nullptr;
  for (const auto& g : groups) {
    if (g.prunable) {
      for (std::size_t i = 0; i < 4; ++i) pn.state.masks[g.offset + i] = 0;
      if (!probe) probe = &g;
    }
  }
  REQUIRE(probe != nullptr);
  net.params()[probe->offset + 0] = 0.5;
  net.params()[probe->offset + 1] = -0.1;
  net.params()[probe->offset + 2] = 0.3;
  net.params()[probe->offset + 3] = -0.9;

  ConsolidateOptions opts;
  opts.retrain_epochs = 0;
  pn.state.current_task = 1;
  after_task(pn, net, task, 1, opts);

  CHECK(pn.state.masks[probe->offset + 3] == 2);  // |−0.9| kept
  CHECK(pn.state.masks[probe->offset + 0] == 2);  // |0.5| kept
  CHECK(pn.state.masks[probe->offset + 1] == 0);  // pruned, still free
  CHECK(pn.state.masks[probe->offset + 2] == 0);
  CHECK(net.params()[probe->offset + 1] == 0.0);
  CHECK(net.params()[probe->offset + 2] == 0.0);
}

TEST_CASE("packnet rejects training without free capacity") {
  const auto task = toy_task(8, 4, 41);
  auto net = fresh_net(17, {2});
  Strategy pn;
  pn.cfg.kind = StrategyKind::Packnet;
  before_task(pn, net, task, 0);
  for (auto& m : pn.state.masks) m = 1;
  CHECK_THROWS_AS(before_task(pn, net, task, 1), CapacityExhausted);
  ConsolidateOptions opts;
  opts.retrain_epochs = 0;
  CHECK_THROWS_AS(after_task(pn, net, task, 1, opts), CapacityExhausted);
}

TEST_CASE("packnet ownership violations trip the step check") {
  const auto task = toy_task(8, 4, 42);
  auto net = fresh_net(18, {2});
  Strategy pn;
  pn.cfg.kind = StrategyKind::Packnet;
  before_task(pn, net, task, 0);
  pn.state.masks[5] = 1;
  pn.state.current_task = 1;
  pn.state.owned_ref = net.params();
  post_step_check(pn, net);  // unchanged: fine
  net.params()[5] += 1.0;
  CHECK_THROWS_AS(post_step_check(pn, net), ProtocolError);
}

TEST_CASE("zeroed stability knobs degenerate to finetune bit-for-bit") {
  const auto task = toy_task(24, 8, 50);
  TrainConfig cfg;
  cfg.seed = 77;
  Strategy ft;
  ft.cfg.kind = StrategyKind::Finetune;
  const auto base = train_task(fresh_net(19, {2}), ft, task, 0, cfg, 1e-3, 3);

  for (auto kind : {StrategyKind::Lwf, StrategyKind::Si, StrategyKind::Mas,
                    StrategyKind::Replay}) {
    Strategy s;
    s.cfg.kind = kind;
    for (const auto& name : s.cfg.decayable_names()) s.cfg.set(name, 0.0);
    const auto out = train_task(fresh_net(19, {2}), s, task, 0, cfg, 1e-3, 3);
    CHECK(out.net.params() == base.net.params());
    CHECK(out.val_acc == base.val_acc);
  }
}

TEST_CASE("masked evaluation equals plain evaluation for the current task") {
  const auto task = toy_task(24, 12, 60);
  TrainConfig cfg;
  cfg.seed = 3;
  Strategy ft;
  ft.cfg.kind = StrategyKind::Finetune;
  auto out = train_task(fresh_net(20, {2}), ft, task, 0, cfg, 1e-2, 5);
  const double direct = evaluate(out.net, task.data.test, 0);
  CHECK(evaluate_with_mask(out.strategy, out.net, task.data.test, 0) == direct);
  CHECK_THROWS_AS(evaluate_with_mask(out.strategy, out.net, task.data.test, 3),
                  MissingHead);
}

TEST_CASE("strategy state survives a save/load round trip") {
  StrategyState st;
  st.current_task = 4;
  st.masks = {0, 1, 2, 0, 3};
  st.omega = {0.5, 1.5};
  st.theta_star = {1.0, -2.0, 3.0};
  st.path_w = {0.25};
  st.theta_task_start = {9.0, 8.0};
  st.owned_ref = {7.0};
  ReplayExemplar ex;
  ex.x = TensorBuffer({2, 3});
  std::iota(ex.x.data.begin(), ex.x.data.end(), 1.0);
  ex.y = 1;
  ex.task = 2;
  st.buffer.push_back(ex);

  const std::string path = "/tmp/owgr_state_test.json";
  save_strategy_state(st, path);
  const auto back = load_strategy_state(path);
  CHECK(back.current_task == st.current_task);
  CHECK(back.masks == st.masks);
  CHECK(back.omega == st.omega);
  CHECK(back.theta_star == st.theta_star);
  CHECK(back.path_w == st.path_w);
  CHECK(back.theta_task_start == st.theta_task_start);
  CHECK(back.owned_ref == st.owned_ref);
  REQUIRE(back.buffer.size() == 1);
  CHECK(back.buffer[0].x.data == ex.x.data);
  CHECK(back.buffer[0].x.shape == ex.x.shape);
  CHECK(back.buffer[0].y == ex.y);
  CHECK(back.buffer[0].task == ex.task);
  std::remove(path.c_str());
  std::remove((path + ".f64").c_str());
}
