#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "owgr/common.hpp"
#include "owgr/taskproto.hpp"
#include "owgr/trainer.hpp"

using namespace owgr;

namespace {

Dataset small_dataset(std::uint64_t seed = 7, std::size_t per_class = 5) {
  GenCounts counts;
  counts.per_class_per_context = per_class;
  return gen_dataset(default_catalog(), counts, seed);
}

// trivially separable two-class task: sign of channel 0
Task toy_task(std::size_t n_train, std::size_t n_val, bool shuffle_labels,
              std::uint64_t seed) {
  Task t;
  t.descriptor = "toy";
  t.class_map = {0, kNullClass};
  Rng rng = Rng::derive(seed, 0x70);
  auto make = [&](std::size_t n, std::vector<LabeledWindow>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      const int y = static_cast<int>(i % 2);
      TensorBuffer x({6, kWindowLen});
      for (std::size_t c = 0; c < 6; ++c) {
        for (std::size_t s = 0; s < kWindowLen; ++s) {
          double v = 0.05 * rng.normal();
          if (c == 0 && !shuffle_labels) v += y == 0 ? 3.0 : -3.0;
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

}  // namespace

TEST_CASE("context sequence defaults: ten coarse tasks, five-way heads") {
  const auto ds = small_dataset();
  Rng rng = Rng::derive(3, 1);
  const auto seq = build_sequence(CaseKind::NewContext, {}, ds, rng);
  CHECK(seq.tasks.size() == 10);
  for (const auto& t : seq.tasks) {
    CHECK(t.class_map.size() == 5);
    CHECK(t.class_map.back() == kNullClass);
    CHECK(!t.data.train.empty());
    CHECK(!t.data.val.empty());
    CHECK(!t.data.test.empty());
  }
  // distinct coarse contexts
  std::set<int> keys;
  for (const auto& t : seq.tasks) keys.insert(t.task_key);
  CHECK(keys.size() == 10);
}

TEST_CASE("single-gesture tasks get a two-way head") {
  const auto ds = small_dataset();
  SequenceParams p;
  p.gestures_per_task = 1;
  p.num_tasks = 3;
  Rng rng = Rng::derive(3, 2);
  const auto seq = build_sequence(CaseKind::NewGesture, p, ds, rng);
  CHECK(seq.tasks.size() == 3);
  for (const auto& t : seq.tasks) {
    CHECK(t.class_map.size() == 2);
    CHECK(t.class_map.back() == kNullClass);
  }
}

TEST_CASE("user sequences are reproducible under a fixed seed") {
  const auto ds = small_dataset();
  SequenceParams p;
  p.num_tasks = 6;
  auto run = [&] {
    Rng rng = Rng::derive(11, 4);
    return build_sequence(CaseKind::NewUser, p, ds, rng);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.tasks.size() == b.tasks.size());
  for (std::size_t i = 0; i < a.tasks.size(); ++i) {
    CHECK(a.tasks[i].descriptor == b.tasks[i].descriptor);
    REQUIRE(a.tasks[i].data.train.size() == b.tasks[i].data.train.size());
    CHECK(a.tasks[i].data.train.front().x.data ==
          b.tasks[i].data.train.front().x.data);
  }
}

TEST_CASE("splits and tasks never share a source record") {
  const auto ds = small_dataset();
  for (auto kind : {CaseKind::NewContext, CaseKind::NewGesture}) {
    SequenceParams p;
    if (kind == CaseKind::NewGesture) p.num_tasks = 4;
    Rng rng = Rng::derive(5, 9);
    const auto seq = build_sequence(kind, p, ds, rng);
    std::set<int> seen_anywhere;
    for (const auto& t : seq.tasks) {
      std::set<int> train_ids, val_ids, test_ids;
      for (const auto& w : t.data.train) train_ids.insert(w.record_id);
      for (const auto& w : t.data.val) val_ids.insert(w.record_id);
      for (const auto& w : t.data.test) test_ids.insert(w.record_id);
      for (int id : val_ids) {
        CHECK(!train_ids.count(id));
        CHECK(!test_ids.count(id));
      }
      for (int id : test_ids) CHECK(!train_ids.count(id));
      for (const auto* ids : {&train_ids, &val_ids, &test_ids}) {
        for (int id : *ids) {
          CHECK(!seen_anywhere.count(id));
        }
      }
      seen_anywhere.insert(train_ids.begin(), train_ids.end());
      seen_anywhere.insert(val_ids.begin(), val_ids.end());
      seen_anywhere.insert(test_ids.begin(), test_ids.end());
    }
  }
}

TEST_CASE("train windows are standardized with the task's own statistics") {
  const auto ds = small_dataset();
  SequenceParams p;
  p.num_tasks = 2;
  Rng rng = Rng::derive(5, 10);
  const auto seq = build_sequence(CaseKind::NewContext, p, ds, rng);
  for (const auto& t : seq.tasks) {
    for (std::size_t c = 0; c < 6; ++c) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (const auto& w : t.data.train) {
        for (std::size_t s = 0; s < kWindowLen; ++s) {
          sum += w.x.at2(c, s);
          sq += w.x.at2(c, s) * w.x.at2(c, s);
          ++n;
        }
      }
      const double mean = sum / static_cast<double>(n);
      const double var = sq / static_cast<double>(n) - mean * mean;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("invalid parameter/case combinations are rejected") {
  const auto ds = small_dataset(7, 3);
  Rng rng = Rng::derive(1, 1);
  SequenceParams p;
  p.granularity = Granularity::Fine;
  CHECK_THROWS_AS(build_sequence(CaseKind::NewGesture, p, ds, rng),
                  ParamError);
  p = {};
  p.gestures_per_task = 2;
  CHECK_THROWS_AS(build_sequence(CaseKind::NewContext, p, ds, rng),
                  ParamError);
  p = {};
  p.ordering = Ordering::EasyToHard;
  CHECK_THROWS_AS(build_sequence(CaseKind::NewUser, p, ds, rng), ParamError);
  p = {};
  p.gestures_per_task = 4;
  CHECK_THROWS_AS(build_sequence(CaseKind::NewGesture, p, ds, rng),
                  ParamError);
  p = {};
  p.num_tasks = 99;  // more tasks than coarse contexts
  CHECK_THROWS_AS(build_sequence(CaseKind::NewContext, p, ds, rng),
                  CatalogError);
}

TEST_CASE("order_tasks sorts by score with stable id tie-break") {
  auto make = [](std::initializer_list<int> keys) {
    std::vector<Task> ts;
    for (int k : keys) {
      Task t;
      t.task_key = k;
      t.descriptor = "t" + std::to_string(k);
      ts.push_back(std::move(t));
    }
    return ts;
  };
  const std::vector<double> scores{0.9, 0.5, 0.7};

  auto eh = order_tasks(make({0, 1, 2}), Ordering::EasyToHard, &scores);
  CHECK(eh[0].task_key == 0);
  CHECK(eh[1].task_key == 2);
  CHECK(eh[2].task_key == 1);

  auto he = order_tasks(make({0, 1, 2}), Ordering::HardToEasy, &scores);
  CHECK(he[0].task_key == 1);
  CHECK(he[1].task_key == 2);
  CHECK(he[2].task_key == 0);

  const std::vector<double> flat{0.4, 0.4, 0.4};
  auto tie = order_tasks(make({2, 0, 1}), Ordering::EasyToHard, &flat);
  CHECK(tie[0].task_key == 0);
  CHECK(tie[1].task_key == 1);
  CHECK(tie[2].task_key == 2);

  // permutation: multiset of keys unchanged
  std::multiset<int> before{0, 1, 2}, after;
  for (const auto& t : eh) after.insert(t.task_key);
  CHECK(before == after);

  CHECK_THROWS_AS(order_tasks(make({0, 1}), Ordering::EasyToHard, nullptr),
                  ParamError);
  const std::vector<double> wrong{0.1};
  CHECK_THROWS_AS(order_tasks(make({0, 1}), Ordering::EasyToHard, &wrong),
                  ParamError);
  auto rnd = order_tasks(make({2, 0, 1}), Ordering::Random, nullptr);
  CHECK(rnd[0].task_key == 2);  // random ordering leaves input untouched
}

TEST_CASE("difficulty probe separates clean tasks from label noise") {
  // several batches per epoch, so the optimizer ramps up before the
  // unimproved-epoch annealing cuts the learning rate
  const auto clean = toy_task(256, 64, false, 21);
  const double easy = probe_difficulty(clean, {.epochs = 12, .seed = 5});
  CHECK(easy >= 0.95);

  const auto noise = toy_task(48, 48, true, 22);
  const double hard = probe_difficulty(noise, {.epochs = 5, .seed = 5});
  CHECK(hard >= 0.25);
  CHECK(hard <= 0.75);

  CHECK(probe_difficulty(noise, {.epochs = 5, .seed = 5}) == hard);
}
