#include "owgr/envelope.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "owgr/common.hpp"

namespace fs = std::filesystem;

namespace owgr {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// flags ride in a comma-separated csv; keep the cell comma-free
std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n') c = ';';
  }
  return s;
}

std::string describe(const SequenceParams& p, CaseKind kind,
                     std::size_t replay_M) {
  std::ostringstream os;
  os << "ordering=" << to_string(p.ordering);
  if (kind == CaseKind::NewContext) {
    os << ";granularity=" << to_string(p.resolved_granularity());
  }
  os << ";num_tasks=" << p.resolved_num_tasks(kind);
  if (kind == CaseKind::NewGesture) {
    os << ";gestures_per_task=" << p.resolved_gestures_per_task();
  }
  os << ";replay_M=" << replay_M;
  return os.str();
}

std::size_t parse_count(const std::string& v, const std::string& what) {
  std::size_t pos = 0;
  long n = 0;
  try {
    n = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw ParamError(what + ": not a number: " + v);
  }
  if (pos != v.size() || n <= 0) {
    throw ParamError(what + ": expected a positive integer, got " + v);
  }
  return static_cast<std::size_t>(n);
}

// numeric when possible, lexicographic otherwise — keeps e.g. num_tasks
// values 5,10,20 in their natural order
bool value_less(const std::string& a, const std::string& b) {
  char* ea = nullptr;
  char* eb = nullptr;
  const double na = std::strtod(a.c_str(), &ea);
  const double nb = std::strtod(b.c_str(), &eb);
  const bool numa = ea != a.c_str() && *ea == '\0';
  const bool numb = eb != b.c_str() && *eb == '\0';
  if (numa && numb) return na < nb;
  if (numa != numb) return numa;
  return a < b;
}

}  // namespace

std::string RunSpec::sequence_key() const {
  std::ostringstream os;
  os << to_string(kind) << ".ord_" << to_string(params.ordering);
  if (kind == CaseKind::NewContext) {
    os << ".gran_" << to_string(params.resolved_granularity());
  }
  os << ".nt_" << params.resolved_num_tasks(kind);
  if (kind == CaseKind::NewGesture) {
    os << ".gpt_" << params.resolved_gestures_per_task();
  }
  os << ".s" << seed;
  return os.str();
}

std::string RunSpec::key() const {
  std::ostringstream os;
  os << to_string(kind) << ".ord_" << to_string(params.ordering);
  if (kind == CaseKind::NewContext) {
    os << ".gran_" << to_string(params.resolved_granularity());
  }
  os << ".nt_" << params.resolved_num_tasks(kind);
  if (kind == CaseKind::NewGesture) {
    os << ".gpt_" << params.resolved_gestures_per_task();
  }
  os << ".M_" << replay_M << "." << to_string(method) << ".s" << seed;
  return os.str();
}

MetricsReport run_single(const RunSpec& spec, const Dataset& dataset,
                         const TrainConfig& base) {
  const std::uint64_t root =
      Rng::mix(spec.master_seed, Rng::mix(spec.seed, fnv1a(spec.key())));

  // the sequence stream must not depend on the method so replications at
  // one seed compare the methods on the same task sequence
  const std::uint64_t seq_root = Rng::mix(
      spec.master_seed, Rng::mix(spec.seed, fnv1a(spec.sequence_key())));
  Rng seq_rng = Rng::derive(seq_root, 0x5ec);
  const TaskSequence seq =
      build_sequence(spec.kind, spec.params, dataset, seq_rng);

  Rng init = Rng::derive(root, 0x1217);
  GestureNet net(NetConfig{}, init);
  Strategy strat;
  strat.cfg.kind = spec.method;
  strat.cfg.replay_buffer = spec.replay_M;
  const StrategyConfig fresh = strat.cfg;

  TrainConfig cfg = base;
  cfg.seed = root;

  AccuracyMatrix m;
  std::vector<std::string> flags;
  for (std::size_t k = 0; k < seq.tasks.size(); ++k) {
    net.add_head(seq.tasks[k].class_map.size(), init);
    strat.cfg = fresh;  // the decay search restarts from the initial values
    try {
      auto out = run_task_pipeline(net, strat, seq.tasks[k], k, cfg);
      if (out.flagged) {
        flags.push_back("floor@k=" + std::to_string(k + 1));
      }
      net = std::move(out.net);
      strat = std::move(out.strategy);
    } catch (const CapacityExhausted& e) {
      flags.push_back("capacity_exhausted@k=" + std::to_string(k + 1) + ":" +
                      sanitize(e.what()));
      break;
    }
    std::vector<double> accs;
    for (std::size_t j = 0; j <= k; ++j) {
      accs.push_back(
          evaluate_with_mask(strat, net, seq.tasks[j].data.test, j));
    }
    m.record_row(k, accs);
  }

  MetricsReport rep = make_report(m);
  rep.case_name = to_string(spec.kind);
  rep.method = to_string(spec.method);
  rep.params = describe(spec.params, spec.kind, spec.replay_M);
  rep.seed = spec.seed;
  for (auto& f : flags) rep.flags.push_back(std::move(f));
  return rep;
}

void SweepConfig::validate() const {
  static const std::set<std::string> known{
      "ordering", "granularity", "num_tasks", "gestures_per_task",
      "replay_M"};
  if (!known.count(swept_param)) {
    throw ParamError("unknown swept_param: " + swept_param);
  }
  if (values.empty()) throw ParamError("no values to sweep");
  if (std::set<std::string>(values.begin(), values.end()).size() !=
      values.size()) {
    throw ParamError("duplicate value in sweep list");
  }
  if (methods.empty()) throw ParamError("no methods");
  if (seeds.empty()) throw ParamError("no seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() !=
      seeds.size()) {
    throw ParamError("duplicate seed");
  }
  if (swept_param == "granularity" && kind != CaseKind::NewContext) {
    throw ParamError("granularity applies to new_context only");
  }
  if (swept_param == "gestures_per_task" && kind != CaseKind::NewGesture) {
    throw ParamError("gestures_per_task applies to new_gesture only");
  }
  for (const auto& v : values) {
    if (swept_param == "ordering") {
      ordering_from_string(v);
    } else if (swept_param == "granularity") {
      if (v != "coarse" && v != "fine") {
        throw ParamError("unknown granularity: " + v);
      }
    } else {
      parse_count(v, swept_param);
    }
  }
}

RunSpec SweepConfig::make_run(const std::string& value, StrategyKind method,
                              std::uint64_t seed,
                              std::uint64_t master_seed) const {
  RunSpec r;
  r.kind = kind;
  r.method = method;
  r.seed = seed;
  r.master_seed = master_seed;
  if (swept_param == "ordering") {
    r.params.ordering = ordering_from_string(value);
  } else if (swept_param == "granularity") {
    r.params.granularity =
        value == "fine" ? Granularity::Fine : Granularity::Coarse;
  } else if (swept_param == "num_tasks") {
    r.params.num_tasks = parse_count(value, swept_param);
  } else if (swept_param == "gestures_per_task") {
    r.params.gestures_per_task = parse_count(value, swept_param);
  } else if (swept_param == "replay_M") {
    r.replay_M = parse_count(value, swept_param);
  }
  return r;
}

void ResultsTable::sort_canonical() {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ResultRow& a, const ResultRow& b) {
                     if (a.case_name != b.case_name)
                       return a.case_name < b.case_name;
                     if (a.param != b.param) return a.param < b.param;
                     if (a.value != b.value) return value_less(a.value, b.value);
                     if (a.method != b.method) return a.method < b.method;
                     if (a.seed != b.seed) return a.seed < b.seed;
                     return a.k < b.k;
                   });
}

std::string ResultsTable::to_csv() const {
  std::ostringstream os;
  os << "case,method,param,value,seed,k,A,F,flags\n";
  for (const auto& r : rows) {
    os << r.case_name << ',' << r.method << ',' << r.param << ',' << r.value
       << ',' << r.seed << ',' << r.k << ',' << fmt_double(r.A) << ','
       << fmt_double(r.F) << ',' << r.flags << '\n';
  }
  return os.str();
}

ResultsTable ResultsTable::from_csv(const std::string& text) {
  ResultsTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (first) {
      first = false;
      if (line != "case,method,param,value,seed,k,A,F,flags") {
        throw IoError("unexpected results header: " + line);
      }
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (cells.size() != 9) throw IoError("malformed results row: " + line);
    ResultRow r;
    r.case_name = cells[0];
    r.method = cells[1];
    r.param = cells[2];
    r.value = cells[3];
    r.seed = std::stoull(cells[4]);
    r.k = std::stoull(cells[5]);
    r.A = cells[6].empty() ? std::nan("") : std::stod(cells[6]);
    r.F = cells[7].empty() ? std::nan("") : std::stod(cells[7]);
    r.flags = cells[8];
    t.rows.push_back(std::move(r));
  }
  return t;
}

ResultsTable rows_from_report(const MetricsReport& rep,
                              const std::string& param,
                              const std::string& value) {
  std::string flags;
  for (const auto& f : rep.flags) {
    if (!flags.empty()) flags += ';';
    flags += sanitize(f);
  }
  ResultsTable t;
  for (std::size_t k = 1; k <= rep.avg_acc.size(); ++k) {
    ResultRow r;
    r.case_name = rep.case_name;
    r.method = rep.method;
    r.param = param;
    r.value = value;
    r.seed = rep.seed;
    r.k = k;
    r.A = rep.avg_acc[k - 1];
    r.F = k >= 2 ? rep.forgetting[k - 2] : std::nan("");
    r.flags = flags;
    t.rows.push_back(std::move(r));
  }
  return t;
}

ResultsTable sweep(const SweepConfig& cfg, const Dataset& dataset,
                   const SweepOptions& opts) {
  cfg.validate();
  const fs::path out(opts.out_dir);
  const fs::path journal = out / "runs";
  std::error_code ec;
  fs::create_directories(journal, ec);
  if (ec) throw IoError("cannot create " + journal.string());

  struct Cell {
    RunSpec spec;
    std::string value;
  };
  std::vector<Cell> cells;
  for (const auto& v : cfg.values) {
    for (auto m : cfg.methods) {
      for (auto s : cfg.seeds) {
        cells.push_back({cfg.make_run(v, m, s, opts.master_seed), v});
      }
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const auto& cell = cells[i];
      const fs::path done = journal / (cell.spec.key() + ".csv");
      if (fs::exists(done)) continue;  // resumed sweep: already journaled
      ResultsTable part;
      try {
        part = rows_from_report(run_single(cell.spec, dataset, opts.train),
                                cfg.swept_param, cell.value);
      } catch (const std::exception& e) {
        ResultRow r;
        r.case_name = to_string(cfg.kind);
        r.method = to_string(cell.spec.method);
        r.param = cfg.swept_param;
        r.value = cell.value;
        r.seed = cell.spec.seed;
        r.k = 0;
        r.A = std::nan("");
        r.F = std::nan("");
        r.flags = "error:" + sanitize(e.what());
        part.rows.push_back(std::move(r));
      }
      const fs::path tmp = journal / (cell.spec.key() + ".tmp");
      {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f << part.to_csv();
        if (!f) throw IoError("cannot write " + tmp.string());
      }
      fs::rename(tmp, done);
    }
  };

  const std::size_t jobs =
      std::max<std::size_t>(1, std::min(opts.jobs, cells.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // assemble from the journal so the result is independent of scheduling
  ResultsTable table;
  for (const auto& cell : cells) {
    const fs::path done = journal / (cell.spec.key() + ".csv");
    std::ifstream f(done, std::ios::binary);
    if (!f) throw IoError("missing journal file " + done.string());
    std::stringstream buf;
    buf << f.rdbuf();
    auto part = ResultsTable::from_csv(buf.str());
    for (auto& r : part.rows) table.rows.push_back(std::move(r));
  }
  table.sort_canonical();

  {
    std::ofstream f(out / "results.csv", std::ios::binary | std::ios::trunc);
    f << table.to_csv();
    if (!f) throw IoError("cannot write results.csv");
  }
  {
    std::ofstream f(out / "summary.csv", std::ios::binary | std::ios::trunc);
    f << summary_csv(summarize(table));
    if (!f) throw IoError("cannot write summary.csv");
  }
  return table;
}

double quantile_inclusive(std::vector<double> xs, double p) {
  if (xs.empty()) throw ParamError("quantile of an empty sample");
  if (p < 0.0 || p > 1.0) throw ParamError("quantile p outside [0,1]");
  std::sort(xs.begin(), xs.end());
  const double pos = p * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= xs.size()) return xs.back();
  return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

BoxStats box_stats(std::vector<double> xs) {
  BoxStats b;
  b.n = xs.size();
  if (xs.empty()) return b;
  double sum = 0.0;
  for (double v : xs) sum += v;
  b.mean = sum / static_cast<double>(xs.size());
  b.median = quantile_inclusive(xs, 0.5);
  b.q1 = quantile_inclusive(xs, 0.25);
  b.q3 = quantile_inclusive(xs, 0.75);
  b.min = *std::min_element(xs.begin(), xs.end());
  b.max = *std::max_element(xs.begin(), xs.end());
  return b;
}

std::vector<SummaryRow> summarize(const ResultsTable& table) {
  if (table.rows.empty()) throw ParamError("nothing to summarize");

  // final-round row of each (value, method, seed) run
  struct Final {
    double A, F;
  };
  std::map<std::pair<std::string, std::string>,
           std::map<std::uint64_t, std::pair<std::size_t, Final>>>
      finals;  // (value, method) -> seed -> (k, metrics)
  for (const auto& r : table.rows) {
    auto& slot = finals[{r.value, r.method}][r.seed];
    if (r.k >= slot.first) slot = {r.k, {r.A, r.F}};
  }

  std::vector<SummaryRow> out;
  auto group_key_less = [](const std::pair<std::string, std::string>& a,
                           const std::pair<std::string, std::string>& b) {
    if (a.first != b.first) return value_less(a.first, b.first);
    return a.second < b.second;
  };
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& [key, _] : finals) keys.push_back(key);
  std::sort(keys.begin(), keys.end(), group_key_less);

  for (const auto& key : keys) {
    std::vector<double> as, fs_;
    for (const auto& [seed, kf] : finals[key]) {
      if (!std::isnan(kf.second.A)) as.push_back(kf.second.A);
      if (!std::isnan(kf.second.F)) fs_.push_back(kf.second.F);
    }
    if (!as.empty()) {
      out.push_back({key.second, key.first, "A", box_stats(as)});
    }
    if (!fs_.empty()) {
      out.push_back({key.second, key.first, "F", box_stats(fs_)});
    }
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "method,value,metric,mean,median,q1,q3,min,max,n\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.value << ',' << r.metric << ','
       << fmt_double(r.stats.mean) << ',' << fmt_double(r.stats.median) << ','
       << fmt_double(r.stats.q1) << ',' << fmt_double(r.stats.q3) << ','
       << fmt_double(r.stats.min) << ',' << fmt_double(r.stats.max) << ','
       << r.stats.n << '\n';
  }
  return os.str();
}

}  // namespace owgr
