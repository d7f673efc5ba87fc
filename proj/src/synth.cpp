#include "owgr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "owgr/common.hpp"

namespace owgr {

using json = nlohmann::json;

Rotation Rotation::axis_angle(double ax, double ay, double az, double angle) {
  const double n = std::sqrt(ax * ax + ay * ay + az * az);
  if (n == 0.0) return {};
  ax /= n;
  ay /= n;
  az /= n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Rotation r;
  r.m = {{{t * ax * ax + c, t * ax * ay - s * az, t * ax * az + s * ay},
          {t * ax * ay + s * az, t * ay * ay + c, t * ay * az - s * ax},
          {t * ax * az - s * ay, t * ay * az + s * ax, t * az * az + c}}};
  return r;
}

Vec6 Rotation::apply(const Vec6& v) const {
  Vec6 out{};
  for (int triplet = 0; triplet < 2; ++triplet) {
    const int o = 3 * triplet;
    for (int i = 0; i < 3; ++i) {
      out[o + i] = m[i][0] * v[o] + m[i][1] * v[o + 1] + m[i][2] * v[o + 2];
    }
  }
  return out;
}

double Rotation::orthonormality_defect() const {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += m[i][k] * m[j][k];
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

void GestureSpec::validate() const {
  if (bursts.empty()) throw CatalogError("gesture needs at least one burst");
  for (const auto& b : bursts) {
    if (b.width_s <= 0.0) throw CatalogError("burst width must be positive");
  }
}

void ContextSpec::validate() const {
  if (noise_sigma < 0.0) throw CatalogError("noise_sigma must be >= 0");
  if (rotation.orthonormality_defect() > 1e-12) {
    throw CatalogError("context rotation is not orthonormal");
  }
}

void UserSpec::validate() const {
  if (amplitude_scale <= 0.0) throw CatalogError("amplitude_scale must be > 0");
  if (tempo_scale < 0.7 || tempo_scale > 1.3) {
    throw CatalogError("tempo_scale must lie in [0.7, 1.3]");
  }
  if (jitter_sigma < 0.0) throw CatalogError("jitter_sigma must be >= 0");
}

void Catalog::validate() const {
  for (const auto& g : gestures) g.validate();
  for (const auto& c : contexts) c.validate();
  for (const auto& u : users) u.validate();
  std::set<int> seen;
  for (const auto& c : contexts) {
    if (!seen.insert(c.context_id).second) {
      throw CatalogError("duplicate context id");
    }
  }
  for (int coarse : coarse_ids()) {
    if (coarse_children(coarse).size() < 2) {
      throw CatalogError("coarse context " + std::to_string(coarse) +
                         " needs at least 2 fine children");
    }
  }
}

std::vector<int> Catalog::coarse_ids() const {
  std::vector<int> ids;
  for (const auto& c : contexts) {
    if (c.fine_parent && std::find(ids.begin(), ids.end(), *c.fine_parent) ==
                             ids.end()) {
      ids.push_back(*c.fine_parent);
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> Catalog::coarse_children(int coarse_id) const {
  std::vector<int> out;
  for (const auto& c : contexts) {
    if (c.fine_parent && *c.fine_parent == coarse_id) {
      out.push_back(c.context_id);
    }
  }
  return out;
}

namespace {

double frac(double x) { return x - std::floor(x); }

// Base channel patterns for the four archetype gestures; variants cycle the
// channels so energy signatures stay distinct.
constexpr std::array<Vec6, 4> kBaseAmp = {{
    {1.2, 0.3, -0.5, 0.8, -0.4, 0.2},    // single pinch
    {1.0, 0.4, -0.4, 0.7, -0.5, 0.3},    // double pinch
    {0.3, 1.1, 0.6, -0.3, 0.9, -0.6},    // middle pinch
    {0.9, 0.8, 1.0, 1.1, 0.9, 1.0},      // fist clench
}};

Vec6 cycle(const Vec6& v, int k) {
  Vec6 out{};
  for (int i = 0; i < 6; ++i) out[(i + k) % 6] = v[i];
  return out;
}

}  // namespace

Catalog default_catalog(std::size_t n_gestures, std::size_t n_contexts,
                        std::size_t n_users) {
  Catalog cat;
  static const char* base_names[4] = {"single_pinch", "double_pinch",
                                      "middle_pinch", "fist_clench"};
  for (std::size_t g = 0; g < n_gestures; ++g) {
    GestureSpec spec;
    spec.gesture_id = static_cast<int>(g);
    const int base = static_cast<int>(g % 4);
    const int variant = static_cast<int>(g / 4);
    spec.name = std::string(base_names[base]) +
                (variant ? "_v" + std::to_string(variant) : "");
    const Vec6 amp = cycle(kBaseAmp[base], variant);
    const double carrier = (base == 3 ? 5.0 : 14.0 - 1.5 * base) *
                           (1.0 + 0.18 * variant);
    if (base == 1) {
      spec.bursts.push_back({1.00, 0.07, amp, carrier});
      spec.bursts.push_back({1.45, 0.07, amp, carrier});
    } else if (base == 3) {
      spec.bursts.push_back({1.20, 0.28, amp, carrier});
    } else {
      spec.bursts.push_back({1.20, 0.08, amp, carrier});
    }
    cat.gestures.push_back(std::move(spec));
  }

  for (std::size_t j = 0; j < n_contexts; ++j) {
    ContextSpec c;
    c.context_id = static_cast<int>(j);
    c.name = "ctx" + std::to_string(j);
    c.baseline_hz = 0.8 + 0.25 * static_cast<double>(j % 5);
    for (int ch = 0; ch < 6; ++ch) {
      c.baseline_amp[ch] =
          0.22 * std::sin(1.3 * static_cast<double>(j) + 0.9 * ch + 0.4);
    }
    const double dj = static_cast<double>(j);
    // modest wear-position rotations: enough drift between contexts to
    // interfere, small enough that contexts stay mutually informative
    c.rotation = Rotation::axis_angle(
        std::sin(dj), std::cos(1.7 * dj), 0.5 + std::sin(2.3 * dj),
        (5.0 + 2.5 * std::sin(0.9 * dj)) * std::numbers::pi / 180.0);
    c.noise_sigma = 0.03 + 0.01 * static_cast<double>(j % 3);
    c.fine_parent = 100 + static_cast<int>(j / 2);  // two children per coarse
    cat.contexts.push_back(std::move(c));
  }

  for (std::size_t u = 0; u < n_users; ++u) {
    UserSpec spec;
    spec.user_id = static_cast<int>(u);
    const double du = static_cast<double>(u);
    spec.amplitude_scale = 0.85 + 0.3 * frac(du * 0.618 + 0.17);
    spec.tempo_scale = 0.90 + 0.20 * frac(du * 0.382 + 0.05);
    spec.rotation = Rotation::axis_angle(
        std::cos(du), std::sin(0.9 * du), 0.7,
        0.06 * frac(du * 0.734 + 0.31));
    spec.jitter_sigma = 0.008 + 0.006 * frac(du * 0.271 + 0.41);
    cat.users.push_back(spec);
  }

  cat.validate();
  return cat;
}

TensorBuffer gen_instance(const GestureSpec* gesture, const ContextSpec& ctx,
                          const UserSpec& user, Rng& rng) {
  const std::size_t l0 = kInstanceLen;
  const auto l1 = static_cast<std::size_t>(std::lround(
      static_cast<double>(l0) * user.tempo_scale));
  // back to a window multiple so the segmentation contract stays fixed
  const std::size_t l = std::max<std::size_t>(
      kWindowLen,
      static_cast<std::size_t>(std::lround(static_cast<double>(l1) /
                                           static_cast<double>(kWindowLen))) *
          kWindowLen);

  // gesture content in warped time, then center-crop / edge-pad to l
  std::vector<Vec6> warped(l1, Vec6{});
  if (gesture != nullptr) {
    const double stretch =
        static_cast<double>(l0) / static_cast<double>(l1);
    for (std::size_t i = 0; i < l1; ++i) {
      const double tau =
          static_cast<double>(i) * stretch / static_cast<double>(kSampleRateHz);
      Vec6 v{};
      for (const auto& b : gesture->bursts) {
        const double d = tau - b.center_s;
        const double env = std::exp(-d * d / (2.0 * b.width_s * b.width_s));
        const double carrier =
            std::cos(2.0 * std::numbers::pi * b.carrier_hz * d);
        for (int ch = 0; ch < 6; ++ch) {
          v[ch] += b.amplitude[ch] * env * carrier;
        }
      }
      // low-amplitude sustained signature (hold posture / muscle tone) so
      // every analysis window carries the gesture's identity, not just the
      // samples near the bursts; 9% of the burst energy keeps it well under
      // burst-detection thresholds
      const auto& b0 = gesture->bursts.front();
      const double hold =
          std::cos(2.0 * std::numbers::pi * 0.35 * b0.carrier_hz * tau);
      // channel pattern cycled per gesture so the signatures stay distinct
      // even for gestures with similar burst amplitudes
      const int g = gesture->gesture_id;
      for (int ch = 0; ch < 6; ++ch) {
        v[ch] += 0.3 * b0.amplitude[(ch + g) % 6] * hold;
      }
      for (int ch = 0; ch < 6; ++ch) v[ch] *= user.amplitude_scale;
      warped[i] = user.rotation.apply(ctx.rotation.apply(v));
    }
  }

  TensorBuffer out({6, l});
  for (std::size_t i = 0; i < l; ++i) {
    long src;
    if (l1 >= l) {
      src = static_cast<long>(i) + static_cast<long>((l1 - l) / 2);
    } else {
      src = static_cast<long>(i) - static_cast<long>((l - l1) / 2);
      src = std::clamp<long>(src, 0, static_cast<long>(l1) - 1);
    }
    const Vec6& v = warped[static_cast<std::size_t>(src)];
    const double t = static_cast<double>(i) / kSampleRateHz;
    for (int ch = 0; ch < 6; ++ch) {
      const double baseline =
          ctx.baseline_amp[ch] *
          std::sin(2.0 * std::numbers::pi * ctx.baseline_hz * t + 0.6 * ch);
      const double noise = rng.normal() * ctx.noise_sigma +
                           rng.normal() * user.jitter_sigma;
      out.at2(ch, i) = v[ch] + baseline + noise;
    }
  }
  out.check_finite("gen_instance");
  return out;
}

Dataset gen_dataset(const Catalog& catalog, const GenCounts& counts,
                    std::uint64_t seed) {
  if (counts.per_class_per_context < 1) {
    throw ParamError("per_class_per_context must be >= 1");
  }
  catalog.validate();
  Dataset ds;
  ds.catalog = catalog;
  ds.counts = counts;
  ds.seed = seed;

  int record_id = 0;
  for (const auto& ctx : catalog.contexts) {
    for (std::size_t cls = 0; cls <= catalog.gestures.size(); ++cls) {
      const bool is_null = cls == catalog.gestures.size();
      for (std::size_t i = 0; i < counts.per_class_per_context; ++i) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(record_id));
        const auto& user =
            catalog.users[rng.uniform_int(catalog.users.size())];
        Instance inst;
        inst.record_id = record_id++;
        inst.gesture_id =
            is_null ? kNullClass : catalog.gestures[cls].gesture_id;
        inst.context_id = ctx.context_id;
        inst.user_id = user.user_id;
        inst.signal = gen_instance(is_null ? nullptr : &catalog.gestures[cls],
                                   ctx, user, rng);
        ds.instances.push_back(std::move(inst));
      }
    }
  }
  return ds;
}

std::vector<TensorBuffer> window_segments(const TensorBuffer& signal,
                                          std::size_t win, std::size_t step) {
  if (signal.shape.size() != 2 || signal.shape[0] != 6) {
    throw ShapeError("window_segments expects a 6 x L signal");
  }
  const std::size_t l = signal.shape[1];
  if (l < win) {
    throw TooShort("signal length " + std::to_string(l) + " < window " +
                   std::to_string(win));
  }
  const std::size_t count = (l - win) / step + 1;
  std::vector<TensorBuffer> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    TensorBuffer win_buf({6, win});
    const std::size_t start = w * step;
    for (std::size_t ch = 0; ch < 6; ++ch) {
      for (std::size_t t = 0; t < win; ++t) {
        win_buf.at2(ch, t) = signal.at2(ch, start + t);
      }
    }
    out.push_back(std::move(win_buf));
  }
  return out;
}

ChannelStats compute_channel_stats(const std::vector<TensorBuffer>& windows) {
  ChannelStats stats;
  if (windows.empty()) return stats;
  const double n =
      static_cast<double>(windows.size() * windows[0].shape[1]);
  for (const auto& w : windows) {
    for (std::size_t ch = 0; ch < 6; ++ch) {
      for (std::size_t t = 0; t < w.shape[1]; ++t) {
        stats.mean[ch] += w.at2(ch, t);
      }
    }
  }
  for (auto& m : stats.mean) m /= n;
  for (const auto& w : windows) {
    for (std::size_t ch = 0; ch < 6; ++ch) {
      for (std::size_t t = 0; t < w.shape[1]; ++t) {
        const double d = w.at2(ch, t) - stats.mean[ch];
        stats.stddev[ch] += d * d;
      }
    }
  }
  for (auto& s : stats.stddev) s = std::max(std::sqrt(s / n), 1e-8);
  return stats;
}

void standardize(std::vector<TensorBuffer>& windows,
                 const ChannelStats& stats) {
  for (auto& w : windows) {
    for (std::size_t ch = 0; ch < 6; ++ch) {
      for (std::size_t t = 0; t < w.shape[1]; ++t) {
        w.at2(ch, t) = (w.at2(ch, t) - stats.mean[ch]) / stats.stddev[ch];
      }
    }
  }
}

namespace {

json rotation_to_json(const Rotation& r) {
  json out = json::array();
  for (const auto& row : r.m) out.push_back(row);
  return out;
}

Rotation rotation_from_json(const json& j) {
  Rotation r;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.m[i][k] = j[i][k].get<double>();
  return r;
}

json catalog_to_json(const Catalog& cat) {
  json j;
  for (const auto& g : cat.gestures) {
    json jg = {{"gesture_id", g.gesture_id}, {"name", g.name}};
    for (const auto& b : g.bursts) {
      jg["bursts"].push_back({{"center_s", b.center_s},
                              {"width_s", b.width_s},
                              {"amplitude", b.amplitude},
                              {"carrier_hz", b.carrier_hz}});
    }
    j["gestures"].push_back(jg);
  }
  for (const auto& c : cat.contexts) {
    json jc = {{"context_id", c.context_id},
               {"name", c.name},
               {"baseline_hz", c.baseline_hz},
               {"baseline_amp", c.baseline_amp},
               {"rotation", rotation_to_json(c.rotation)},
               {"noise_sigma", c.noise_sigma}};
    if (c.fine_parent) jc["fine_parent"] = *c.fine_parent;
    j["contexts"].push_back(jc);
  }
  for (const auto& u : cat.users) {
    j["users"].push_back({{"user_id", u.user_id},
                          {"amplitude_scale", u.amplitude_scale},
                          {"tempo_scale", u.tempo_scale},
                          {"rotation", rotation_to_json(u.rotation)},
                          {"jitter_sigma", u.jitter_sigma}});
  }
  return j;
}

Catalog catalog_from_json(const json& j) {
  Catalog cat;
  for (const auto& jg : j.at("gestures")) {
    GestureSpec g;
    g.gesture_id = jg.at("gesture_id").get<int>();
    g.name = jg.at("name").get<std::string>();
    for (const auto& jb : jg.at("bursts")) {
      Burst b;
      b.center_s = jb.at("center_s").get<double>();
      b.width_s = jb.at("width_s").get<double>();
      b.amplitude = jb.at("amplitude").get<Vec6>();
      b.carrier_hz = jb.at("carrier_hz").get<double>();
      g.bursts.push_back(b);
    }
    cat.gestures.push_back(std::move(g));
  }
  for (const auto& jc : j.at("contexts")) {
    ContextSpec c;
    c.context_id = jc.at("context_id").get<int>();
    c.name = jc.at("name").get<std::string>();
    c.baseline_hz = jc.at("baseline_hz").get<double>();
    c.baseline_amp = jc.at("baseline_amp").get<Vec6>();
    c.rotation = rotation_from_json(jc.at("rotation"));
    c.noise_sigma = jc.at("noise_sigma").get<double>();
    if (jc.contains("fine_parent")) c.fine_parent = jc["fine_parent"].get<int>();
    cat.contexts.push_back(std::move(c));
  }
  for (const auto& ju : j.at("users")) {
    UserSpec u;
    u.user_id = ju.at("user_id").get<int>();
    u.amplitude_scale = ju.at("amplitude_scale").get<double>();
    u.tempo_scale = ju.at("tempo_scale").get<double>();
    u.rotation = rotation_from_json(ju.at("rotation"));
    u.jitter_sigma = ju.at("jitter_sigma").get<double>();
    cat.users.push_back(u);
  }
  return cat;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

  json manifest;
  manifest["schema_version"] = 1;
  manifest["sample_rate_hz"] = kSampleRateHz;
  manifest["catalog"] = catalog_to_json(ds.catalog);
  manifest["counts"] = {{"per_class_per_context", ds.counts.per_class_per_context}};
  manifest["seed"] = ds.seed;
  manifest["num_records"] = ds.instances.size();

  std::ofstream samples(fs::path(dir) / "samples.f32", std::ios::binary);
  std::ofstream labels(fs::path(dir) / "labels.csv");
  if (!samples || !labels) throw IoError("cannot open output files in " + dir);
  labels << "record_id,gesture_id,context_id,user_id,split\n";

  std::size_t offset = 0;  // in float32 elements
  json index = json::array();
  for (const auto& inst : ds.instances) {
    const std::size_t len = inst.signal.shape[1];
    index.push_back({{"record_id", inst.record_id},
                     {"offset", offset},
                     {"length", len}});
    std::vector<float> row(inst.signal.data.begin(), inst.signal.data.end());
    samples.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    offset += row.size();
    labels << inst.record_id << ',' << inst.gesture_id << ','
           << inst.context_id << ',' << inst.user_id << ",\n";
  }
  manifest["index"] = std::move(index);

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("cannot write manifest in " + dir);
  mf << manifest.dump(2) << '\n';
  if (!samples.good() || !labels.good() || !mf.good()) {
    throw IoError("write failure in " + dir);
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("cannot read manifest in " + dir);
  json manifest;
  mf >> manifest;
  if (manifest.at("sample_rate_hz").get<std::size_t>() != kSampleRateHz) {
    throw IoError("unexpected sample rate in manifest");
  }

  Dataset ds;
  ds.catalog = catalog_from_json(manifest.at("catalog"));
  ds.counts.per_class_per_context =
      manifest.at("counts").at("per_class_per_context").get<std::size_t>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();

  std::ifstream samples(fs::path(dir) / "samples.f32", std::ios::binary);
  std::ifstream labels(fs::path(dir) / "labels.csv");
  if (!samples || !labels) throw IoError("cannot read payload in " + dir);
  std::string header;
  std::getline(labels, header);

  for (const auto& entry : manifest.at("index")) {
    Instance inst;
    std::string line;
    if (!std::getline(labels, line)) throw IoError("labels.csv truncated");
    int rid, gid, cid, uid;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d", &rid, &gid, &cid, &uid) != 4) {
      throw IoError("bad labels.csv row: " + line);
    }
    inst.record_id = rid;
    inst.gesture_id = gid;
    inst.context_id = cid;
    inst.user_id = uid;
    if (entry.at("record_id").get<int>() != rid) {
      throw IoError("manifest index and labels.csv disagree");
    }
    const std::size_t len = entry.at("length").get<std::size_t>();
    std::vector<float> row(6 * len);
    samples.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!samples) throw IoError("samples.f32 truncated");
    inst.signal = TensorBuffer({6, len});
    // storage is 32-bit; compute promotes to 64-bit on load
    std::copy(row.begin(), row.end(), inst.signal.data.begin());
    ds.instances.push_back(std::move(inst));
  }
  if (ds.instances.size() != manifest.at("num_records").get<std::size_t>()) {
    throw IoError("record count mismatch");
  }
  return ds;
}

}  // namespace owgr
