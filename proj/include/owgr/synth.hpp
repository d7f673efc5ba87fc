#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "owgr/rng.hpp"
#include "owgr/tensor.hpp"

namespace owgr {

constexpr std::size_t kSampleRateHz = 100;
constexpr std::size_t kWindowLen = 120;
constexpr std::size_t kWindowStep = 60;
// nominal instance length before tempo warping (2.4 s at 100 Hz)
constexpr std::size_t kInstanceLen = 240;

using Vec6 = std::array<double, 6>;

// 3D rotation applied jointly to the accel and gyro triplets.
struct Rotation {
  std::array<std::array<double, 3>, 3> m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  static Rotation axis_angle(double ax, double ay, double az, double angle);
  Vec6 apply(const Vec6& v) const;
  // max |R R^T - I| entry, used by the orthonormality check
  double orthonormality_defect() const;
};

struct Burst {
  double center_s = 0.0;
  double width_s = 0.1;
  Vec6 amplitude{};
  double carrier_hz = 10.0;
};

struct GestureSpec {
  int gesture_id = 0;
  std::string name;
  std::vector<Burst> bursts;

  void validate() const;
};

struct ContextSpec {
  int context_id = 0;
  std::string name;
  double baseline_hz = 1.0;
  Vec6 baseline_amp{};
  Rotation rotation;
  double noise_sigma = 0.0;
  std::optional<int> fine_parent;  // owning coarse context, if any

  void validate() const;
};

struct UserSpec {
  int user_id = 0;
  double amplitude_scale = 1.0;
  double tempo_scale = 1.0;
  Rotation rotation;
  double jitter_sigma = 0.0;

  void validate() const;
};

struct Catalog {
  std::vector<GestureSpec> gestures;
  std::vector<ContextSpec> contexts;  // fine contexts
  std::vector<UserSpec> users;

  void validate() const;
  std::vector<int> coarse_ids() const;
  std::vector<int> coarse_children(int coarse_id) const;
};

// 8 gesture archetypes, 24 fine contexts in 12 coarse groups, 20 users.
Catalog default_catalog(std::size_t n_gestures = 8, std::size_t n_contexts = 24,
                        std::size_t n_users = 20);

constexpr int kNullClass = -1;

struct Instance {
  int record_id = 0;
  int gesture_id = kNullClass;  // kNullClass marks a non-gesture instance
  int context_id = 0;
  int user_id = 0;
  TensorBuffer signal;  // 6 x L
};

struct GenCounts {
  std::size_t per_class_per_context = 50;
};

struct Dataset {
  Catalog catalog;
  GenCounts counts;
  std::uint64_t seed = 0;
  std::vector<Instance> instances;
};

// One instance; null class when gesture is absent. Deterministic per rng.
TensorBuffer gen_instance(const GestureSpec* gesture, const ContextSpec& ctx,
                          const UserSpec& user, Rng& rng);

// Every (gesture|null, fine context) pair gets `per_class_per_context`
// instances; users drawn uniformly per instance. Pure in (catalog, counts,
// seed): instance i derives its own rng stream.
Dataset gen_dataset(const Catalog& catalog, const GenCounts& counts,
                    std::uint64_t seed);

std::vector<TensorBuffer> window_segments(const TensorBuffer& signal,
                                          std::size_t win = kWindowLen,
                                          std::size_t step = kWindowStep);

struct ChannelStats {
  Vec6 mean{};
  Vec6 stddev{};
};

ChannelStats compute_channel_stats(const std::vector<TensorBuffer>& windows);
void standardize(std::vector<TensorBuffer>& windows, const ChannelStats& stats);

// manifest.json + samples.f32 (little-endian float32, [record, channel,
// time]) + labels.csv
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace owgr
