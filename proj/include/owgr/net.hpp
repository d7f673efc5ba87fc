#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "owgr/rng.hpp"
#include "owgr/tensor.hpp"

namespace owgr {

struct NetConfig {
  std::size_t in_channels = 6;
  std::size_t stem_channels = 32;
  std::size_t num_blocks = 2;   // 32->32 separable blocks after the stem
  std::size_t neck_channels = 64;
  std::size_t kernel = 11;      // depthwise temporal kernel, same padding
  std::size_t window = 120;
};

// One named slice of the flat parameter vector. Prunable groups are the
// conv weight tensors; biases and norm affines are auxiliary.
struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool prunable = false;
};

// Frozen per-channel statistics for every norm layer.
struct NormStats {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> var;
};

enum class NormMode {
  Batch,     // statistics of the current batch (training)
  Running,   // current running statistics (eval during training)
  Snapshot,  // caller-provided frozen statistics (eval of a finished task)
};

struct ForwardCache;

// Shared separable-conv trunk with one affine head per task. The flat
// parameter vector keeps trunk indices stable as heads are appended.
class GestureNet {
 public:
  GestureNet(NetConfig cfg, Rng& init_rng);

  std::size_t add_head(std::size_t classes, Rng& init_rng);
  std::size_t num_heads() const { return head_dims_.size(); }
  std::size_t head_classes(std::size_t task) const;

  std::size_t trunk_param_count() const { return trunk_size_; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<ParamGroup>& trunk_groups() const { return groups_; }
  // offset/size of head parameters for a task
  ParamGroup head_group(std::size_t task) const;

  const NetConfig& config() const { return cfg_; }

  // Trunk pass up to the pooled features; logits come from head_logits so
  // several heads can share one pass.
  ForwardCache forward_trunk(const TensorBuffer& batch, NormMode mode,
                             const NormStats* stats) const;
  TensorBuffer head_logits(const ForwardCache& cache, std::size_t task) const;
  TensorBuffer forward(const TensorBuffer& batch, std::size_t task,
                       NormMode mode = NormMode::Batch,
                       const NormStats* stats = nullptr) const;

  // Exact reverse-mode gradients; parameters untouched. dlogits_by_head maps
  // task -> N x C_t gradient wrt that head's logits.
  std::vector<double> backward(
      const ForwardCache& cache,
      const std::map<std::size_t, TensorBuffer>& dlogits_by_head) const;

  // EMA update of the running statistics from a batch-mode cache.
  void update_running(const ForwardCache& cache, double momentum = 0.1);

  const NormStats& running_stats() const { return running_; }
  void set_running_stats(const NormStats& s) { running_ = s; }
  void snapshot_norms(std::size_t task);
  bool has_snapshot(std::size_t task) const;
  const NormStats& snapshot(std::size_t task) const;
  void set_snapshot(std::size_t task, const NormStats& s);

 private:
  friend struct ForwardCache;
  NetConfig cfg_;
  std::vector<double> params_;
  std::vector<ParamGroup> groups_;   // trunk only
  std::size_t trunk_size_ = 0;
  std::vector<std::size_t> head_dims_;
  std::vector<std::size_t> head_offsets_;
  NormStats running_;
  std::vector<NormStats> snapshots_;
  std::vector<bool> snapshot_set_;

  std::size_t group_index(const std::string& name) const;
  const double* group_ptr(std::size_t gi) const {
    return params_.data() + groups_[gi].offset;
  }
};

// Activations cached by forward_trunk for the matching backward call.
struct ForwardCache {
  std::size_t batch = 0;
  NormMode mode = NormMode::Batch;
  // one entry per separable layer (stem + blocks); a layer's post-ReLU
  // activation is the next layer's input (the last one is neck_in)
  std::vector<TensorBuffer> layer_in;    // input to depthwise conv
  std::vector<TensorBuffer> dw_out;      // after depthwise conv
  std::vector<std::vector<double>> bn_mean;
  std::vector<std::vector<double>> bn_var;
  std::vector<TensorBuffer> bn_xhat;
  TensorBuffer neck_in;
  TensorBuffer neck_out;                 // pre-ReLU
  TensorBuffer pooled;                   // N x neck_channels
  bool valid = false;
};

struct OptimizerState {
  std::vector<double> velocity;
  double lr = 1e-3;
  double momentum = 0.9;

  explicit OptimizerState(std::size_t n, double lr_ = 1e-3,
                          double momentum_ = 0.9)
      : velocity(n, 0.0), lr(lr_), momentum(momentum_) {}
};

// v <- momentum*v + g;  theta <- theta - lr*v
void sgd_update(std::vector<double>& params, const std::vector<double>& grads,
                OptimizerState& opt);

// loss = mean(-log softmax(logits)[label]); dlogits = (softmax - onehot)/N
std::pair<double, TensorBuffer> cross_entropy(const TensorBuffer& logits,
                                              const std::vector<int>& labels);

// Central-difference check of backward() on a random parameter subsample.
double finite_diff_check(GestureNet& net, const TensorBuffer& batch,
                         const std::vector<int>& labels, std::size_t task,
                         double eps, Rng& rng,
                         std::size_t min_params = 200);

}  // namespace owgr
