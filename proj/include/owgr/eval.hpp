#pragma once

#include <cstddef>
#include <vector>

#include "owgr/net.hpp"
#include "owgr/taskproto.hpp"

namespace owgr {

// Stack selected windows into one N x 6 x 120 batch.
TensorBuffer stack_windows(const std::vector<LabeledWindow>& windows,
                           const std::vector<std::size_t>& indices);
TensorBuffer stack_windows(const std::vector<LabeledWindow>& windows);

// Fraction of windows whose argmax logit matches the label; frozen-stat
// forward, so batching does not change the result.
double evaluate_windows(const GestureNet& net,
                        const std::vector<LabeledWindow>& windows,
                        std::size_t task, const NormStats& stats);

}  // namespace owgr
