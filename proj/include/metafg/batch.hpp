#ifndef METAFG_BATCH_HPP
#define METAFG_BATCH_HPP

#include <cstddef>
#include <vector>

#include "metafg/tensor.hpp"

namespace metafg {

/// A mini-batch: one feature row per example and its class label.
struct Batch {
  Tensor features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

}  // namespace metafg

#endif  // METAFG_BATCH_HPP
