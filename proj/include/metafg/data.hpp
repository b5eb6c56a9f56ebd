#ifndef METAFG_DATA_HPP
#define METAFG_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "metafg/batch.hpp"

namespace metafg {

/// Ground-truth relation of an auxiliary example to the target task.
/// Target examples carry `none`.
enum class Relatedness : std::uint8_t { none = 0, related = 1, unrelated = 2, noise = 3 };

const char* to_string(Relatedness r);

struct LabeledExample {
  std::vector<double> features;
  std::size_t label = 0;
  Relatedness flag = Relatedness::none;
};

/// Row-major feature matrix with per-row labels and relatedness flags.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::size_t input_dim, std::size_t n_classes);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  void add(std::span<const double> features, std::size_t label, Relatedness flag = Relatedness::none);
  void add(const LabeledExample& ex) { add(ex.features, ex.label, ex.flag); }

  std::span<const double> row(std::size_t i) const { return {&features_[i * input_dim_], input_dim_}; }
  std::size_t label(std::size_t i) const { return labels_[i]; }
  Relatedness flag(std::size_t i) const { return flags_[i]; }

  const std::vector<double>& features() const { return features_; }
  const std::vector<std::size_t>& labels() const { return labels_; }
  const std::vector<Relatedness>& flags() const { return flags_; }

  /// Rows at `indices`, in the given order.
  Batch gather(std::span<const std::size_t> indices) const;
  Batch all() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;

 private:
  std::size_t input_dim_ = 0;
  std::size_t n_classes_ = 0;
  std::vector<double> features_;
  std::vector<std::size_t> labels_;
  std::vector<Relatedness> flags_;
};

/**
 * Parameters of the synthetic fine-grained benchmark.
 *
 * Target classes and related auxiliary classes are Gaussian clusters inside a
 * `subspace_dim`-dimensional subspace; unrelated auxiliary classes live in its
 * orthogonal complement. Class centres are at least `class_separation`
 * cluster spreads apart.
 */
struct TaskSpec {
  std::size_t input_dim = 32;
  std::size_t subspace_dim = 8;
  std::size_t n_target = 10;
  std::size_t shots = 10;
  std::size_t n_source = 40;
  std::size_t aux_per_class = 50;
  double related_fraction = 0.5;
  double noise_fraction = 0.1;
  double cluster_spread = 1.0;
  double class_separation = 3.0;
  double centre_scale = 2.0;
  double noise_scale = 4.0;
  double feature_noise = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticTask {
  LabeledDataset target_train;
  LabeledDataset target_test;
  LabeledDataset auxiliary;
};

/// Generator state exposed for invariant checks.
struct TaskInternals {
  /// input_dim x input_dim orthonormal basis; the first subspace_dim
  /// columns span the semantic subspace.
  Tensor basis;
  /// Auxiliary features before the isotropic feature noise is added.
  std::vector<double> clean_auxiliary;
};

SyntheticTask generate_task(const TaskSpec& spec, TaskInternals* internals = nullptr);

/// `size` distinct indices in [0, n), uniformly at random.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t size, std::mt19937_64& rng);
Batch sample_batch(const LabeledDataset& data, std::size_t size, std::mt19937_64& rng);

/// Order-preserving subset. Rejects empty, duplicate or out-of-range indices.
LabeledDataset subset_by_indices(const LabeledDataset& data, std::span<const std::size_t> indices);

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace metafg

#endif  // METAFG_DATA_HPP
