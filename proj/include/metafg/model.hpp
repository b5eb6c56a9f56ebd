#ifndef METAFG_MODEL_HPP
#define METAFG_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "metafg/differentiate.hpp"

namespace metafg {

struct ModelConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t n_target = 10;
  std::size_t n_source = 40;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Head { target, source };

/// Lengths of the three parameter groups. The flat layout is always
/// [base | target head | source head], so the target model is a prefix.
struct HeadPartition {
  std::size_t base = 0;
  std::size_t target = 0;
  std::size_t source = 0;

  std::size_t total() const { return base + target + source; }
  std::size_t target_model() const { return base + target; }
  std::size_t source_offset() const { return base + target; }
};

/// Base and head of one of the two classifiers. Both views alias the same
/// base storage.
struct ModelView {
  std::span<double> base;
  std::span<double> head;
};

std::shared_ptr<const Layout> make_layout(const ModelConfig& config);

/// Parameters of the shared base network and its two linear classifier heads.
class TwoHeadParams {
 public:
  /// All-zero parameters.
  explicit TwoHeadParams(ModelConfig config);
  TwoHeadParams(ModelConfig config, ParamVector flat);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
  static TwoHeadParams initialized(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const HeadPartition& partition() const { return partition_; }
  ParamVector& flat() { return flat_; }
  const ParamVector& flat() const { return flat_; }

  std::span<double> base() { return flat_.values().subspan(0, partition_.base); }
  std::span<double> target_head() { return flat_.values().subspan(partition_.base, partition_.target); }
  std::span<double> source_head() { return flat_.values().subspan(partition_.source_offset(), partition_.source); }
  std::span<const double> base() const { return flat_.values().subspan(0, partition_.base); }
  std::span<const double> target_head() const {
    return flat_.values().subspan(partition_.base, partition_.target);
  }
  std::span<const double> source_head() const {
    return flat_.values().subspan(partition_.source_offset(), partition_.source);
  }

  ModelView target_view() { return {base(), target_head()}; }
  ModelView source_view() { return {base(), source_head()}; }

  /// Draws fresh target-head weights with the construction-time scheme.
  void reinit_target_head(std::uint64_t seed);

  friend bool operator==(const TwoHeadParams& a, const TwoHeadParams& b) {
    return a.config_ == b.config_ && a.flat_ == b.flat_;
  }

 private:
  ModelConfig config_;
  HeadPartition partition_;
  ParamVector flat_;
};

HeadPartition partition_of(const ModelConfig& config);

/// Traced logits of `head` for every row of `features`.
ad::Var logits(const ModelConfig& config, const Layout& layout, const ad::Var& params, const Tensor& features,
               Head head);

/// Logits of each row of a (rows x input_dim) feature matrix.
Tensor forward(const TwoHeadParams& p, const Tensor& features, Head head);
std::vector<double> forward_target(const TwoHeadParams& p, std::span<const double> x);
std::vector<double> forward_source(const TwoHeadParams& p, std::span<const double> x);

/// Mean softmax cross-entropy of one head over a batch, as a ScalarFn of
/// the full flat parameter vector.
class HeadLoss final : public ScalarFn {
 public:
  HeadLoss(ModelConfig config, Head head);

  const Layout& layout() const override { return *layout_; }
  ad::Var build(const ad::Var& params, const Batch& batch) const override;
  Head head() const { return head_; }

 private:
  ModelConfig config_;
  std::shared_ptr<const Layout> layout_;
  Head head_;
};

double loss_target(const TwoHeadParams& p, const Batch& batch);
double loss_source(const TwoHeadParams& p, const Batch& batch);

void save_checkpoint(const std::filesystem::path& path, const TwoHeadParams& p);
TwoHeadParams load_checkpoint(const std::filesystem::path& path);

}  // namespace metafg

#endif  // METAFG_MODEL_HPP
