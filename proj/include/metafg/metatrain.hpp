#ifndef METAFG_METATRAIN_HPP
#define METAFG_METATRAIN_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metafg/data.hpp"
#include "metafg/model.hpp"

namespace metafg {

/**
 * Target loss L and auxiliary regulariser R over one flat parameter vector
 * laid out as [base | target head | source head].
 *
 * L must not depend on the source head and R must not depend on the target
 * head; the training steps rely on this to keep the heads isolated.
 */
class Objective {
 public:
  Objective(std::shared_ptr<const ScalarFn> target, std::shared_ptr<const ScalarFn> source, HeadPartition partition);
  /// Cross-entropy on the target head and on the source head of a model.
  static Objective for_model(const ModelConfig& config);

  const ScalarFn& target() const { return *target_; }
  const ScalarFn& source() const { return *source_; }
  const HeadPartition& partition() const { return partition_; }

 private:
  std::shared_ptr<const ScalarFn> target_;
  std::shared_ptr<const ScalarFn> source_;
  HeadPartition partition_;
};

struct TrainConfig {
  double lr = 0.1;        // outer step size (alpha)
  double meta_lr = 0.01;  // inner step size (eta)
  /// Both step sizes are divided by 10 every `decay_every` epochs; 0 disables.
  std::size_t decay_every = 0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Weight of the auxiliary term; 1 is the unweighted objective.
  double reg_weight = 1.0;
  std::size_t batch_inner = 32;   // |T_i|
  std::size_t batch_outer = 32;   // |T_j|
  std::size_t batch_source = 32;  // |S_i|
  std::size_t epochs = 10;
  std::uint64_t seed = 1;

  void validate() const;
  double lr_at(std::size_t epoch) const;
  double meta_lr_at(std::size_t epoch) const;
};

/// Step sizes and regularisation for a single update.
struct StepHyper {
  double lr = 0.1;
  double meta_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double reg_weight = 1.0;

  static StepHyper from(const TrainConfig& config, std::size_t epoch);
};

/// Momentum buffer of heavy-ball SGD, one entry per parameter.
struct SgdState {
  std::vector<double> velocity;
};

/// Half-open range of flat parameter indices.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/**
 * Heavy-ball SGD with coupled weight decay on the given coordinates:
 * d = g + wd * p; v = mu * v + d; p -= lr * v, with v starting at zero.
 * Coordinates outside `ranges` are left untouched.
 */
void apply_sgd(ParamVector& p, const ParamVector& grad, const StepHyper& hyper, SgdState& state,
               std::span<const IndexRange> ranges);
void apply_sgd(ParamVector& p, const ParamVector& grad, const StepHyper& hyper, SgdState& state);

struct StepLosses {
  double meta_loss = 0.0;  // target loss after adaptation (meta step) or at p (joint step)
  double reg_loss = 0.0;   // auxiliary loss at p
};

/// theta^t' = theta^t - eta * grad L(T_i; theta^t). The source head is copied.
ParamVector inner_step(const Objective& obj, const ParamVector& p, const Batch& inner, double eta);

struct MetaGradient {
  /// Full-layout vector; the source-head segment is zero.
  ParamVector gradient;
  double inner_loss = 0.0;  // L(T_i; theta^t)
  double outer_loss = 0.0;  // L(T_j; theta^t')
};

/**
 * Gradient of L(T_j; theta^t - eta * grad L(T_i; theta^t)) with respect to
 * theta^t, computed as g' - eta * H g' with g' the outer gradient at the
 * adapted point and H the Hessian of L(T_i; .) at theta^t. H is only touched
 * through one Hessian-vector product.
 */
MetaGradient meta_gradient(const Objective& obj, const ParamVector& p, const Batch& inner, const Batch& outer,
                           double eta, HvpBackend backend = HvpBackend::exact);

/// One iteration of the regularised meta-learning update; mutates `p`.
StepLosses meta_train_step(const Objective& obj, ParamVector& p, const Batch& inner, const Batch& outer,
                           const Batch& source, const StepHyper& hyper, SgdState& state);

/// One SGD step on L(T_i) + reg_weight * R(S_i); mutates `p`.
StepLosses joint_train_step(const Objective& obj, ParamVector& p, const Batch& target, const Batch& source,
                            const StepHyper& hyper, SgdState& state);

enum class Method { finetune, joint, metafgnet };

const char* to_string(Method m);
Method parse_method(const std::string& text);

struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double meta_loss = 0.0;
  double reg_loss = 0.0;
  double lr = 0.0;
  double meta_lr = 0.0;
  double seconds = 0.0;  // wall clock; excluded from comparisons
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
  /// Target accuracy on the evaluation set after each epoch (empty without one).
  std::vector<double> epoch_accuracy;

  /// Equality of everything except wall-clock timings.
  bool same_values(const TrainReport& other) const;
};

void write_report_csv(const std::filesystem::path& path, const TrainReport& report);
/// Reads the CSV columns back; timings and epoch accuracies are not stored.
TrainReport read_report_csv(const std::filesystem::path& path);

struct TrainResult {
  TwoHeadParams params;
  TrainReport report;
};

/// Fraction of rows whose arg-max target logit (lowest index on ties)
/// equals the label.
double evaluate(const TwoHeadParams& p, const LabeledDataset& test);

/// SGD on the target loss only; the source head stays frozen.
/// The caller re-initialises the target head beforehand if desired.
TrainResult finetune(const TwoHeadParams& init, const LabeledDataset& target, const TrainConfig& config,
                     const LabeledDataset* eval = nullptr);

/// SGD on the auxiliary loss only, target head frozen (pre-training analog).
TrainResult warmup(const TwoHeadParams& init, const LabeledDataset& source, const TrainConfig& config);

/**
 * Runs `config.epochs` epochs of `method`. For joint and metafgnet an epoch
 * is one pass over the auxiliary set in |S_i|-sized batches; for finetune it
 * is one pass over the target set.
 */
TrainResult train_loop(Method method, const TwoHeadParams& init, const LabeledDataset& target,
                       const LabeledDataset& source, const TrainConfig& config,
                       const LabeledDataset* eval = nullptr);

}  // namespace metafg

#endif  // METAFG_METATRAIN_HPP
