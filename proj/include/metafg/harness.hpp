#ifndef METAFG_HARNESS_HPP
#define METAFG_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "metafg/config.hpp"
#include "metafg/data.hpp"
#include "metafg/metatrain.hpp"
#include "metafg/model.hpp"
#include "metafg/selection.hpp"

namespace metafg {

enum class SelectionMode { off, on, both };

/// Whole protocol: warm-up on the auxiliary set, main phase per method,
/// optional selection and re-training, fine-tuning and evaluation.
struct ExperimentConfig {
  TaskSpec task;
  // One wide layer: with two stacked layers the target head responds to
  // unrelated auxiliary inputs through shared features and selection suffers.
  std::vector<std::size_t> hidden{256};
  TrainConfig warmup;
  TrainConfig main;
  TrainConfig finetune;
  std::vector<Method> methods{Method::finetune, Method::joint, Method::metafgnet};
  SelectionMode selection = SelectionMode::both;
  double keep_ratio = 0.5;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "metafg-out";
  /// Seeds run concurrently on up to this many threads.
  std::size_t threads = 1;

  ExperimentConfig();
  ModelConfig model() const;
  void validate() const;
};

/// Applies `key = value` settings (see README for the key list).
void apply_config(const KeyValueConfig& kv, ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ResultRow {
  Method method = Method::finetune;
  bool selection = false;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double finetune_loss = 0.0;     // target training loss after fine-tuning
  double main_meta_loss = 0.0;    // last main-phase target/meta loss (0 without a main phase)
  double main_reg_loss = 0.0;     // last main-phase auxiliary loss
  double selection_precision = -1.0;  // -1 when no selection happened

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  friend bool operator==(const ResultTable&, const ResultTable&) = default;
};

/// Failure in one protocol phase, tagged with the phase and seed.
class PhaseError : public std::runtime_error {
 public:
  PhaseError(std::string phase, std::uint64_t seed, const std::string& what);
  const std::string& phase() const { return phase_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::string phase_;
  std::uint64_t seed_;
};

/// Directory holding the artifacts of one (method, selection, seed) run.
std::filesystem::path run_directory(const std::filesystem::path& out, Method method, bool selection,
                                    std::uint64_t seed);

/// Per-phase seeds derived from the run seed, shared across methods so the
/// comparisons are paired.
struct SeedPlan {
  std::uint64_t task;
  std::uint64_t init;
  std::uint64_t warmup;
  std::uint64_t main;
  std::uint64_t head_reinit;
  std::uint64_t finetune;

  static SeedPlan from(std::uint64_t seed);
};

/// Runs every (method, selection, seed) combination and writes checkpoints,
/// training curves, score files and the result table under output_dir.
ResultTable run_experiment(const ExperimentConfig& cfg);

/// Writes results.csv and summary.csv (means per method and selection).
void emit_reports(const std::filesystem::path& out, const ResultTable& table);
void write_results_csv(const std::filesystem::path& path, const ResultTable& table);
ResultTable read_results_csv(const std::filesystem::path& path);

struct SummaryRow {
  Method method;
  bool selection;
  std::size_t runs;
  double mean_accuracy;
  double mean_finetune_loss;
  double mean_selection_precision;  // -1 when no selection happened
};
std::vector<SummaryRow> summarize(const ResultTable& table);

}  // namespace metafg

#endif  // METAFG_HARNESS_HPP
