#ifndef METAFG_SELECTION_HPP
#define METAFG_SELECTION_HPP

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "metafg/data.hpp"
#include "metafg/model.hpp"

namespace metafg {

struct ScoredSample {
  std::size_t sample_index = 0;
  double score = 0.0;
  std::optional<Relatedness> flag;
};

struct SelectionConfig {
  /// Fraction of top-scored samples to keep, in (0, 1]. Ties go to the
  /// lower sample index.
  double keep_ratio = 0.5;

  void validate() const;
};

/**
 * Relatedness score of one auxiliary sample from the raw logits of the two
 * heads: negatives are clamped to zero, [source ; target] is L2-normalised
 * and the normalised target entries are summed. A vector that is zero after
 * clamping scores 0.
 */
double score_logits(std::span<const double> source_logits, std::span<const double> target_logits);

ScoredSample score_sample(const TwoHeadParams& p, std::span<const double> features);
/// Scores every row of `aux`, carrying over its relatedness flags.
std::vector<ScoredSample> score_dataset(const TwoHeadParams& p, const LabeledDataset& aux);

/// Number of samples kept out of `n`: ceil(keep_ratio * n), at least 1.
std::size_t selection_count(std::size_t n, double keep_ratio);

/// Indices of the top ceil(keep_ratio * N) scores, in ascending index order.
std::vector<std::size_t> rank_and_select(std::span<const ScoredSample> scores, const SelectionConfig& cfg);

/// Fraction of `selected` indices whose flag is `related`.
double selection_precision(std::span<const std::size_t> selected, std::span<const Relatedness> flags);

/// CSV with columns sample_index,score,selected and, when every sample has
/// a flag, related_flag.
void write_scores_csv(const std::filesystem::path& path, std::span<const ScoredSample> scores,
                      std::span<const std::size_t> selected);

}  // namespace metafg

#endif  // METAFG_SELECTION_HPP
