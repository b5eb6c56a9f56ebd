#include "metafg/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "metafg/io.hpp"

namespace metafg {

void SelectionConfig::validate() const {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("keep_ratio must lie in (0, 1]");
}

double score_logits(std::span<const double> source_logits, std::span<const double> target_logits) {
  // Rescaling by the largest clamped entry keeps the norm free of overflow.
  double peak = 0.0;
  for (double z : source_logits) peak = std::max(peak, z);
  for (double z : target_logits) peak = std::max(peak, z);
  if (!(peak > 0.0)) return 0.0;
  double sq = 0.0;
  for (double z : source_logits)
    if (z > 0.0) sq += (z / peak) * (z / peak);
  for (double z : target_logits)
    if (z > 0.0) sq += (z / peak) * (z / peak);
  const double norm = std::sqrt(sq);
  double score = 0.0;
  for (double z : target_logits)
    if (z > 0.0) score += (z / peak) / norm;
  return score;
}

ScoredSample score_sample(const TwoHeadParams& p, std::span<const double> features) {
  const std::vector<double> zs = forward_source(p, features);
  const std::vector<double> zt = forward_target(p, features);
  return {0, score_logits(zs, zt), std::nullopt};
}

std::vector<ScoredSample> score_dataset(const TwoHeadParams& p, const LabeledDataset& aux) {
  if (aux.empty()) return {};
  const Tensor features = aux.all().features;
  const Tensor zs = forward(p, features, Head::source);
  const Tensor zt = forward(p, features, Head::target);
  std::vector<ScoredSample> out;
  out.reserve(aux.size());
  for (std::size_t i = 0; i < aux.size(); ++i) {
    const std::span<const double> s(&zs[i * zs.cols()], zs.cols());
    const std::span<const double> t(&zt[i * zt.cols()], zt.cols());
    std::optional<Relatedness> flag;
    if (aux.flag(i) != Relatedness::none) flag = aux.flag(i);
    out.push_back({i, score_logits(s, t), flag});
  }
  return out;
}

std::size_t selection_count(std::size_t n, double keep_ratio) {
  SelectionConfig{keep_ratio}.validate();
  // The slack absorbs representation error in ratios such as 1/3 * 3.
  const double k = std::ceil(keep_ratio * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

std::vector<std::size_t> rank_and_select(std::span<const ScoredSample> scores, const SelectionConfig& cfg) {
  cfg.validate();
  if (scores.empty()) throw std::invalid_argument("cannot select from an empty score list");
  std::vector<const ScoredSample*> order;
  order.reserve(scores.size());
  for (const ScoredSample& s : scores) order.push_back(&s);
  const std::size_t k = selection_count(scores.size(), cfg.keep_ratio);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [](const ScoredSample* a, const ScoredSample* b) {
                      if (a->score != b->score) return a->score > b->score;
                      return a->sample_index < b->sample_index;
                    });
  std::vector<std::size_t> selected;
  selected.reserve(k);
  for (std::size_t i = 0; i < k; ++i) selected.push_back(order[i]->sample_index);
  std::sort(selected.begin(), selected.end());
  return selected;
}

double selection_precision(std::span<const std::size_t> selected, std::span<const Relatedness> flags) {
  if (selected.empty()) throw std::invalid_argument("precision of an empty selection is undefined");
  std::size_t related = 0;
  for (std::size_t i : selected) {
    if (i >= flags.size()) throw std::out_of_range("selected index " + std::to_string(i) + " has no flag");
    if (flags[i] == Relatedness::related) ++related;
  }
  return static_cast<double>(related) / static_cast<double>(selected.size());
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoredSample> scores,
                      std::span<const std::size_t> selected) {
  const bool flagged =
      !scores.empty() && std::all_of(scores.begin(), scores.end(), [](const ScoredSample& s) { return s.flag; });
  std::vector<std::size_t> chosen(selected.begin(), selected.end());
  std::sort(chosen.begin(), chosen.end());
  std::ofstream os = io::open_out(path);
  os << "sample_index,score,selected" << (flagged ? ",related_flag" : "") << '\n';
  char buf[32];
  for (const ScoredSample& s : scores) {
    std::snprintf(buf, sizeof buf, "%.17g", s.score);
    const bool sel = std::binary_search(chosen.begin(), chosen.end(), s.sample_index);
    os << s.sample_index << ',' << buf << ',' << (sel ? 1 : 0);
    if (flagged) os << ',' << (*s.flag == Relatedness::related ? 1 : 0);
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing scores '" + path.string() + "'");
}

}  // namespace metafg
