#ifndef METAFG_TESTS_SUPPORT_HPP
#define METAFG_TESTS_SUPPORT_HPP

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>

#include "metafg/autodiff.hpp"
#include "metafg/batch.hpp"
#include "metafg/differentiate.hpp"
#include "metafg/model.hpp"
#include "oracles.hpp"

namespace testing_support {

using metafg::ad::Var;

/// ScalarFn over a single flat segment "p", built from a lambda.
class LambdaFn final : public metafg::ScalarFn {
 public:
  using Builder = std::function<Var(const Var&, const metafg::Batch&)>;
  LambdaFn(std::size_t n, Builder b) : layout_(std::make_shared<metafg::Layout>()), build_(std::move(b)) {
    std::const_pointer_cast<metafg::Layout>(layout_)->add("p", {n});
  }
  const metafg::Layout& layout() const override { return *layout_; }
  Var build(const Var& params, const metafg::Batch& batch) const override { return build_(params, batch); }
  std::shared_ptr<const metafg::Layout> layout_ptr() const { return layout_; }
  metafg::ParamVector point(std::vector<double> v) const { return metafg::ParamVector(layout_, std::move(v)); }

 private:
  std::shared_ptr<const metafg::Layout> layout_;
  Builder build_;
};

/// Two hidden layers, about 265 parameters.
inline metafg::ModelConfig small_model() {
  metafg::ModelConfig c;
  c.input_dim = 6;
  c.hidden = {12, 8};
  c.n_target = 4;
  c.n_source = 5;
  return c;
}

inline metafg::Batch random_batch(std::size_t rows, std::size_t dim, std::size_t classes, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> label(0, classes - 1);
  metafg::Batch b{metafg::Tensor(metafg::Shape{rows, dim}), {}};
  for (double& v : b.features.data()) v = normal(rng);
  for (std::size_t r = 0; r < rows; ++r) b.labels.push_back(label(rng));
  return b;
}

/// Redraws until every hidden pre-activation is at least `margin` from the
/// rectifier kink, so finite differences stay on one linear piece.
inline metafg::Batch batch_clear_of_kinks(const metafg::ModelConfig& cfg, const oracle::Vec& p, std::size_t rows,
                                          std::size_t classes, std::mt19937_64& rng, double margin = 1e-3) {
  for (;;) {
    metafg::Batch b = random_batch(rows, cfg.input_dim, classes, rng);
    const oracle::Vec feats(b.features.data().begin(), b.features.data().end());
    if (oracle::min_abs_preactivation(cfg, p, feats, rows) > margin) return b;
  }
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("metafg-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline oracle::Vec to_vec(const metafg::ParamVector& p) { return {p.values().begin(), p.values().end()}; }

}  // namespace testing_support

#endif  // METAFG_TESTS_SUPPORT_HPP
