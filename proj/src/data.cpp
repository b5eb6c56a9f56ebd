#include "metafg/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "metafg/io.hpp"

namespace metafg {

const char* to_string(Relatedness r) {
  switch (r) {
    case Relatedness::none: return "none";
    case Relatedness::related: return "related";
    case Relatedness::unrelated: return "unrelated";
    case Relatedness::noise: return "noise";
  }
  return "?";
}

LabeledDataset::LabeledDataset(std::size_t input_dim, std::size_t n_classes)
    : input_dim_(input_dim), n_classes_(n_classes) {
  if (input_dim == 0) throw std::invalid_argument("dataset input_dim must be positive");
  if (n_classes == 0) throw std::invalid_argument("dataset needs at least one class");
}

void LabeledDataset::add(std::span<const double> features, std::size_t label, Relatedness flag) {
  if (features.size() != input_dim_)
    throw std::invalid_argument("example has " + std::to_string(features.size()) + " features, dataset expects " +
                                std::to_string(input_dim_));
  if (label >= n_classes_)
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(n_classes_) + ")");
  features_.insert(features_.end(), features.begin(), features.end());
  labels_.push_back(label);
  flags_.push_back(flag);
}

Batch LabeledDataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw std::invalid_argument("cannot gather an empty batch");
  Batch batch;
  std::vector<double> values;
  values.reserve(indices.size() * input_dim_);
  batch.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("example index " + std::to_string(i) + " out of range");
    auto r = row(i);
    values.insert(values.end(), r.begin(), r.end());
    batch.labels.push_back(labels_[i]);
  }
  batch.features = Tensor::matrix(indices.size(), input_dim_, std::move(values));
  return batch;
}

Batch LabeledDataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(idx);
}

void TaskSpec::validate() const {
  auto fraction = [](double f, const char* name) {
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
  };
  fraction(related_fraction, "related_fraction");
  fraction(noise_fraction, "noise_fraction");
  if (input_dim == 0 || subspace_dim == 0) throw std::invalid_argument("task dimensions must be positive");
  if (subspace_dim >= input_dim)
    throw std::invalid_argument("subspace_dim must be smaller than input_dim to leave an orthogonal complement");
  if (n_target < 2 || n_source < 2) throw std::invalid_argument("tasks need at least 2 classes each");
  if (shots == 0) throw std::invalid_argument("shots must be at least 1");
  if (aux_per_class == 0) throw std::invalid_argument("aux_per_class must be at least 1");
  if (!(cluster_spread > 0.0) || !(centre_scale > 0.0) || !(noise_scale > 0.0) || !(feature_noise >= 0.0) ||
      !(class_separation >= 0.0))
    throw std::invalid_argument("task scales must be positive");
}

namespace {

// Columns of a random orthonormal basis (Gram-Schmidt with re-orthogonalisation).
Tensor random_basis(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Tensor q(Shape{dim, dim});
  std::vector<double> col(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    double norm = 0.0;
    do {
      for (double& v : col) v = normal(rng);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < j; ++k) {
          double proj = 0.0;
          for (std::size_t i = 0; i < dim; ++i) proj += q.at(i, k) * col[i];
          for (std::size_t i = 0; i < dim; ++i) col[i] -= proj * q.at(i, k);
        }
      }
      norm = std::sqrt(std::inner_product(col.begin(), col.end(), col.begin(), 0.0));
    } while (norm < 1e-6);
    for (std::size_t i = 0; i < dim; ++i) q.at(i, j) = col[i] / norm;
  }
  return q;
}

// Cluster centres in a `dim`-dimensional coordinate system, pairwise at least
// `min_dist` apart (also from any centre in `existing`).
std::vector<std::vector<double>> draw_centres(std::size_t count, std::size_t dim, double scale, double min_dist,
                                              const std::vector<std::vector<double>>& existing,
                                              std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<std::vector<double>> centres;
  auto far_enough = [&](const std::vector<double>& c, const std::vector<std::vector<double>>& others) {
    for (const auto& o : others) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d2 += (c[i] - o[i]) * (c[i] - o[i]);
      if (d2 < min_dist * min_dist) return false;
    }
    return true;
  };
  constexpr int kMaxAttempts = 100000;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> c(dim);
    int attempts = 0;
    do {
      if (++attempts > kMaxAttempts)
        throw std::invalid_argument("cannot place " + std::to_string(count) + " class centres " +
                                    std::to_string(min_dist) + " apart; raise centre_scale or subspace_dim");
      for (double& v : c) v = normal(rng);
    } while (!far_enough(c, centres) || !far_enough(c, existing));
    centres.push_back(std::move(c));
  }
  return centres;
}

// x = sum_k coords[k] * basis[:, first + k]
void embed_coords(const Tensor& basis, std::size_t first, std::span<const double> coords, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t dim = basis.rows();
  for (std::size_t k = 0; k < coords.size(); ++k)
    for (std::size_t i = 0; i < dim; ++i) out[i] += coords[k] * basis.at(i, first + k);
}

}  // namespace

SyntheticTask generate_task(const TaskSpec& spec, TaskInternals* internals) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  const std::size_t D = spec.input_dim;
  const std::size_t d = spec.subspace_dim;
  const std::size_t dc = D - d;
  const Tensor basis = random_basis(D, rng);
  const double min_dist = spec.class_separation * spec.cluster_spread;

  const std::size_t n_related = static_cast<std::size_t>(std::lround(spec.related_fraction * spec.n_source));
  const std::size_t n_unrelated = spec.n_source - n_related;

  const auto target_centres = draw_centres(spec.n_target, d, spec.centre_scale, min_dist, {}, rng);
  const auto related_centres = draw_centres(n_related, d, spec.centre_scale, min_dist, target_centres, rng);
  const auto unrelated_centres = draw_centres(n_unrelated, dc, spec.centre_scale, min_dist, {}, rng);

  std::vector<double> coords;
  std::vector<double> x(D);
  auto cluster_draw = [&](const std::vector<double>& centre) {
    coords.resize(centre.size());
    for (std::size_t k = 0; k < centre.size(); ++k) coords[k] = centre[k] + spec.cluster_spread * normal(rng);
    return std::span<const double>(coords);
  };
  auto add_feature_noise = [&](std::span<double> v) {
    for (double& e : v) e += spec.feature_noise * normal(rng);
  };

  SyntheticTask task{LabeledDataset(D, spec.n_target), LabeledDataset(D, spec.n_target),
                     LabeledDataset(D, spec.n_source)};
  for (LabeledDataset* split : {&task.target_train, &task.target_test}) {
    for (std::size_t s = 0; s < spec.shots; ++s) {
      for (std::size_t k = 0; k < spec.n_target; ++k) {
        embed_coords(basis, 0, cluster_draw(target_centres[k]), x);
        add_feature_noise(x);
        split->add(x, k);
      }
    }
  }

  // Auxiliary classes: related ones first, then unrelated. Noise draws take
  // the place of unrelated-class samples so the related share stays at
  // related_fraction of all samples.
  const std::size_t total = spec.n_source * spec.aux_per_class;
  const std::size_t related_samples = n_related * spec.aux_per_class;
  const std::size_t noise_samples =
      std::min(static_cast<std::size_t>(std::lround(spec.noise_fraction * static_cast<double>(total))),
               total - related_samples);
  const std::size_t unrelated_samples = total - related_samples - noise_samples;

  struct Pending {
    std::vector<double> clean;
    std::size_t label;
    Relatedness flag;
  };
  std::vector<Pending> pending;
  pending.reserve(total);
  for (std::size_t k = 0; k < n_related; ++k) {
    for (std::size_t s = 0; s < spec.aux_per_class; ++s) {
      embed_coords(basis, 0, cluster_draw(related_centres[k]), x);
      pending.push_back({x, k, Relatedness::related});
    }
  }
  for (std::size_t s = 0; s < unrelated_samples; ++s) {
    const std::size_t k = s % n_unrelated;
    embed_coords(basis, d, cluster_draw(unrelated_centres[k]), x);
    pending.push_back({x, n_related + k, Relatedness::unrelated});
  }
  std::uniform_int_distribution<std::size_t> any_class(0, spec.n_source - 1);
  for (std::size_t s = 0; s < noise_samples; ++s) {
    for (double& e : x) e = spec.noise_scale * normal(rng);
    pending.push_back({x, any_class(rng), Relatedness::noise});
  }
  std::shuffle(pending.begin(), pending.end(), rng);

  if (internals) {
    internals->basis = basis;
    internals->clean_auxiliary.clear();
  }
  for (Pending& p : pending) {
    if (internals) internals->clean_auxiliary.insert(internals->clean_auxiliary.end(), p.clean.begin(), p.clean.end());
    add_feature_noise(p.clean);
    task.auxiliary.add(p.clean, p.label, p.flag);
  }
  return task;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  if (size > n)
    throw std::invalid_argument("cannot draw " + std::to_string(size) + " distinct examples from " +
                                std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `size` slots end up a uniform draw.
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(size);
  return idx;
}

Batch sample_batch(const LabeledDataset& data, std::size_t size, std::mt19937_64& rng) {
  if (size == 0) throw std::invalid_argument("batch size must be at least 1");
  const auto idx = sample_indices(data.size(), size, rng);
  return data.gather(idx);
}

LabeledDataset subset_by_indices(const LabeledDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("subset would be empty; training needs a non-empty set");
  std::vector<bool> seen(data.size(), false);
  for (std::size_t i : indices) {
    if (i >= data.size())
      throw std::out_of_range("subset index " + std::to_string(i) + " outside dataset of size " +
                              std::to_string(data.size()));
    if (seen[i]) throw std::invalid_argument("duplicate subset index " + std::to_string(i));
    seen[i] = true;
  }
  LabeledDataset out(data.input_dim(), data.n_classes());
  for (std::size_t i = 0; i < data.size(); ++i)
    if (seen[i]) out.add(data.row(i), data.label(i), data.flag(i));
  return out;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream os = io::open_out(path);
  os << "metafg-dataset 1\n";
  os << "count " << data.size() << '\n';
  os << "input_dim " << data.input_dim() << '\n';
  os << "classes " << data.n_classes() << '\n';
  os << "end\n";
  io::write_raw(os, std::span<const double>(data.features()));
  std::vector<std::uint64_t> labels(data.labels().begin(), data.labels().end());
  io::write_raw(os, std::span<const std::uint64_t>(labels));
  std::vector<std::uint8_t> flags(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) flags[i] = static_cast<std::uint8_t>(data.flag(i));
  io::write_raw(os, std::span<const std::uint8_t>(flags));
  if (!os) throw std::runtime_error("failed writing dataset '" + path.string() + "'");
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is = io::open_in(path);
  const std::string what = "dataset";
  if (io::header_line(is, what) != "metafg-dataset 1")
    throw io::FormatError("'" + path.string() + "' is not a metafg dataset");
  const std::size_t count = io::parse_size(io::expect_key(is, "count", what), "count");
  const std::size_t dim = io::parse_size(io::expect_key(is, "input_dim", what), "input_dim");
  const std::size_t classes = io::parse_size(io::expect_key(is, "classes", what), "classes");
  if (io::header_line(is, what) != "end") throw io::FormatError("dataset header is missing 'end'");
  if (dim == 0 || classes == 0) throw io::FormatError("dataset header has zero dimensions");

  std::vector<double> features(count * dim);
  io::read_raw(is, std::span<double>(features), "dataset features");
  std::vector<std::uint64_t> labels(count);
  io::read_raw(is, std::span<std::uint64_t>(labels), "dataset labels");
  std::vector<std::uint8_t> flags(count);
  io::read_raw(is, std::span<std::uint8_t>(flags), "dataset flags");
  if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("trailing bytes after dataset");

  LabeledDataset data(dim, classes);
  for (std::size_t i = 0; i < count; ++i) {
    if (labels[i] >= classes) throw io::FormatError("dataset label out of range at row " + std::to_string(i));
    if (flags[i] > static_cast<std::uint8_t>(Relatedness::noise))
      throw io::FormatError("dataset flag out of range at row " + std::to_string(i));
    data.add(std::span<const double>(&features[i * dim], dim), labels[i], static_cast<Relatedness>(flags[i]));
  }
  return data;
}

}  // namespace metafg
