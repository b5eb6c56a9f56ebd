#include "metafg/metatrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "metafg/io.hpp"

namespace metafg {

Objective::Objective(std::shared_ptr<const ScalarFn> target, std::shared_ptr<const ScalarFn> source,
                     HeadPartition partition)
    : target_(std::move(target)), source_(std::move(source)), partition_(partition) {
  if (!target_ || !source_) throw std::invalid_argument("objective needs both loss functions");
  if (target_->layout().size() != partition_.total() || source_->layout().size() != partition_.total())
    throw std::invalid_argument("objective partition does not cover the parameter layout");
}

Objective Objective::for_model(const ModelConfig& config) {
  return Objective(std::make_shared<HeadLoss>(config, Head::target), std::make_shared<HeadLoss>(config, Head::source),
                   partition_of(config));
}

void TrainConfig::validate() const {
  if (!(meta_lr >= 0.0)) throw std::invalid_argument("meta_lr (eta) must be non-negative");
  if (!(lr > 0.0)) throw std::invalid_argument("lr (alpha) must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(reg_weight >= 0.0)) throw std::invalid_argument("reg_weight must be non-negative");
  if (batch_inner == 0 || batch_outer == 0 || batch_source == 0)
    throw std::invalid_argument("batch sizes must be at least 1");
}

namespace {
double decayed(double base, std::size_t decay_every, std::size_t epoch) {
  if (decay_every == 0) return base;
  return base * std::pow(0.1, static_cast<double>(epoch / decay_every));
}
}  // namespace

double TrainConfig::lr_at(std::size_t epoch) const { return decayed(lr, decay_every, epoch); }
double TrainConfig::meta_lr_at(std::size_t epoch) const { return decayed(meta_lr, decay_every, epoch); }

StepHyper StepHyper::from(const TrainConfig& config, std::size_t epoch) {
  return {config.lr_at(epoch), config.meta_lr_at(epoch), config.momentum, config.weight_decay, config.reg_weight};
}

void apply_sgd(ParamVector& p, const ParamVector& grad, const StepHyper& hyper, SgdState& state,
               std::span<const IndexRange> ranges) {
  p.require_compatible(grad, "apply_sgd");
  if (state.velocity.size() != p.size()) state.velocity.assign(p.size(), 0.0);
  for (const IndexRange& r : ranges) {
    if (r.begin > r.end || r.end > p.size()) throw std::out_of_range("apply_sgd: index range outside parameters");
    for (std::size_t i = r.begin; i < r.end; ++i) {
      const double d = grad[i] + hyper.weight_decay * p[i];
      double& v = state.velocity[i];
      v = hyper.momentum * v + d;
      p[i] -= hyper.lr * v;
    }
  }
}

void apply_sgd(ParamVector& p, const ParamVector& grad, const StepHyper& hyper, SgdState& state) {
  const IndexRange all{0, p.size()};
  apply_sgd(p, grad, hyper, state, std::span<const IndexRange>(&all, 1));
}

ParamVector inner_step(const Objective& obj, const ParamVector& p, const Batch& inner, double eta) {
  if (!(eta >= 0.0)) throw std::invalid_argument("inner step size must be non-negative");
  const ParamVector g = grad(obj.target(), p, inner);
  ParamVector adapted = p;
  for (std::size_t i = 0; i < obj.partition().target_model(); ++i) adapted[i] -= eta * g[i];
  return adapted;
}

MetaGradient meta_gradient(const Objective& obj, const ParamVector& p, const Batch& inner, const Batch& outer,
                           double eta, HvpBackend backend) {
  if (!(eta >= 0.0)) throw std::invalid_argument("inner step size must be non-negative");
  if (inner.empty() || outer.empty()) throw std::invalid_argument("meta_gradient needs non-empty batches");
  const std::size_t n_model = obj.partition().target_model();

  const TracedGradient inner_grad(obj.target(), p, inner);
  ParamVector adapted = p;
  for (std::size_t i = 0; i < n_model; ++i) adapted[i] -= eta * inner_grad.gradient()[i];

  ValueGrad outer_vg = value_and_grad(obj.target(), adapted, outer);
  ParamVector& g_outer = outer_vg.gradient;
  for (std::size_t i = n_model; i < g_outer.size(); ++i) g_outer[i] = 0.0;

  const ParamVector hg = backend == HvpBackend::exact
                             ? inner_grad.hvp(g_outer)
                             : hvp(obj.target(), p, inner, g_outer, {HvpBackend::finite_difference, std::nullopt});

  MetaGradient out{std::move(g_outer), inner_grad.value(), outer_vg.value};
  for (std::size_t i = 0; i < n_model; ++i) out.gradient[i] -= eta * hg[i];
  return out;
}

StepLosses meta_train_step(const Objective& obj, ParamVector& p, const Batch& inner, const Batch& outer,
                           const Batch& source, const StepHyper& hyper, SgdState& state) {
  // Both gradients are taken at the same snapshot and applied together.
  const ValueGrad reg = value_and_grad(obj.source(), p, source);
  MetaGradient meta = meta_gradient(obj, p, inner, outer, hyper.meta_lr);
  ParamVector& update = meta.gradient;
  const std::size_t n_model = obj.partition().target_model();
  for (std::size_t i = 0; i < update.size(); ++i) {
    const double target_part = i < n_model ? update[i] : 0.0;
    update[i] = target_part + hyper.reg_weight * reg.gradient[i];
  }
  apply_sgd(p, update, hyper, state);
  return {meta.outer_loss, reg.value};
}

StepLosses joint_train_step(const Objective& obj, ParamVector& p, const Batch& target, const Batch& source,
                            const StepHyper& hyper, SgdState& state) {
  const ValueGrad reg = value_and_grad(obj.source(), p, source);
  ValueGrad tgt = value_and_grad(obj.target(), p, target);
  ParamVector& update = tgt.gradient;
  const std::size_t n_model = obj.partition().target_model();
  for (std::size_t i = 0; i < update.size(); ++i) {
    const double target_part = i < n_model ? update[i] : 0.0;
    update[i] = target_part + hyper.reg_weight * reg.gradient[i];
  }
  apply_sgd(p, update, hyper, state);
  return {tgt.value, reg.value};
}

const char* to_string(Method m) {
  switch (m) {
    case Method::finetune: return "finetune";
    case Method::joint: return "joint";
    case Method::metafgnet: return "metafgnet";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "finetune" || text == "finetune-only") return Method::finetune;
  if (text == "joint") return Method::joint;
  if (text == "metafgnet") return Method::metafgnet;
  throw std::invalid_argument("unknown method '" + text + "' (expected finetune, joint or metafgnet)");
}

bool TrainReport::same_values(const TrainReport& other) const {
  if (iterations.size() != other.iterations.size() || epoch_accuracy != other.epoch_accuracy) return false;
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    const IterationRecord& a = iterations[i];
    const IterationRecord& b = other.iterations[i];
    if (a.iteration != b.iteration || a.epoch != b.epoch || a.meta_loss != b.meta_loss ||
        a.reg_loss != b.reg_loss || a.lr != b.lr || a.meta_lr != b.meta_lr)
      return false;
  }
  return true;
}

namespace {
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream os = io::open_out(path);
  os << "iteration,epoch,meta_loss,reg_loss,lr,meta_lr\n";
  for (const IterationRecord& r : report.iterations)
    os << r.iteration << ',' << r.epoch << ',' << fmt_double(r.meta_loss) << ',' << fmt_double(r.reg_loss) << ','
       << fmt_double(r.lr) << ',' << fmt_double(r.meta_lr) << '\n';
  if (!os) throw std::runtime_error("failed writing report '" + path.string() + "'");
}

TrainReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream is = io::open_in(path);
  std::string line;
  if (!std::getline(is, line) || line != "iteration,epoch,meta_loss,reg_loss,lr,meta_lr")
    throw io::FormatError("'" + path.string() + "' lacks the report header row");
  TrainReport report;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell[6];
    for (auto& c : cell)
      if (!std::getline(ls, c, ',')) throw io::FormatError("short report row: '" + line + "'");
    IterationRecord r;
    try {
      r.iteration = io::parse_size(cell[0], "iteration");
      r.epoch = io::parse_size(cell[1], "epoch");
      r.meta_loss = std::stod(cell[2]);
      r.reg_loss = std::stod(cell[3]);
      r.lr = std::stod(cell[4]);
      r.meta_lr = std::stod(cell[5]);
    } catch (const std::logic_error&) {
      throw io::FormatError("malformed report row: '" + line + "'");
    }
    report.iterations.push_back(r);
  }
  return report;
}

double evaluate(const TwoHeadParams& p, const LabeledDataset& test) {
  if (test.empty()) throw std::invalid_argument("evaluation needs a non-empty test set");
  const Tensor z = forward(p, test.all().features, Head::target);
  const std::size_t c = z.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (z.at(i, j) > z.at(i, best)) best = j;
    if (best == test.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

namespace {

enum class Phase { warmup, finetune, joint, metafgnet };

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

TrainResult run_phase(Phase phase, const TwoHeadParams& init, const LabeledDataset* target,
                      const LabeledDataset* source, const TrainConfig& config, const LabeledDataset* eval) {
  config.validate();
  const bool uses_target = phase != Phase::warmup;
  const bool uses_source = phase != Phase::finetune;
  if (uses_target && (!target || target->empty())) throw std::invalid_argument("training needs target data");
  if (uses_source && (!source || source->empty())) throw std::invalid_argument("training needs auxiliary data");

  const Objective obj = Objective::for_model(init.config());
  const HeadPartition& part = obj.partition();
  TrainResult result{init, {}};
  ParamVector& p = result.params.flat();
  SgdState state;

  // Independent streams so the auxiliary batches do not depend on how many
  // target batches a method draws.
  std::seed_seq target_seq{config.seed, std::uint64_t{0x7461}};
  std::seed_seq source_seq{config.seed, std::uint64_t{0x7372}};
  std::mt19937_64 target_rng(target_seq);
  std::mt19937_64 source_rng(source_seq);

  const std::size_t n_inner = uses_target ? std::min(config.batch_inner, target->size()) : 0;
  const std::size_t n_outer = uses_target ? std::min(config.batch_outer, target->size()) : 0;
  const std::size_t n_source = uses_source ? std::min(config.batch_source, source->size()) : 0;
  const std::size_t per_epoch =
      phase == Phase::finetune ? ceil_div(target->size(), n_inner) : ceil_div(source->size(), n_source);

  const IndexRange target_model{0, part.target_model()};
  const IndexRange source_model[] = {{0, part.base}, {part.source_offset(), part.total()}};

  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const StepHyper hyper = StepHyper::from(config, epoch);
    for (std::size_t it = 0; it < per_epoch; ++it) {
      const auto start = std::chrono::steady_clock::now();
      IterationRecord rec{iteration, epoch, 0.0, 0.0, hyper.lr, phase == Phase::metafgnet ? hyper.meta_lr : 0.0,
                          0.0};
      switch (phase) {
        case Phase::warmup: {
          const Batch s = sample_batch(*source, n_source, source_rng);
          const ValueGrad vg = value_and_grad(obj.source(), p, s);
          apply_sgd(p, vg.gradient, hyper, state, source_model);
          rec.reg_loss = vg.value;
          break;
        }
        case Phase::finetune: {
          const Batch t = sample_batch(*target, n_inner, target_rng);
          const ValueGrad vg = value_and_grad(obj.target(), p, t);
          apply_sgd(p, vg.gradient, hyper, state, std::span<const IndexRange>(&target_model, 1));
          rec.meta_loss = vg.value;
          break;
        }
        case Phase::joint: {
          const Batch s = sample_batch(*source, n_source, source_rng);
          const Batch t = sample_batch(*target, n_inner, target_rng);
          const StepLosses l = joint_train_step(obj, p, t, s, hyper, state);
          rec.meta_loss = l.meta_loss;
          rec.reg_loss = l.reg_loss;
          break;
        }
        case Phase::metafgnet: {
          const Batch s = sample_batch(*source, n_source, source_rng);
          const Batch ti = sample_batch(*target, n_inner, target_rng);
          const Batch tj = sample_batch(*target, n_outer, target_rng);
          const StepLosses l = meta_train_step(obj, p, ti, tj, s, hyper, state);
          rec.meta_loss = l.meta_loss;
          rec.reg_loss = l.reg_loss;
          break;
        }
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.report.iterations.push_back(rec);
      ++iteration;
    }
    if (eval) result.report.epoch_accuracy.push_back(evaluate(result.params, *eval));
  }
  return result;
}

}  // namespace

TrainResult finetune(const TwoHeadParams& init, const LabeledDataset& target, const TrainConfig& config,
                     const LabeledDataset* eval) {
  return run_phase(Phase::finetune, init, &target, nullptr, config, eval);
}

TrainResult warmup(const TwoHeadParams& init, const LabeledDataset& source, const TrainConfig& config) {
  return run_phase(Phase::warmup, init, nullptr, &source, config, nullptr);
}

TrainResult train_loop(Method method, const TwoHeadParams& init, const LabeledDataset& target,
                       const LabeledDataset& source, const TrainConfig& config, const LabeledDataset* eval) {
  switch (method) {
    case Method::finetune: return run_phase(Phase::finetune, init, &target, nullptr, config, eval);
    case Method::joint: return run_phase(Phase::joint, init, &target, &source, config, eval);
    case Method::metafgnet: return run_phase(Phase::metafgnet, init, &target, &source, config, eval);
  }
  throw std::invalid_argument("unknown training method");
}

}  // namespace metafg
