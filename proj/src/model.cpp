#include "metafg/model.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "metafg/io.hpp"

namespace metafg {

namespace {

std::string layer_name(std::size_t i, const char* part) {
  return "base." + std::to_string(i) + "." + part;
}

const char* head_prefix(Head head) { return head == Head::target ? "target" : "source"; }

std::size_t head_classes(const ModelConfig& c, Head head) { return head == Head::target ? c.n_target : c.n_source; }

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every entry of `out`.
void fill_uniform(std::span<double> out, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : out) v = dist(rng);
}

void init_head(ParamVector& flat, const ModelConfig& config, Head head, std::mt19937_64& rng) {
  const std::size_t fan_in = config.hidden.back();
  const std::string prefix = head_prefix(head);
  fill_uniform(flat.segment(prefix + ".weight"), fan_in, rng);
  fill_uniform(flat.segment(prefix + ".bias"), fan_in, rng);
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model input_dim must be positive");
  if (hidden.empty()) throw std::invalid_argument("model needs at least one hidden layer");
  for (std::size_t w : hidden)
    if (w == 0) throw std::invalid_argument("hidden layer widths must be positive");
  if (n_target < 2) throw std::invalid_argument("model needs at least 2 target classes");
  if (n_source < 2) throw std::invalid_argument("model needs at least 2 source classes");
}

std::shared_ptr<const Layout> make_layout(const ModelConfig& config) {
  config.validate();
  auto layout = std::make_shared<Layout>();
  std::size_t fan_in = config.input_dim;
  for (std::size_t i = 0; i < config.hidden.size(); ++i) {
    layout->add(layer_name(i, "weight"), Shape{fan_in, config.hidden[i]});
    layout->add(layer_name(i, "bias"), Shape{1, config.hidden[i]});
    fan_in = config.hidden[i];
  }
  layout->add("target.weight", Shape{fan_in, config.n_target});
  layout->add("target.bias", Shape{1, config.n_target});
  layout->add("source.weight", Shape{fan_in, config.n_source});
  layout->add("source.bias", Shape{1, config.n_source});
  return layout;
}

HeadPartition partition_of(const ModelConfig& config) {
  config.validate();
  HeadPartition part;
  std::size_t fan_in = config.input_dim;
  for (std::size_t w : config.hidden) {
    part.base += (fan_in + 1) * w;
    fan_in = w;
  }
  part.target = (fan_in + 1) * config.n_target;
  part.source = (fan_in + 1) * config.n_source;
  return part;
}

TwoHeadParams::TwoHeadParams(ModelConfig config)
    : config_(std::move(config)), partition_(partition_of(config_)), flat_(make_layout(config_)) {}

TwoHeadParams::TwoHeadParams(ModelConfig config, ParamVector flat)
    : config_(std::move(config)), partition_(partition_of(config_)), flat_(std::move(flat)) {
  if (!(flat_.layout() == *make_layout(config_)))
    throw std::invalid_argument("parameter layout does not match the model configuration");
}

TwoHeadParams TwoHeadParams::initialized(ModelConfig config, std::uint64_t seed) {
  TwoHeadParams p(std::move(config));
  std::mt19937_64 rng(seed);
  std::size_t fan_in = p.config_.input_dim;
  for (std::size_t i = 0; i < p.config_.hidden.size(); ++i) {
    fill_uniform(p.flat_.segment(layer_name(i, "weight")), fan_in, rng);
    fill_uniform(p.flat_.segment(layer_name(i, "bias")), fan_in, rng);
    fan_in = p.config_.hidden[i];
  }
  init_head(p.flat_, p.config_, Head::target, rng);
  init_head(p.flat_, p.config_, Head::source, rng);
  return p;
}

void TwoHeadParams::reinit_target_head(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  init_head(flat_, config_, Head::target, rng);
}

ad::Var logits(const ModelConfig& config, const Layout& layout, const ad::Var& params, const Tensor& features,
               Head head) {
  if (features.rank() != 2 || features.cols() != config.input_dim)
    throw std::invalid_argument("features of shape " + shape_string(features.shape()) + " do not match input_dim " +
                                std::to_string(config.input_dim));
  auto seg = [&](const std::string& name) {
    const Segment& s = layout.segment(name);
    return ad::slice(params, s.offset, s.shape);
  };
  ad::Var h = ad::constant(features);
  for (std::size_t i = 0; i < config.hidden.size(); ++i)
    h = ad::relu(ad::add_row(ad::matmul(h, seg(layer_name(i, "weight"))), seg(layer_name(i, "bias"))));
  const std::string prefix = head_prefix(head);
  return ad::add_row(ad::matmul(h, seg(prefix + ".weight")), seg(prefix + ".bias"));
}

Tensor forward(const TwoHeadParams& p, const Tensor& features, Head head) {
  ad::NoGradGuard no_grad;
  return logits(p.config(), p.flat().layout(), ad::constant(p.flat().to_tensor()), features, head).value();
}

namespace {
std::vector<double> forward_one(const TwoHeadParams& p, std::span<const double> x, Head head) {
  if (x.size() != p.config().input_dim)
    throw std::invalid_argument("feature vector has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(p.config().input_dim));
  Tensor row = Tensor::matrix(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return forward(p, row, head).values();
}
}  // namespace

std::vector<double> forward_target(const TwoHeadParams& p, std::span<const double> x) {
  return forward_one(p, x, Head::target);
}

std::vector<double> forward_source(const TwoHeadParams& p, std::span<const double> x) {
  return forward_one(p, x, Head::source);
}

HeadLoss::HeadLoss(ModelConfig config, Head head)
    : config_(std::move(config)), layout_(make_layout(config_)), head_(head) {}

ad::Var HeadLoss::build(const ad::Var& params, const Batch& batch) const {
  if (batch.empty()) throw std::invalid_argument("loss over an empty batch");
  if (batch.features.rank() != 2 || batch.features.rows() != batch.size())
    throw std::invalid_argument("batch has " + std::to_string(batch.size()) + " labels but features of shape " +
                                shape_string(batch.features.shape()));
  const std::size_t classes = head_classes(config_, head_);
  for (std::size_t y : batch.labels)
    if (y >= classes)
      throw std::out_of_range(std::string(head_prefix(head_)) + " label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
  return ad::softmax_cross_entropy(logits(config_, *layout_, params, batch.features, head_), batch.labels);
}

double loss_target(const TwoHeadParams& p, const Batch& batch) {
  return value(HeadLoss(p.config(), Head::target), p.flat(), batch);
}

double loss_source(const TwoHeadParams& p, const Batch& batch) {
  return value(HeadLoss(p.config(), Head::source), p.flat(), batch);
}

void save_checkpoint(const std::filesystem::path& path, const TwoHeadParams& p) {
  std::ofstream os = io::open_out(path);
  const ModelConfig& c = p.config();
  os << "metafg-checkpoint 1\n";
  os << "input_dim " << c.input_dim << '\n';
  os << "hidden";
  for (std::size_t w : c.hidden) os << ' ' << w;
  os << '\n';
  os << "n_target " << c.n_target << '\n';
  os << "n_source " << c.n_source << '\n';
  const auto& segments = p.flat().layout().segments();
  os << "segments " << segments.size() << '\n';
  for (const Segment& s : segments) {
    os << s.name << ' ' << s.offset << ' ' << s.length();
    for (std::size_t d : s.shape) os << ' ' << d;
    os << '\n';
  }
  os << "end\n";
  io::write_raw(os, p.flat().values());
  if (!os) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

TwoHeadParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is = io::open_in(path);
  const std::string what = "checkpoint";
  if (io::header_line(is, what) != "metafg-checkpoint 1")
    throw io::FormatError("'" + path.string() + "' is not a metafg checkpoint");
  ModelConfig c;
  c.input_dim = io::parse_size(io::expect_key(is, "input_dim", what), "input_dim");
  {
    std::istringstream hs(io::expect_key(is, "hidden", what));
    c.hidden.clear();
    std::string tok;
    while (hs >> tok) c.hidden.push_back(io::parse_size(tok, "hidden width"));
  }
  c.n_target = io::parse_size(io::expect_key(is, "n_target", what), "n_target");
  c.n_source = io::parse_size(io::expect_key(is, "n_source", what), "n_source");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("invalid checkpoint model: ") + e.what());
  }
  const std::size_t count = io::parse_size(io::expect_key(is, "segments", what), "segment count");
  std::vector<Segment> segments;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(io::header_line(is, what));
    Segment s;
    std::string offset, length;
    if (!(ls >> s.name >> offset >> length)) throw io::FormatError("malformed checkpoint segment line");
    s.offset = io::parse_size(offset, "segment offset");
    std::string tok;
    while (ls >> tok) s.shape.push_back(io::parse_size(tok, "segment dimension"));
    if (s.length() != io::parse_size(length, "segment length"))
      throw io::FormatError("segment '" + s.name + "' length disagrees with its shape");
    segments.push_back(std::move(s));
  }
  if (io::header_line(is, what) != "end") throw io::FormatError("checkpoint header is missing 'end'");

  std::shared_ptr<const Layout> layout;
  try {
    layout = std::make_shared<const Layout>(Layout::from_segments(std::move(segments)));
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("invalid checkpoint layout: ") + e.what());
  }
  if (!(*layout == *make_layout(c))) throw io::FormatError("checkpoint segments do not match its model config");
  std::vector<double> values(layout->size());
  io::read_raw(is, std::span<double>(values), "checkpoint values");
  if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("trailing bytes after checkpoint values");
  return TwoHeadParams(std::move(c), ParamVector(std::move(layout), std::move(values)));
}

}  // namespace metafg
