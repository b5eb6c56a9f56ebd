#include "metafg/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <future>
#include <sstream>

#include "metafg/io.hpp"

namespace metafg {

ExperimentConfig::ExperimentConfig() {
  warmup.lr = 0.05;
  warmup.epochs = 10;
  main.lr = 0.05;
  main.meta_lr = 0.05;
  main.epochs = 10;
  finetune.lr = 0.01;
  finetune.epochs = 50;
}

ModelConfig ExperimentConfig::model() const {
  ModelConfig m;
  m.input_dim = task.input_dim;
  m.hidden = hidden;
  m.n_target = task.n_target;
  m.n_source = task.n_source;
  return m;
}

void ExperimentConfig::validate() const {
  task.validate();
  model().validate();
  warmup.validate();
  main.validate();
  finetune.validate();
  SelectionConfig{keep_ratio}.validate();
  if (methods.empty()) throw std::invalid_argument("experiment needs at least one method");
  if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  if (threads == 0) throw std::invalid_argument("threads must be at least 1");
}

namespace {

void apply_train_key(TrainConfig& t, const std::string& field, const std::string& value, const std::string& key) {
  if (field == "lr") t.lr = parse_double(value, key);
  else if (field == "meta_lr") t.meta_lr = parse_double(value, key);
  else if (field == "decay_every") t.decay_every = parse_count(value, key);
  else if (field == "momentum") t.momentum = parse_double(value, key);
  else if (field == "weight_decay") t.weight_decay = parse_double(value, key);
  else if (field == "reg_weight") t.reg_weight = parse_double(value, key);
  else if (field == "batch_inner") t.batch_inner = parse_count(value, key);
  else if (field == "batch_outer") t.batch_outer = parse_count(value, key);
  else if (field == "batch_source") t.batch_source = parse_count(value, key);
  else if (field == "batch") t.batch_inner = t.batch_outer = t.batch_source = parse_count(value, key);
  else if (field == "epochs") t.epochs = parse_count(value, key);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

void apply_task_key(TaskSpec& t, const std::string& field, const std::string& value, const std::string& key) {
  if (field == "input_dim") t.input_dim = parse_count(value, key);
  else if (field == "subspace_dim") t.subspace_dim = parse_count(value, key);
  else if (field == "n_target") t.n_target = parse_count(value, key);
  else if (field == "shots") t.shots = parse_count(value, key);
  else if (field == "n_source") t.n_source = parse_count(value, key);
  else if (field == "aux_per_class") t.aux_per_class = parse_count(value, key);
  else if (field == "related_fraction") t.related_fraction = parse_double(value, key);
  else if (field == "noise_fraction") t.noise_fraction = parse_double(value, key);
  else if (field == "cluster_spread") t.cluster_spread = parse_double(value, key);
  else if (field == "class_separation") t.class_separation = parse_double(value, key);
  else if (field == "centre_scale") t.centre_scale = parse_double(value, key);
  else if (field == "noise_scale") t.noise_scale = parse_double(value, key);
  else if (field == "feature_noise") t.feature_noise = parse_double(value, key);
  else if (field == "seed") t.seed = parse_count(value, key);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

SelectionMode parse_selection(const std::string& text) {
  if (text == "off") return SelectionMode::off;
  if (text == "on") return SelectionMode::on;
  if (text == "both") return SelectionMode::both;
  throw std::invalid_argument("config 'selection' must be off, on or both, got '" + text + "'");
}

}  // namespace

void apply_config(const KeyValueConfig& kv, ExperimentConfig& cfg) {
  for (const auto& [key, value] : kv.entries()) {
    const auto dot = key.find('.');
    const std::string group = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string field = dot == std::string::npos ? key : key.substr(dot + 1);
    if (group == "task") {
      apply_task_key(cfg.task, field, value, key);
    } else if (group == "warmup") {
      apply_train_key(cfg.warmup, field, value, key);
    } else if (group == "main") {
      apply_train_key(cfg.main, field, value, key);
    } else if (group == "finetune") {
      apply_train_key(cfg.finetune, field, value, key);
    } else if (key == "model.hidden") {
      cfg.hidden.clear();
      for (const std::string& w : split_list(value)) cfg.hidden.push_back(parse_count(w, key));
    } else if (key == "methods") {
      cfg.methods.clear();
      for (const std::string& m : split_list(value)) cfg.methods.push_back(parse_method(m));
    } else if (key == "selection") {
      cfg.selection = parse_selection(value);
    } else if (key == "keep_ratio") {
      cfg.keep_ratio = parse_double(value, key);
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const std::string& s : split_list(value)) cfg.seeds.push_back(parse_count(s, key));
    } else if (key == "out") {
      cfg.output_dir = value;
    } else if (key == "threads") {
      cfg.threads = parse_count(value, key);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  ExperimentConfig cfg;
  apply_config(KeyValueConfig::load(path), cfg);
  return cfg;
}

PhaseError::PhaseError(std::string phase, std::uint64_t seed, const std::string& what)
    : std::runtime_error("[" + phase + ", seed " + std::to_string(seed) + "] " + what),
      phase_(std::move(phase)),
      seed_(seed) {}

std::filesystem::path run_directory(const std::filesystem::path& out, Method method, bool selection,
                                    std::uint64_t seed) {
  return out / ("seed" + std::to_string(seed)) / (std::string(to_string(method)) + (selection ? "-select" : ""));
}

SeedPlan SeedPlan::from(std::uint64_t seed) {
  std::seed_seq seq{seed, std::uint64_t{0x6d657461}};
  std::uint32_t words[12];
  seq.generate(std::begin(words), std::end(words));
  auto word = [&](int i) { return (std::uint64_t{words[2 * i]} << 32) | words[2 * i + 1]; };
  return {word(0), word(1), word(2), word(3), word(4), word(5)};
}

namespace {

template <typename F>
auto in_phase(const char* phase, std::uint64_t seed, F&& body) {
  try {
    return body();
  } catch (const PhaseError&) {
    throw;
  } catch (const std::exception& e) {
    throw PhaseError(phase, seed, e.what());
  }
}

TrainConfig seeded(TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

struct RunArtifacts {
  const TrainReport* main = nullptr;
  const TrainReport* finetune = nullptr;
  const TwoHeadParams* model = nullptr;
};

void write_run(const std::filesystem::path& dir, const RunArtifacts& a) {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "model.ckpt", *a.model);
  write_report_csv(dir / "main.csv", *a.main);
  write_report_csv(dir / "finetune.csv", *a.finetune);
}

std::vector<ResultRow> run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const SeedPlan plan = SeedPlan::from(seed);
  const ModelConfig model = cfg.model();

  const SyntheticTask task = in_phase("generate", seed, [&] {
    TaskSpec spec = cfg.task;
    spec.seed = plan.task;
    return generate_task(spec);
  });

  const TrainResult warm = in_phase("warmup", seed, [&] {
    return warmup(TwoHeadParams::initialized(model, plan.init), task.auxiliary, seeded(cfg.warmup, plan.warmup));
  });

  const auto fine_tune_and_score = [&](const TwoHeadParams& from, const TrainReport& main_report, Method method,
                                       bool selection, double precision) {
    const TrainResult ft = in_phase("finetune", seed, [&] {
      TwoHeadParams start = from;
      start.reinit_target_head(plan.head_reinit);
      return finetune(start, task.target_train, seeded(cfg.finetune, plan.finetune), &task.target_test);
    });
    return in_phase("evaluate", seed, [&] {
      ResultRow row;
      row.method = method;
      row.selection = selection;
      row.seed = seed;
      row.test_accuracy = evaluate(ft.params, task.target_test);
      row.finetune_loss = loss_target(ft.params, task.target_train.all());
      if (!main_report.iterations.empty()) {
        row.main_meta_loss = main_report.iterations.back().meta_loss;
        row.main_reg_loss = main_report.iterations.back().reg_loss;
      }
      row.selection_precision = precision;
      write_run(run_directory(cfg.output_dir, method, selection, seed), {&main_report, &ft.report, &ft.params});
      return row;
    });
  };

  std::vector<ResultRow> rows;
  for (Method method : cfg.methods) {
    if (method == Method::finetune) {
      rows.push_back(fine_tune_and_score(warm.params, TrainReport{}, method, false, -1.0));
      continue;
    }
    const TrainResult main = in_phase("train", seed, [&] {
      return train_loop(method, warm.params, task.target_train, task.auxiliary, seeded(cfg.main, plan.main));
    });
    if (cfg.selection != SelectionMode::on)
      rows.push_back(fine_tune_and_score(main.params, main.report, method, false, -1.0));
    if (cfg.selection == SelectionMode::off) continue;

    const auto dir = run_directory(cfg.output_dir, method, true, seed);
    const auto [subset, precision] = in_phase("select", seed, [&] {
      const std::vector<ScoredSample> scores = score_dataset(main.params, task.auxiliary);
      const std::vector<std::size_t> selected = rank_and_select(scores, SelectionConfig{cfg.keep_ratio});
      write_scores_csv(dir / "scores.csv", scores, selected);
      io::write_index_list(dir / "selected.idx", selected);
      return std::make_pair(subset_by_indices(task.auxiliary, selected),
                            selection_precision(selected, task.auxiliary.flags()));
    });
    const TrainResult retrained = in_phase("retrain", seed, [&] {
      return train_loop(method, main.params, task.target_train, subset, seeded(cfg.main, plan.main));
    });
    rows.push_back(fine_tune_and_score(retrained.params, retrained.report, method, true, precision));
  }
  return rows;
}

}  // namespace

ResultTable run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  std::vector<std::vector<ResultRow>> per_seed(cfg.seeds.size());
  if (cfg.threads <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) per_seed[i] = run_seed(cfg, cfg.seeds[i]);
  } else {
    for (std::size_t start = 0; start < cfg.seeds.size(); start += cfg.threads) {
      const std::size_t stop = std::min(cfg.seeds.size(), start + cfg.threads);
      std::vector<std::future<std::vector<ResultRow>>> workers;
      for (std::size_t i = start; i < stop; ++i)
        workers.push_back(std::async(std::launch::async, run_seed, std::cref(cfg), cfg.seeds[i]));
      for (std::size_t i = start; i < stop; ++i) per_seed[i] = workers[i - start].get();
    }
  }
  ResultTable table;
  for (auto& rows : per_seed) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  emit_reports(cfg.output_dir, table);
  return table;
}

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_results_csv(const std::filesystem::path& path, const ResultTable& table) {
  std::ofstream os = io::open_out(path);
  os << "method,selection,seed,test_accuracy,finetune_loss,main_meta_loss,main_reg_loss,selection_precision\n";
  for (const ResultRow& r : table.rows)
    os << to_string(r.method) << ',' << (r.selection ? 1 : 0) << ',' << r.seed << ',' << num(r.test_accuracy) << ','
       << num(r.finetune_loss) << ',' << num(r.main_meta_loss) << ',' << num(r.main_reg_loss) << ','
       << num(r.selection_precision) << '\n';
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

ResultTable read_results_csv(const std::filesystem::path& path) {
  std::ifstream is = io::open_in(path);
  std::string line;
  if (!std::getline(is, line) ||
      line != "method,selection,seed,test_accuracy,finetune_loss,main_meta_loss,main_reg_loss,selection_precision")
    throw io::FormatError("'" + path.string() + "' lacks the result header row");
  ResultTable table;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw io::FormatError("result row has " + std::to_string(cells.size()) + " cells");
    ResultRow r;
    r.method = parse_method(cells[0]);
    r.selection = parse_bool(cells[1], "selection");
    r.seed = parse_count(cells[2], "seed");
    r.test_accuracy = parse_double(cells[3], "test_accuracy");
    r.finetune_loss = parse_double(cells[4], "finetune_loss");
    r.main_meta_loss = parse_double(cells[5], "main_meta_loss");
    r.main_reg_loss = parse_double(cells[6], "main_reg_loss");
    r.selection_precision = parse_double(cells[7], "selection_precision");
    table.rows.push_back(r);
  }
  return table;
}

std::vector<SummaryRow> summarize(const ResultTable& table) {
  std::vector<SummaryRow> out;
  for (const ResultRow& r : table.rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const SummaryRow& s) { return s.method == r.method && s.selection == r.selection; });
    if (it == out.end()) {
      out.push_back({r.method, r.selection, 0, 0.0, 0.0, r.selection ? 0.0 : -1.0});
      it = out.end() - 1;
    }
    ++it->runs;
    it->mean_accuracy += r.test_accuracy;
    it->mean_finetune_loss += r.finetune_loss;
    if (r.selection) it->mean_selection_precision += r.selection_precision;
  }
  for (SummaryRow& s : out) {
    const double n = static_cast<double>(s.runs);
    s.mean_accuracy /= n;
    s.mean_finetune_loss /= n;
    if (s.selection) s.mean_selection_precision /= n;
  }
  return out;
}

void emit_reports(const std::filesystem::path& out, const ResultTable& table) {
  if (table.rows.empty()) throw std::invalid_argument("no result rows to report");
  write_results_csv(out / "results.csv", table);
  std::ofstream os = io::open_out(out / "summary.csv");
  os << "method,selection,runs,mean_test_accuracy,mean_finetune_loss,mean_selection_precision\n";
  for (const SummaryRow& s : summarize(table))
    os << to_string(s.method) << ',' << (s.selection ? 1 : 0) << ',' << s.runs << ',' << num(s.mean_accuracy) << ','
       << num(s.mean_finetune_loss) << ',' << num(s.mean_selection_precision) << '\n';
  if (!os) throw std::runtime_error("failed writing summary");
}

}  // namespace metafg
