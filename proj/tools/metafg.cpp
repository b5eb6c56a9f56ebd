// Command line front end: data generation, training phases, selection,
// evaluation and the full multi-seed report.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "metafg/harness.hpp"
#include "metafg/io.hpp"

namespace fs = std::filesystem;
using namespace metafg;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 1;
  std::string method = "metafgnet";
  std::optional<double> ratio;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string init;
  std::string subset;
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 0;
};

ExperimentConfig experiment(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig() : load_experiment_config(o.config);
  if (o.ratio) cfg.keep_ratio = *o.ratio;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.threads != 0) cfg.threads = o.threads;
  cfg.validate();
  return cfg;
}

struct TaskFiles {
  LabeledDataset target_train, target_test, auxiliary;
};

TaskFiles load_task(const fs::path& dir) {
  return {load_dataset(dir / "target_train.ds"), load_dataset(dir / "target_test.ds"), load_dataset(dir / "auxiliary.ds")};
}

TrainConfig seeded(TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

int cmd_generate(const Options& o) {
  ExperimentConfig cfg = experiment(o);
  TaskSpec spec = cfg.task;
  spec.seed = SeedPlan::from(o.seed).task;
  const SyntheticTask task = generate_task(spec);
  const fs::path dir = o.out.empty() ? fs::path("data") : fs::path(o.out);
  save_dataset(dir / "target_train.ds", task.target_train);
  save_dataset(dir / "target_test.ds", task.target_test);
  save_dataset(dir / "auxiliary.ds", task.auxiliary);
  std::printf("wrote %zu target train, %zu target test, %zu auxiliary samples to %s\n", task.target_train.size(),
              task.target_test.size(), task.auxiliary.size(), dir.c_str());
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = experiment(o);
  const SeedPlan plan = SeedPlan::from(o.seed);
  const TaskFiles task = load_task(o.data);
  const Method method = parse_method(o.method);
  TwoHeadParams start = o.init.empty() ? TwoHeadParams::initialized(cfg.model(), plan.init) : load_checkpoint(o.init);
  if (o.init.empty()) start = warmup(start, task.auxiliary, seeded(cfg.warmup, plan.warmup)).params;
  LabeledDataset source = task.auxiliary;
  if (!o.subset.empty()) source = subset_by_indices(task.auxiliary, io::read_index_list(o.subset));
  TrainResult result{start, {}};
  if (method != Method::finetune)
    result = train_loop(method, start, task.target_train, source, seeded(cfg.main, plan.main));
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  save_checkpoint(dir / "model.ckpt", result.params);
  write_report_csv(dir / "main.csv", result.report);
  if (!result.report.iterations.empty()) {
    const IterationRecord& last = result.report.iterations.back();
    std::printf("%s: %zu iterations, final meta loss %.6f, auxiliary loss %.6f\n", to_string(method),
                result.report.iterations.size(), last.meta_loss, last.reg_loss);
  }
  return 0;
}

int cmd_select(const Options& o) {
  const SelectionConfig sel{o.ratio.value_or(0.5)};
  const LabeledDataset aux = load_dataset(fs::path(o.data) / "auxiliary.ds");
  const TwoHeadParams p = load_checkpoint(o.checkpoint);
  const std::vector<ScoredSample> scores = score_dataset(p, aux);
  const std::vector<std::size_t> selected = rank_and_select(scores, sel);
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  write_scores_csv(dir / "scores.csv", scores, selected);
  io::write_index_list(dir / "selected.idx", selected);
  std::printf("selected %zu of %zu auxiliary samples", selected.size(), aux.size());
  if (!scores.empty() && scores.front().flag) std::printf(", precision %.4f", selection_precision(selected, aux.flags()));
  std::printf("\n");
  return 0;
}

int cmd_finetune(const Options& o) {
  const ExperimentConfig cfg = experiment(o);
  const SeedPlan plan = SeedPlan::from(o.seed);
  const TaskFiles task = load_task(o.data);
  TwoHeadParams start = load_checkpoint(o.checkpoint);
  start.reinit_target_head(plan.head_reinit);
  const TrainResult result = finetune(start, task.target_train, seeded(cfg.finetune, plan.finetune), &task.target_test);
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  save_checkpoint(dir / "model.ckpt", result.params);
  write_report_csv(dir / "finetune.csv", result.report);
  std::printf("test accuracy %.4f, target training loss %.6f\n", evaluate(result.params, task.target_test),
              loss_target(result.params, task.target_train.all()));
  return 0;
}

int cmd_evaluate(const Options& o) {
  const LabeledDataset test = load_dataset(fs::path(o.data) / "target_test.ds");
  const TwoHeadParams p = load_checkpoint(o.checkpoint);
  std::printf("test accuracy %.4f, test loss %.6f\n", evaluate(p, test), loss_target(p, test.all()));
  return 0;
}

int cmd_report(const Options& o) {
  const ExperimentConfig cfg = experiment(o);
  const ResultTable table = run_experiment(cfg);
  std::printf("%-10s %-9s %5s %10s %14s %10s\n", "method", "selection", "runs", "accuracy", "finetune_loss",
              "precision");
  for (const SummaryRow& s : summarize(table)) {
    std::printf("%-10s %-9s %5zu %10.4f %14.6f ", to_string(s.method), s.selection ? "on" : "off", s.runs,
                s.mean_accuracy, s.mean_finetune_loss);
    if (s.selection) std::printf("%10.4f\n", s.mean_selection_precision);
    else std::printf("%10s\n", "-");
  }
  std::printf("results written to %s\n", cfg.output_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned fine-tuning with auxiliary-sample selection on synthetic tasks"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "key = value settings file")->check(CLI::ExistingFile); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "run seed"); };
  auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "output directory"); };
  auto add_data = [&](CLI::App* c) {
    c->add_option("--data", o.data, "directory written by 'generate'")->required()->check(CLI::ExistingDirectory);
  };

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic target/auxiliary task");
  add_config(gen), add_seed(gen), add_out(gen);

  CLI::App* train = app.add_subcommand("train", "warm-up then main phase (finetune, joint or metafgnet)");
  add_config(train), add_seed(train), add_out(train), add_data(train);
  train->add_option("--method", o.method, "finetune, joint or metafgnet");
  train->add_option("--init", o.init, "start from this checkpoint instead of a fresh warm-up")->check(CLI::ExistingFile);
  train->add_option("--subset", o.subset, "index list restricting the auxiliary set")->check(CLI::ExistingFile);

  CLI::App* select = app.add_subcommand("select", "score the auxiliary set and keep the top fraction");
  add_out(select), add_data(select);
  select->add_option("--checkpoint", o.checkpoint, "trained model")->required()->check(CLI::ExistingFile);
  select->add_option("--select-ratio", o.ratio, "fraction of samples kept")->check(CLI::Range(0.0, 1.0));

  CLI::App* ft = app.add_subcommand("finetune", "re-initialise the target head and fine-tune on the target set");
  add_config(ft), add_seed(ft), add_out(ft), add_data(ft);
  ft->add_option("--checkpoint", o.checkpoint, "starting model")->required()->check(CLI::ExistingFile);

  CLI::App* ev = app.add_subcommand("evaluate", "target test accuracy of a checkpoint");
  add_data(ev);
  ev->add_option("--checkpoint", o.checkpoint, "model")->required()->check(CLI::ExistingFile);

  CLI::App* rep = app.add_subcommand("report", "run every method and seed, write results and summary");
  add_config(rep), add_out(rep);
  rep->add_option("--seed", o.seeds, "seeds (overrides the config)");
  rep->add_option("--select-ratio", o.ratio, "fraction of auxiliary samples kept")->check(CLI::Range(0.0, 1.0));
  rep->add_option("--threads", o.threads, "seeds run concurrently");

  CLI11_PARSE(app, argc, argv);

  const CLI::App* cmd = app.get_subcommands().front();
  try {
    if (cmd == gen) return cmd_generate(o);
    if (cmd == train) return cmd_train(o);
    if (cmd == select) return cmd_select(o);
    if (cmd == ft) return cmd_finetune(o);
    if (cmd == ev) return cmd_evaluate(o);
    return cmd_report(o);
  } catch (const PhaseError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: [" << cmd->get_name() << "] " << e.what() << '\n';
  }
  return 1;
}
