#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"
#include "pulse/errors.hpp"
#include "pulse/graph.hpp"

namespace pulse::cli {

namespace {

struct DatasetFlags {
  std::string family = "lorenz";
  sde::DatasetConfig cfg;

  void add(CLI::App* app, bool with_sigma) {
    app->add_option("--family", family, "lorenz, thomas or hindmarsh_rose")->capture_default_str();
    if (with_sigma) app->add_option("--sigma", cfg.sigma, "noise level relative to signal RMS")->capture_default_str();
    app->add_option("--classes", cfg.n_classes, "parameter values drawn from the grid")->capture_default_str();
    app->add_option("--window", cfg.window, "window length W")->capture_default_str();
    app->add_option("--trials", cfg.trials_per_class, "trials per class")->capture_default_str();
    app->add_option("--steps", cfg.steps_per_trial, "integration steps per trial, burn-in included")
        ->capture_default_str();
    app->add_option("--dt", cfg.dt, "integration step")->capture_default_str();
  }
  sde::DatasetConfig resolve() {
    cfg.family = sde::parse_family(family);
    return cfg;
  }
};

void add_model_flags(CLI::App* app, model::PulseConfig& m) {
  app->add_option("--enc-width", m.enc_width, "encoder width D")->capture_default_str();
  app->add_option("--enc-depth", m.enc_depth, "residual blocks in the system encoder")->capture_default_str();
  app->add_option("--enc-kernel", m.enc_kernel, "system encoder kernel size")->capture_default_str();
  app->add_option("--init-kernel", m.init_kernel, "initial-condition encoder kernel size")->capture_default_str();
  app->add_option("--init-dilation", m.init_dilation, "initial-condition encoder dilation")->capture_default_str();
  app->add_option("--init-hidden", m.init_hidden, "initial-condition encoder hidden channels")->capture_default_str();
  app->add_option("--init-latent", m.init_latent, "initial-condition size")->capture_default_str();
  app->add_option("--dec-layers", m.dec_layers, "GRU layers")->capture_default_str();
  app->add_option("--dec-hidden", m.dec_hidden, "GRU hidden size")->capture_default_str();
  app->add_option("--tv-hidden", m.tv_hidden, "time-varying head hidden channels")->capture_default_str();
  app->add_option("--tv-segments", m.tv_segments, "time-varying pooling segments")->capture_default_str();
  app->add_option("--pseudo-pairs", m.pseudo_pairs, "t0 draws per batch (1 to 4)")->capture_default_str();
}

void add_train_flags(CLI::App* app, train::TrainConfig& t) {
  app->add_option("--epochs", t.epochs)->capture_default_str();
  app->add_option("--lr", t.peak_lr, "peak learning rate")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay)->capture_default_str();
  app->add_option("--batch-size", t.batch_size)->capture_default_str();
  app->add_option("--mask-min", t.mask_min, "negative oracle mask extent, fraction of W")->capture_default_str();
  app->add_option("--mask-max", t.mask_max)->capture_default_str();
  app->add_option("--max-batches", t.max_batches_per_epoch, "batches per epoch, 0 for all")->capture_default_str();
}

void add_eval_flags(CLI::App* app, EvalRequest& e, std::string& coverage) {
  app->add_option("--semi", e.semi, "label fraction for the semi-supervised probe (repeatable)");
  app->add_option("--subsets", e.subsets, "label subsets per fraction")->capture_default_str();
  app->add_option("--coverage", coverage, "laplace or resample")
      ->check(CLI::IsMember({"laplace", "resample"}))
      ->capture_default_str();
  app->add_option("--C", e.probe.C, "inverse L2 strength of the probe")->capture_default_str();
  app->add_option("--max-iter", e.probe.max_iterations, "probe iteration cap")->capture_default_str();
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"pulse: synthetic SDE datasets, PULSE pretraining and frozen-embedding evaluation"};
  app.set_config("--config", "", "TOML config file; one [section] per command, flags override it");
  app.require_subcommand(1);
  int code = kExitOk;

  // generate
  DatasetFlags gen;
  bool gen_force = false;
  auto* g = app.add_subcommand("generate", "integrate a dataset and write it under the runs root");
  gen.add(g, true);
  g->add_option("--seed", gen.cfg.seed, "root seed")->capture_default_str();
  g->add_flag("--force", gen_force, "overwrite an existing dataset");
  g->callback([&] {
    const auto r = generate(gen.resolve(), runs_root(), gen_force);
    std::cerr << r.summary.dump(2) << "\n";
    std::cout << r.dataset.string() << "\n";
  });

  // train
  TrainRequest tr;
  std::string variant = "pulse";
  auto* t = app.add_subcommand("train", "pretrain a variant on a dataset");
  t->add_option("--dataset", tr.dataset, "dataset file written by generate")->required();
  t->add_option("--variant", variant,
                "pulse, oracle-positive, oracle-negative, abl-no-tv-params, abl-shared-encoders, abl-fixed-t0, "
                "abl-random-pairs")
      ->capture_default_str();
  t->add_option("--seed", tr.train.seed, "root seed")->capture_default_str();
  add_model_flags(t, tr.model);
  add_train_flags(t, tr.train);
  t->add_flag("--resume", tr.resume, "continue from the last checkpoint");
  t->add_option("--stop-after", tr.stop_after_epochs, "stop once this many epochs are done (resume later)");
  t->add_flag("--force", tr.force, "overwrite an existing run");
  bool verbose = false;
  t->add_flag("--verbose", verbose, "print one line per epoch");
  t->callback([&] {
    tr.train.variant = train::parse_variant(variant);
    tr.quiet = !verbose;
    const auto r = run_train(tr, runs_root());
    std::cerr << r.summary.dump(2) << "\n";
    std::cout << r.dir.string() << "\n";
  });

  // eval
  EvalRequest ev;
  std::string coverage = "laplace";
  std::string eval_dataset;
  auto* e = app.add_subcommand("eval", "probe the frozen embeddings of a training run");
  e->add_option("--run", ev.run, "training run directory")->required();
  e->add_option("--dataset", eval_dataset, "override the dataset path recorded by the run");
  add_eval_flags(e, ev, coverage);
  e->add_flag("--random-init", ev.random_init, "evaluate the untrained encoder instead");
  e->add_flag("--force", ev.force, "overwrite existing reports");
  e->callback([&] {
    if (!eval_dataset.empty()) ev.dataset = eval_dataset;
    ev.coverage = coverage == "laplace" ? eval::Coverage::Laplace : eval::Coverage::Resample;
    const auto r = run_eval(ev);
    std::cout << eval::format_table(eval::assemble_table(r.rows));
    std::cerr << "reports in " << r.dir.string() << "\n";
  });

  // verify-theorem
  int w_max = 5;
  std::string theorem_out;
  bool theorem_force = false;
  auto* v = app.add_subcommand("verify-theorem", "exhaustive check of the minimal shared set on SSM graphs");
  v->add_option("--w-max", w_max, "largest window length, 2 to 6")->capture_default_str();
  v->add_option("--out", theorem_out, "also write the JSON report here");
  v->add_flag("--force", theorem_force, "overwrite --out");
  v->callback([&] {
    const auto report = graph::verify_theorem1(w_max);
    std::cout << report.text();
    if (!theorem_out.empty()) {
      if (fs::exists(theorem_out) && !theorem_force)
        throw ConfigError(theorem_out + " already exists; pass --force to overwrite");
      write_json(theorem_out, nlohmann::json::parse(report.json()));
    }
    if (!report.passed()) code = kExitCheck;
  });

  // sweep
  SweepRequest sw;
  DatasetFlags sweep_data;
  std::string sweep_coverage = "laplace";
  bool sweep_verbose = false;
  sw.sigmas = {0.0};
  sw.seeds = {0};
  sw.variants = {"pulse"};
  auto* s = app.add_subcommand("sweep", "generate, train and evaluate a grid of sigmas, seeds and variants");
  sweep_data.add(s, false);
  s->add_option("--sigmas", sw.sigmas, "noise levels")->delimiter(',')->capture_default_str();
  s->add_option("--seeds", sw.seeds, "root seeds")->delimiter(',')->capture_default_str();
  s->add_option("--variants", sw.variants, "variants to train")->delimiter(',')->capture_default_str();
  s->add_option("--jobs", sw.jobs, "parallel processes")->capture_default_str();
  add_model_flags(s, sw.train.model);
  add_train_flags(s, sw.train.train);
  add_eval_flags(s, sw.eval, sweep_coverage);
  s->add_flag("--force", sw.train.force, "overwrite existing artifacts");
  s->add_flag("--verbose", sweep_verbose, "print one line per epoch");
  s->callback([&] {
    sw.dataset = sweep_data.resolve();
    sw.eval.force = sw.train.force;
    sw.train.quiet = !sweep_verbose;
    sw.eval.coverage = sweep_coverage == "laplace" ? eval::Coverage::Laplace : eval::Coverage::Resample;
    code = run_sweep(sw, runs_root());
  });

  // table
  std::vector<std::string> sources;
  std::string table_out;
  bool table_force = false;
  auto* tb = app.add_subcommand("table", "mean ± std per variant and setting from results.csv files");
  tb->add_option("sources", sources, "CSV files or directories to scan (default: runs root)");
  tb->add_option("--out", table_out, "also write the markdown table here");
  tb->add_flag("--force", table_force, "overwrite --out");
  tb->callback([&] {
    if (sources.empty()) sources.push_back(runs_root().string());
    std::vector<eval::ResultRow> rows;
    for (const auto& src : sources) {
      auto part = scan_results(src);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    if (rows.empty()) throw ConfigError("no results found");
    const std::string table = eval::format_table(eval::assemble_table(rows));
    std::cout << table;
    if (!table_out.empty()) {
      if (fs::exists(table_out) && !table_force)
        throw ConfigError(table_out + " already exists; pass --force to overwrite");
      std::ofstream(table_out) << table;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const ParameterError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return code;
}

}  // namespace pulse::cli
