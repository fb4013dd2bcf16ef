#include "commands.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pulse/errors.hpp"
#include "pulse/hash.hpp"

namespace pulse::cli {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

sde::WindowDataset load_dataset_checked(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("dataset not found: " + path.string());
  return sde::load_dataset(path);
}

nlohmann::json dataset_summary(const sde::WindowDataset& ds) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < ds.n_classes(); ++c)
    classes.push_back({{"label", c},
                       {sde::swept_parameter(ds.config.family), ds.class_params[c]},
                       {"sigma_tilde", ds.sigma_tilde[c]}});
  std::size_t redraws = 0;
  for (const auto& t : ds.trials) redraws += t.redraws;
  return {{"config_hash", ds.config_hash},
          {"config", nlohmann::json::parse(sde::dataset_config_json(ds.config))},
          {"family", sde::family_name(ds.config.family)},
          {"swept_parameter", sde::swept_parameter(ds.config.family)},
          {"n_classes", ds.n_classes()},
          {"classes", classes},
          {"windows",
           {{"train", ds.indices(sde::Split::Train).size()},
            {"val", ds.indices(sde::Split::Val).size()},
            {"test", ds.indices(sde::Split::Test).size()}}},
          {"trials", ds.trials.size()},
          {"redraws", redraws}};
}

std::string summary_text(const nlohmann::json& s) {
  std::ostringstream os;
  os << "dataset " << s["config_hash"].get<std::string>() << ": " << s["family"].get<std::string>() << ", sigma "
     << s["config"]["sigma"] << ", " << s["n_classes"] << " classes\n";
  const std::string p = s["swept_parameter"];
  for (const auto& c : s["classes"]) os << "  class " << c["label"] << ": " << p << " = " << c[p] << "\n";
  os << "windows: train " << s["windows"]["train"] << ", val " << s["windows"]["val"] << ", test "
     << s["windows"]["test"] << "\n";
  return os.str();
}

// Window geometry always follows the dataset.
model::PulseConfig fit_to_dataset(model::PulseConfig m, const sde::WindowDataset& ds) {
  m.window = ds.window();
  m.channels = ds.dims();
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

}  // namespace

fs::path runs_root() {
  const char* env = std::getenv("PULSE_RUNS_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path claim_dir(const fs::path& root, const std::string& hash, bool force) {
  const fs::path dir = root / hash;
  if (fs::exists(dir)) {
    if (!force) throw ConfigError(dir.string() + " already exists; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(path.string() + ": " + e.what());
  }
}

// ---- generate ------------------------------------------------------------------

GenerateResult generate(const sde::DatasetConfig& cfg, const fs::path& root, bool force) {
  cfg.validate();
  GenerateResult r;
  r.hash = sde::dataset_config_hash(cfg);
  r.dir = claim_dir(root, r.hash, force);
  const sde::WindowDataset ds = sde::build_dataset(cfg);
  r.dataset = r.dir / "dataset.pulseds";
  sde::save_dataset(ds, r.dataset);
  r.summary = dataset_summary(ds);
  write_json(r.dir / "summary.json", r.summary);
  write_text(r.dir / "summary.txt", summary_text(r.summary));
  return r;
}

// ---- train ---------------------------------------------------------------------

std::string train_hash(const sde::WindowDataset& data, const model::PulseConfig& m, const train::TrainConfig& t) {
  const nlohmann::json j{{"command", "train"}, {"dataset", data.config_hash}, {"model", m.to_json()},
                         {"train", t.to_json()}};
  return content_hash(j.dump());
}

TrainResult run_train(const TrainRequest& input, const fs::path& root) {
  const sde::WindowDataset ds = load_dataset_checked(input.dataset);
  TrainRequest req = input;
  req.model = fit_to_dataset(req.model, ds);
  req.model.validate();
  req.train.validate();
  train::TrainConfig tcfg = req.train;
  TrainResult r;
  r.hash = train_hash(ds, req.model, tcfg);
  tcfg.config_hash = r.hash;
  if (req.resume) {
    r.dir = root / r.hash;
    if (!fs::exists(r.dir / "last" / "manifest.json"))
      throw ConfigError("nothing to resume in " + r.dir.string());
    const auto recorded = read_json(r.dir / "config.json");
    if (recorded.value("config_hash", "") != r.hash)
      throw ConfigError("refusing to resume: " + r.dir.string() + " holds a different configuration");
  } else {
    r.dir = claim_dir(root, r.hash, req.force);
    write_json(r.dir / "config.json", {{"config_hash", r.hash},
                                       {"dataset", fs::absolute(req.dataset).lexically_normal().string()},
                                       {"dataset_hash", ds.config_hash},
                                       {"model", req.model.to_json()},
                                       {"train", tcfg.to_json()}});
  }
  train::TrainOptions opts;
  opts.output_dir = r.dir;
  opts.resume = req.resume;
  opts.quiet = req.quiet;
  opts.stop_after_epochs = req.stop_after_epochs;
  const train::TrainState st = train::train(ds, req.model, tcfg, opts);
  r.summary = {{"config_hash", r.hash},
               {"variant", train::variant_name(tcfg.variant)},
               {"epochs_done", st.epochs_done},
               {"epochs", tcfg.epochs},
               {"step", st.step},
               {"best_epoch", st.best_epoch},
               {"best_val", st.best_val},
               {"decoder_input_dim", st.model.decoder_input_dim()},
               {"parameter_count", st.model.parameter_count()}};
  write_json(r.dir / "summary.json", r.summary);
  return r;
}

// ---- eval ----------------------------------------------------------------------

EvalResult run_eval(const EvalRequest& req) {
  const nlohmann::json run = read_json(req.run / "config.json");
  const fs::path data_path = req.dataset ? *req.dataset : fs::path(run.at("dataset").get<std::string>());
  const sde::WindowDataset ds = load_dataset_checked(data_path);
  if (ds.config_hash != run.at("dataset_hash").get<std::string>())
    throw ConfigError("dataset " + data_path.string() + " is not the one this run was trained on");
  const auto tcfg = train::TrainConfig::from_json(run.at("train"));
  const auto mcfg = model::PulseConfig::from_json(run.at("model"));
  for (double f : req.semi)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");

  const nlohmann::json eval_cfg{{"run", run.at("config_hash")},
                                {"semi", req.semi},
                                {"subsets", req.subsets},
                                {"coverage", req.coverage == eval::Coverage::Laplace ? "laplace" : "resample"},
                                {"C", req.probe.C},
                                {"tolerance", req.probe.tolerance},
                                {"max_iterations", req.probe.max_iterations},
                                {"random_init", req.random_init}};
  const std::string hash = content_hash(eval_cfg.dump());

  EvalResult r;
  r.dir = req.run / (req.random_init ? "eval-random-init" : "eval");
  if (fs::exists(r.dir)) {
    if (!req.force) throw ConfigError(r.dir.string() + " already exists; pass --force to overwrite");
    fs::remove_all(r.dir);
  }

  model::PulseModel net = [&] {
    if (!req.random_init) return model::load_model(req.run / "best");
    // Same initialization the trainer starts from.
    model::PulseModel m(train::variant_model_config(mcfg, tcfg.variant), Rng(tcfg.seed).split("model").key());
    m.fit_normalization(ds.gather(ds.indices(sde::Split::Train)));
    return m;
  }();
  const eval::EmbeddingSet emb = eval::embed(net, ds);
  const std::string variant = req.random_init ? "random-init" : train::variant_name(tcfg.variant);
  const std::string setting = "sigma=" + num(ds.config.sigma);

  r.probe = eval::linear_probe(emb, req.probe);
  r.probe.seed = tcfg.seed;
  r.probe.config_hash = hash;
  r.rows.push_back({variant, setting, tcfg.seed, 0, r.probe.accuracy, r.probe.auroc, r.probe.auprc, hash});
  for (double f : req.semi) {
    eval::SemiReport s = eval::semi_supervised(emb, f, req.subsets, tcfg.seed, req.coverage, req.probe);
    for (auto& sub : s.subsets) {
      sub.metrics.config_hash = hash;
      r.rows.push_back({variant, setting + " semi=" + num(f), tcfg.seed, sub.subset, sub.metrics.accuracy,
                        sub.metrics.auroc, sub.metrics.auprc, hash});
    }
    r.semi.push_back(std::move(s));
  }

  fs::create_directories(r.dir);
  nlohmann::json probe_json = r.probe.to_json();
  probe_json["variant"] = variant;
  probe_json["setting"] = setting;
  probe_json["eval_config"] = eval_cfg;
  write_json(r.dir / "probe.json", probe_json);
  for (const auto& s : r.semi) {
    nlohmann::json j = s.to_json();
    j["variant"] = variant;
    j["config_hash"] = hash;
    j["eval_config"] = eval_cfg;
    write_json(r.dir / ("semi_" + num(s.fraction) + ".json"), j);
  }
  eval::append_csv(r.dir / "results.csv", r.rows);
  return r;
}

std::vector<eval::ResultRow> scan_results(const fs::path& root) {
  if (!fs::exists(root)) throw ConfigError("no such path: " + root.string());
  if (fs::is_regular_file(root)) return eval::read_csv(root);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "results.csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<eval::ResultRow> rows;
  for (const auto& f : files) {
    auto part = eval::read_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

// ---- sweep ---------------------------------------------------------------------

namespace {

struct SweepJob {
  fs::path dataset;
  std::uint64_t seed;
  train::Variant variant;
};

int run_job(const SweepJob& job, const TrainRequest& base, const EvalRequest& eval_base, const fs::path& root) {
  TrainRequest req = base;
  req.dataset = job.dataset;
  req.train.seed = job.seed;
  req.train.variant = job.variant;
  const TrainResult t = run_train(req, root);
  EvalRequest e = eval_base;
  e.run = t.dir;
  run_eval(e);
  return 0;
}

}  // namespace

int run_sweep(const SweepRequest& req, const fs::path& root) {
  if (req.sigmas.empty() || req.seeds.empty() || req.variants.empty())
    throw ConfigError("sweep needs at least one sigma, seed and variant");
  std::vector<train::Variant> variants;
  for (const auto& v : req.variants) variants.push_back(train::parse_variant(v));

  std::vector<SweepJob> jobs;
  for (double sigma : req.sigmas)
    for (auto seed : req.seeds) {
      sde::DatasetConfig d = req.dataset;
      d.sigma = sigma;
      d.seed = seed;
      const GenerateResult g = generate(d, root, req.train.force);
      std::cerr << "dataset " << g.hash << " (sigma " << sigma << ", seed " << seed << ")\n";
      for (auto v : variants) jobs.push_back({g.dataset, seed, v});
    }

  // One child process per run, at most `jobs` at a time; every run owns its directory.
  std::size_t running = 0, failed = 0, next = 0;
  auto reap = [&] {
    int status = 0;
    if (::wait(&status) > 0) {
      --running;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failed;
    }
  };
  while (next < jobs.size()) {
    if (running >= std::max<std::size_t>(1, req.jobs)) reap();
    std::cout.flush();
    std::cerr.flush();
    const pid_t pid = ::fork();
    if (pid < 0) throw Error("fork failed");
    if (pid == 0) {
      int code = kExitRuntime;
      try {
        code = run_job(jobs[next], req.train, req.eval, root);
      } catch (const std::exception& e) {
        std::cerr << "sweep job failed: " << e.what() << "\n";
      }
      std::cerr.flush();
      ::_exit(code);
    }
    ++running;
    ++next;
  }
  while (running > 0) reap();

  nlohmann::json sweep{{"sigmas", req.sigmas}, {"seeds", req.seeds}, {"variants", req.variants}};
  const std::string hash = content_hash(sweep.dump());
  std::vector<eval::ResultRow> rows;
  for (const auto& job : jobs) {
    const auto ds = sde::load_dataset(job.dataset);
    train::TrainConfig t = req.train.train;
    t.seed = job.seed;
    t.variant = job.variant;
    const fs::path csv = root / train_hash(ds, fit_to_dataset(req.train.model, ds), t) / "eval" / "results.csv";
    if (fs::exists(csv)) {
      auto part = eval::read_csv(csv);
      rows.insert(rows.end(), part.begin(), part.end());
    }
  }
  const std::string table = eval::format_table(eval::assemble_table(rows));
  const fs::path dir = root / ("sweep-" + hash);
  fs::create_directories(dir);
  sweep["config_hash"] = hash;
  sweep["failed_runs"] = failed;
  write_json(dir / "sweep.json", sweep);
  write_text(dir / "table.md", table);
  std::cout << table;
  if (failed) {
    std::cerr << failed << " of " << jobs.size() << " runs failed\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace pulse::cli
