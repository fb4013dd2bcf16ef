#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include "pulse/errors.hpp"
#include "pulse/train.hpp"

namespace pulse::train {

namespace fs = std::filesystem;
using model::PulseConfig;
using model::PulseModel;
using sde::Split;
using sde::WindowDataset;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Pulse:
      return "pulse";
    case Variant::OraclePositive:
      return "oracle-positive";
    case Variant::OracleNegative:
      return "oracle-negative";
    case Variant::NoTvParams:
      return "abl-no-tv-params";
    case Variant::SharedEncoders:
      return "abl-shared-encoders";
    case Variant::FixedT0:
      return "abl-fixed-t0";
    case Variant::RandomPairs:
      return "abl-random-pairs";
  }
  throw ParameterError("unknown variant");
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::Pulse, Variant::OraclePositive, Variant::OracleNegative, Variant::NoTvParams,
                    Variant::SharedEncoders, Variant::FixedT0, Variant::RandomPairs})
    if (variant_name(v) == name) return v;
  throw ParameterError("unknown variant '" + name +
                       "' (expected pulse, oracle-positive, oracle-negative, abl-no-tv-params, abl-shared-encoders, "
                       "abl-fixed-t0, abl-random-pairs)");
}

bool is_oracle(Variant v) { return v == Variant::OraclePositive || v == Variant::OracleNegative; }

bool is_ablation(Variant v) {
  return v == Variant::NoTvParams || v == Variant::SharedEncoders || v == Variant::FixedT0 ||
         v == Variant::RandomPairs;
}

PulseConfig variant_model_config(PulseConfig cfg, Variant v) {
  if (v == Variant::NoTvParams) cfg.use_tv_params = false;
  if (v == Variant::SharedEncoders) cfg.shared_encoders = true;
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(peak_lr > 0.0)) throw ConfigError("peak learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(mask_min > 0.0 && mask_min <= mask_max && mask_max < 1.0))
    throw ConfigError("mask extent must satisfy 0 < min <= max < 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"peak_lr", peak_lr},   {"weight_decay", weight_decay},
          {"batch_size", batch_size}, {"seed", seed},         {"variant", variant_name(variant)},
          {"mask_min", mask_min},     {"mask_max", mask_max}, {"max_batches_per_epoch", max_batches_per_epoch},
          {"grad_clip", kGradClip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", c.epochs);
  get("peak_lr", c.peak_lr);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("seed", c.seed);
  get("mask_min", c.mask_min);
  get("mask_max", c.mask_max);
  get("max_batches_per_epoch", c.max_batches_per_epoch);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  c.validate();
  return c;
}

nlohmann::json EpochRecord::to_json(bool with_wall_time) const {
  nlohmann::json j{{"epoch", epoch},
                   {"step", step},
                   {"lr", lr},
                   {"train_loss", train_loss},
                   {"val_loss", val_loss},
                   {"skipped_steps", skipped_steps},
                   {"improved", improved},
                   {"extra", extra}};
  if (with_wall_time) j["wall_seconds"] = wall_seconds;
  return j;
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch");
  r.step = j.at("step");
  r.lr = j.at("lr");
  r.train_loss = j.at("train_loss");
  r.val_loss = j.at("val_loss");
  r.skipped_steps = j.at("skipped_steps");
  r.improved = j.at("improved");
  r.extra = j.value("extra", nlohmann::json::object());
  r.wall_seconds = j.value("wall_seconds", 0.0);
  return r;
}

nlohmann::json TrainState::history_json() const {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& r : history) h.push_back(r.to_json(false));
  return h;
}

std::vector<std::size_t> draw_t0(Rng& rng, std::size_t window, std::size_t count, bool fixed) {
  if (fixed) return {1};
  const std::size_t hi = window / 2;
  if (hi < 1) throw ParameterError("window too short for t0 draws");
  std::vector<std::size_t> out(count);
  for (auto& t : out) t = 1 + rng.below(hi);
  return out;
}

std::vector<std::size_t> same_label_partners(const std::vector<std::size_t>& anchors, const std::vector<int>& labels,
                                             const std::vector<std::size_t>& pool, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (auto i : pool) by_label[labels.at(i)].push_back(i);
  std::vector<std::size_t> out;
  out.reserve(anchors.size());
  for (auto a : anchors) {
    const auto& cand = by_label[labels.at(a)];
    const bool self_in = std::find(cand.begin(), cand.end(), a) != cand.end();
    const std::size_t n = cand.size() - (self_in ? 1 : 0);
    if (n == 0)
      throw ProtocolError("pairing error: class " + std::to_string(labels.at(a)) + " has a single window");
    std::size_t r = rng.below(n);
    if (self_in) {
      const auto pos = static_cast<std::size_t>(std::find(cand.begin(), cand.end(), a) - cand.begin());
      if (r >= pos) ++r;
    }
    out.push_back(cand[r]);
  }
  return out;
}

Tensor temporal_mask(const Tensor& windows, double lo, double hi, Rng& rng, std::vector<MaskedRun>* runs) {
  const std::size_t B = windows.dim(0), W = windows.dim(1), M = windows.dim(2);
  const auto min_len = static_cast<std::size_t>(std::ceil(lo * static_cast<double>(W)));
  const auto max_len = static_cast<std::size_t>(std::floor(hi * static_cast<double>(W)));
  if (min_len < 1 || min_len > max_len || max_len >= W) throw ParameterError("mask extent leaves no valid run length");
  std::vector<double> out(windows.values());
  for (std::size_t b = 0; b < B; ++b) {
    const auto len = static_cast<std::size_t>(rng.integer(static_cast<long long>(min_len), static_cast<long long>(max_len)));
    const auto start = static_cast<std::size_t>(rng.integer(0, static_cast<long long>(W - len)));
    std::fill(out.begin() + (b * W + start) * M, out.begin() + (b * W + start + len) * M, 0.0);
    if (runs) runs->push_back({start, len});
  }
  return Tensor::from(windows.shape(), std::move(out));
}

namespace {

struct Diagnostics {
  std::size_t pairs = 0;
  std::size_t cross_label = 0;
  std::vector<double> mask_fraction;  // mean masked fraction per batch

  nlohmann::json to_json(Variant v) const {
    nlohmann::json j = nlohmann::json::object();
    if (v == Variant::RandomPairs || is_oracle(v)) {
      j["pairs"] = pairs;
      j["cross_label_pairs"] = cross_label;
      j["cross_label_fraction"] = pairs ? static_cast<double>(cross_label) / static_cast<double>(pairs) : 0.0;
    }
    if (v == Variant::OracleNegative) {
      j["mask_fraction_per_batch"] = mask_fraction;
      double s = 0.0;
      for (double f : mask_fraction) s += f;
      j["mask_fraction_mean"] = mask_fraction.empty() ? 0.0 : s / static_cast<double>(mask_fraction.size());
    }
    return j;
  }
};

Tensor objective(const PulseModel& m, const TrainConfig& cfg, const WindowDataset& ds,
                 const std::vector<std::size_t>& batch, const std::vector<std::size_t>& pool, Rng& rng,
                 Diagnostics& diag) {
  const Variant v = cfg.variant;
  if (v == Variant::Pulse || v == Variant::NoTvParams || v == Variant::SharedEncoders || v == Variant::FixedT0) {
    const auto draws = draw_t0(rng, m.config().window, m.config().pseudo_pairs, v == Variant::FixedT0);
    return m.loss_pulse(ds.gather(batch), draws);
  }
  std::vector<std::size_t> partners;
  if (v == Variant::RandomPairs) {
    for (std::size_t k = 0; k < batch.size(); ++k) partners.push_back(pool[rng.below(pool.size())]);
  } else {
    partners = same_label_partners(batch, ds.labels, pool, rng);
  }
  diag.pairs += batch.size();
  for (std::size_t k = 0; k < batch.size(); ++k)
    if (ds.labels[batch[k]] != ds.labels[partners[k]]) ++diag.cross_label;
  const Tensor yi = ds.gather(batch), yj = ds.gather(partners);
  if (v == Variant::OracleNegative) {
    std::vector<MaskedRun> runs;
    const Tensor mi = temporal_mask(yi, cfg.mask_min, cfg.mask_max, rng, &runs);
    const Tensor mj = temporal_mask(yj, cfg.mask_min, cfg.mask_max, rng, &runs);
    double frac = 0.0;
    for (const auto& r : runs) frac += static_cast<double>(r.length) / static_cast<double>(ds.window());
    diag.mask_fraction.push_back(frac / static_cast<double>(runs.size()));
    return m.loss_cross(mi, mj, yj);
  }
  return m.loss_cross(yi, yj);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t size,
                                                   std::size_t cap) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += size) {
    if (cap && out.size() >= cap) break;
    out.emplace_back(order.begin() + s, order.begin() + std::min(order.size(), s + size));
  }
  return out;
}

double evaluate(const PulseModel& m, const TrainConfig& cfg, const WindowDataset& ds,
                const std::vector<std::size_t>& val_idx) {
  const Rng root(cfg.seed);
  ad::NoTapeScope no_tape;
  // Same draws every epoch, so validation losses are comparable.
  const Rng vr = root.split("val");
  Diagnostics unused;
  double total = 0.0;
  std::size_t count = 0;
  const auto batches = make_batches(val_idx, cfg.batch_size, 0);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    Rng rng = vr.split(b);
    double loss;
    try {
      loss = objective(m, cfg, ds, batches[b], val_idx, rng, unused).item();
    } catch (const NumericOverflow&) {
      loss = std::numeric_limits<double>::infinity();
    }
    total += loss * static_cast<double>(batches[b].size());
    count += batches[b].size();
  }
  return total / static_cast<double>(count);
}

std::vector<std::vector<double>> snapshot(const PulseModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.values());
  return out;
}

void restore(PulseModel& m, const std::vector<std::vector<double>>& values) {
  auto params = m.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    std::copy(values[k].begin(), values[k].end(), t.mutable_data().begin());
  }
}

nlohmann::json run_manifest(const PulseModel& m, const TrainConfig& cfg, const WindowDataset& ds) {
  return {{"train_config", cfg.to_json()},
          {"config_hash", cfg.config_hash},
          {"dataset_hash", ds.config_hash},
          {"model_config_effective", m.config().to_json()}};
}

}  // namespace

double validation_loss(const PulseModel& model, const WindowDataset& ds, const TrainConfig& cfg) {
  return evaluate(model, cfg, ds, ds.indices(Split::Val));
}

TrainState train(const WindowDataset& ds, const PulseConfig& model_cfg, const TrainConfig& cfg,
                 const TrainOptions& options) {
  cfg.validate();
  const Rng root(cfg.seed);
  const PulseConfig mcfg = variant_model_config(model_cfg, cfg.variant);
  if (mcfg.window != ds.window() || mcfg.channels != ds.dims())
    throw ConfigError("model expects windows of " + std::to_string(mcfg.window) + " x " +
                      std::to_string(mcfg.channels) + ", dataset has " + std::to_string(ds.window()) + " x " +
                      std::to_string(ds.dims()));
  const auto train_idx = ds.indices(Split::Train);
  const auto val_idx = ds.indices(Split::Val);
  if (train_idx.empty() || val_idx.empty()) throw ProtocolError("dataset needs train and val windows");

  TrainState state{PulseModel(mcfg, root.split("model").key()), 0, 0, 0.0, 0, {}, {}};
  state.model.fit_normalization(ds.gather(train_idx));
  std::vector<Tensor> params;
  for (const auto& p : state.model.parameters()) params.push_back(p.tensor);
  AdamW opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});

  const std::size_t per_epoch = make_batches(train_idx, cfg.batch_size, cfg.max_batches_per_epoch).size();
  const std::size_t total_steps = per_epoch * cfg.epochs;
  state.best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best = snapshot(state.model);

  const nlohmann::json manifest_base = run_manifest(state.model, cfg, ds);
  std::optional<fs::path> out = options.output_dir;
  if (options.resume) {
    if (!out) throw ConfigError("resume needs an output directory");
    auto [m, tensors] = model::load_tensors(*out / "last");
    if (m.at("train_config") != manifest_base.at("train_config") ||
        m.at("config_hash") != manifest_base.at("config_hash") ||
        m.at("dataset_hash") != manifest_base.at("dataset_hash"))
      throw ConfigError("refusing to resume: checkpoint was written under a different configuration");
    model::assign_tensors(state.model, tensors);
    opt.load_state(tensors, m.at("optimizer_steps").get<std::size_t>());
    state.step = m.at("step");
    state.epochs_done = m.at("epochs_done");
    state.best_val = m.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : m.at("best_val").get<double>();
    state.best_epoch = m.at("best_epoch");
    for (const auto& r : m.at("history")) state.history.push_back(EpochRecord::from_json(r));
    PulseModel best_model = model::load_model(*out / "best");
    best = snapshot(best_model);
  }
  if (out) fs::create_directories(*out);

  std::size_t consecutive_bad = 0;
  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    if (options.stop_after_epochs && epoch >= options.stop_after_epochs) break;
    const auto t_start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = train_idx;
    Rng er = root.split("epoch").split(epoch);
    shuffle(order, er);
    const auto batches = make_batches(order, cfg.batch_size, cfg.max_batches_per_epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    Diagnostics diag;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const auto& batch : batches) {
      Rng br = root.split("batch").split(state.step);
      state.model.zero_grad();
      const double lr = one_cycle_lr(state.step, total_steps, cfg.peak_lr);
      rec.lr = lr;
      ++state.step;
      ad::Tape tape;
      ad::TapeScope scope(tape);
      Tensor loss;
      double value = std::numeric_limits<double>::quiet_NaN();
      try {
        loss = objective(state.model, cfg, ds, batch, train_idx, br, diag);
        value = loss.item();
      } catch (const NumericOverflow&) {
      }
      if (!std::isfinite(value)) {
        ++rec.skipped_steps;
        if (++consecutive_bad >= 2)
          throw NumericOverflow("training loss is not finite for two consecutive batches",
                                static_cast<std::ptrdiff_t>(state.step));
        continue;
      }
      consecutive_bad = 0;
      ad::backward(loss);
      clip_grad_norm(params, kGradClip);
      if (!opt.step(lr)) ++rec.skipped_steps;
      loss_sum += value * static_cast<double>(batch.size());
      loss_count += batch.size();
    }
    rec.step = state.step;
    rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::nan("");
    rec.val_loss = evaluate(state.model, cfg, ds, val_idx);
    rec.extra = diag.to_json(cfg.variant);
    if (rec.val_loss < state.best_val) {
      rec.improved = true;
      state.best_val = rec.val_loss;
      state.best_epoch = epoch;
      best = snapshot(state.model);
      if (out) {
        nlohmann::json m = manifest_base;
        m["epoch"] = epoch;
        m["val_loss"] = rec.val_loss;
        m["step"] = state.step;
        model::save_model(state.model, *out / "best", m);
      }
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    state.history.push_back(rec);
    state.epochs_done = epoch + 1;
    if (!options.quiet)
      std::cerr << variant_name(cfg.variant) << " epoch " << epoch + 1 << "/" << cfg.epochs << " train "
                << rec.train_loss << " val " << rec.val_loss << (rec.improved ? " *" : "") << " ("
                << rec.wall_seconds << " s)\n";
    if (out) {
      std::ofstream log(*out / "metrics.jsonl", std::ios::app);
      log << rec.to_json(true).dump() << '\n';
      nlohmann::json m = manifest_base;
      m["format"] = "pulse-train-state";
      m["step"] = state.step;
      m["optimizer_steps"] = opt.steps();
      m["epochs_done"] = state.epochs_done;
      m["best_val"] = state.best_val;
      m["best_epoch"] = state.best_epoch;
      m["history"] = nlohmann::json::array();
      for (const auto& r : state.history) m["history"].push_back(r.to_json(true));
      auto tensors = state.model.parameters();
      for (const auto& b : state.model.buffers()) tensors.push_back(b);
      for (const auto& s : opt.state()) tensors.push_back(s);
      model::save_tensors(*out / "last", m, tensors);
    }
  }
  restore(state.model, best);
  state.optimizer_state = opt.state();
  if (out) {
    std::ofstream h(*out / "history.json", std::ios::trunc);
    h << state.history_json().dump(2) << '\n';
  }
  return state;
}

TrainState train_oracle(const WindowDataset& ds, const PulseConfig& model_cfg, TrainConfig cfg, Polarity polarity,
                        const TrainOptions& options) {
  cfg.variant = polarity == Polarity::Positive ? Variant::OraclePositive : Variant::OracleNegative;
  return train(ds, model_cfg, cfg, options);
}

TrainState train_ablation(const WindowDataset& ds, const PulseConfig& model_cfg, TrainConfig cfg, Variant which,
                          const TrainOptions& options) {
  if (!is_ablation(which)) throw ParameterError("'" + variant_name(which) + "' is not an ablation");
  cfg.variant = which;
  return train(ds, model_cfg, cfg, options);
}

}  // namespace pulse::train
