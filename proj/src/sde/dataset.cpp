#include "pulse/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "pulse/errors.hpp"
#include "pulse/hash.hpp"
#include "pulse/rng.hpp"

namespace pulse::sde {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'U', 'L', 'S', 'E', 'D', 'S', '1'};

json config_to_json(const DatasetConfig& c) {
  return json{{"family", family_name(c.family)},
              {"sigma", c.sigma},
              {"n_classes", c.n_classes},
              {"window", c.window},
              {"trials_per_class", c.trials_per_class},
              {"steps_per_trial", c.steps_per_trial},
              {"dt", c.dt},
              {"seed", c.seed}};
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig c;
  c.family = parse_family(j.at("family").get<std::string>());
  c.sigma = j.at("sigma").get<double>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.trials_per_class = j.at("trials_per_class").get<std::size_t>();
  c.steps_per_trial = j.at("steps_per_trial").get<std::size_t>();
  c.dt = j.at("dt").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
  return r;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return to_le(v);
}

Rng trial_stream(const Rng& root, std::size_t label, std::size_t trial) {
  return root.split("trial").split((static_cast<std::uint64_t>(label) << 32) | trial);
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  throw ParameterError("unknown split");
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ParameterError("unknown split '" + name + "'");
}

void DatasetConfig::validate() const {
  if (n_classes < 1) throw ConfigError("n_classes must be at least 1");
  if (n_classes > parameter_grid(family).size())
    throw ConfigError("n_classes = " + std::to_string(n_classes) + " exceeds the " +
                      std::to_string(parameter_grid(family).size()) + "-value grid of " + family_name(family));
  if (trials_per_class < 1) throw ConfigError("trials_per_class must be at least 1");
  if (window < 1) throw ConfigError("window must be at least 1");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
  if (steps_per_trial <= kBurnIn) throw ConfigError("steps_per_trial must exceed the burn-in of 200");
  const SplitBounds b = split_bounds(steps_per_trial - kBurnIn);
  std::size_t shortest = b.hi[0] - b.lo[0];
  for (int s = 1; s < 3; ++s) shortest = std::min(shortest, b.hi[s] - b.lo[s]);
  if (window > shortest)
    throw ConfigError("window " + std::to_string(window) + " exceeds the shortest split segment (" +
                      std::to_string(shortest) + " steps)");
}

SplitBounds split_bounds(std::size_t length) {
  const std::size_t a = length * 7 / 10;
  const std::size_t b = length * 17 / 20;
  return SplitBounds{{0, a, b}, {a, b, length}};
}

std::vector<std::size_t> window_starts(std::size_t lo, std::size_t hi, std::size_t window) {
  std::vector<std::size_t> starts;
  for (std::size_t s = lo; s + window <= hi; s += window) starts.push_back(s);
  return starts;
}

std::vector<std::size_t> WindowDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

ad::Tensor WindowDataset::gather(const std::vector<std::size_t>& idx) const {
  const std::size_t stride = window() * dims();
  std::vector<double> out(idx.size() * stride);
  auto src = windows.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= size()) throw IndexError("window index out of range");
    std::copy_n(src.begin() + idx[k] * stride, stride, out.begin() + k * stride);
  }
  return ad::Tensor::from({idx.size(), window(), dims()}, std::move(out));
}

std::vector<int> WindowDataset::gather_labels(const std::vector<std::size_t>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(i));
  return out;
}

std::string dataset_config_json(const DatasetConfig& config) { return config_to_json(config).dump(); }

std::string dataset_config_hash(const DatasetConfig& config) { return content_hash(dataset_config_json(config)); }

WindowDataset build_dataset(const DatasetConfig& config) {
  config.validate();
  const Rng root(config.seed);
  const auto& grid = parameter_grid(config.family);

  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  Rng pick = root.split("classes");
  shuffle(order, pick);
  order.resize(config.n_classes);
  std::sort(order.begin(), order.end());

  WindowDataset ds;
  ds.config = config;
  ds.config_hash = dataset_config_hash(config);
  for (auto g : order) ds.class_params.push_back(grid[g]);

  const std::size_t W = config.window;
  const std::size_t T = config.steps_per_trial - kBurnIn;
  const SplitBounds bounds = split_bounds(T);
  std::vector<double> data;

  for (std::size_t label = 0; label < config.n_classes; ++label) {
    const SystemSpec spec = make_spec(config.family, ds.class_params[label], config.sigma, config.dt);
    const double diffusion = sigma_tilde(spec);
    ds.sigma_tilde.push_back(diffusion);
    for (std::size_t r = 0; r < config.trials_per_class; ++r) {
      const std::uint64_t seed = trial_stream(root, label, r).key();
      const Trajectory traj = integrate_from_random_start(spec, config.steps_per_trial, seed, diffusion);
      const auto trial_id = static_cast<std::uint32_t>(ds.trials.size());
      ds.trials.push_back({static_cast<std::uint32_t>(label), seed, static_cast<std::uint32_t>(traj.length()),
                           static_cast<std::uint32_t>(traj.redraws)});
      auto values = traj.values.data();
      for (int s = 0; s < 3; ++s) {
        for (auto start : window_starts(bounds.lo[s], bounds.hi[s], W)) {
          data.insert(data.end(), values.begin() + start * 3, values.begin() + (start + W) * 3);
          ds.labels.push_back(static_cast<int>(label));
          ds.splits.push_back(static_cast<Split>(s));
          ds.provenance.push_back({trial_id, static_cast<std::uint32_t>(start)});
        }
      }
    }
  }
  ds.windows = ad::Tensor::from({ds.labels.size(), W, 3}, std::move(data));
  validate_dataset(ds);
  return ds;
}

Trajectory regenerate_trial(const WindowDataset& ds, std::size_t trial) {
  if (trial >= ds.trials.size()) throw IndexError("trial id out of range");
  const TrialRecord& rec = ds.trials[trial];
  const SystemSpec spec = make_spec(ds.config.family, ds.class_params.at(rec.label), ds.config.sigma, ds.config.dt);
  return integrate_from_random_start(spec, ds.config.steps_per_trial, rec.seed, ds.sigma_tilde.at(rec.label));
}

void validate_dataset(const WindowDataset& ds) {
  const std::size_t n = ds.labels.size();
  if (ds.windows.rank() != 3 || ds.windows.dim(0) != n) throw DimensionError("window tensor does not match labels");
  if (ds.splits.size() != n || ds.provenance.size() != n) throw DimensionError("split/provenance size mismatch");
  const std::size_t W = ds.window();
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  std::vector<std::array<bool, 3>> coverage(ds.n_classes(), {false, false, false});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = ds.provenance[i];
    if (p.trial >= ds.trials.size()) throw ContractError("window references an unknown trial");
    const TrialRecord& rec = ds.trials[p.trial];
    if (static_cast<int>(rec.label) != ds.labels[i]) throw ContractError("window label differs from its trial label");
    const SplitBounds b = split_bounds(rec.length);
    const int s = static_cast<int>(ds.splits[i]);
    if (p.start < b.lo[s] || p.start + W > b.hi[s])
      throw ContractError("window " + std::to_string(i) + " crosses a split boundary");
    if ((p.start - b.lo[s]) % W != 0) throw ContractError("window " + std::to_string(i) + " is off the window grid");
    if (!seen.insert({p.trial, p.start}).second) throw ContractError("duplicate window in trial");
    coverage.at(ds.labels[i])[s] = true;
  }
  for (std::size_t c = 0; c < coverage.size(); ++c)
    for (int s = 0; s < 3; ++s)
      if (!coverage[c][s])
        throw ContractError("label " + std::to_string(c) + " is missing from the " +
                            split_name(static_cast<Split>(s)) + " split");
}

void save_dataset(const WindowDataset& ds, const std::filesystem::path& path) {
  json header;
  header["format"] = "pulse-dataset";
  header["version"] = 1;
  header["shape"] = {ds.size(), ds.window(), ds.dims()};
  header["config"] = config_to_json(ds.config);
  header["config_hash"] = ds.config_hash;
  header["swept_parameter"] = swept_parameter(ds.config.family);
  header["class_params"] = ds.class_params;
  header["sigma_tilde"] = ds.sigma_tilde;
  header["labels"] = ds.labels;
  std::vector<std::string> splits;
  std::vector<std::uint32_t> trial_ids, starts;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    splits.push_back(split_name(ds.splits[i]));
    trial_ids.push_back(ds.provenance[i].trial);
    starts.push_back(ds.provenance[i].start);
  }
  header["splits"] = splits;
  header["provenance"] = {{"trial", trial_ids}, {"start", starts}};
  json trials = json::array();
  for (const auto& t : ds.trials)
    trials.push_back({{"label", t.label}, {"seed", t.seed}, {"length", t.length}, {"redraws", t.redraws}});
  header["trials"] = trials;

  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : ds.windows.data()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw Error("failed writing " + path.string());
}

WindowDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw ProtocolError(path.string() + " is not a dataset file");
  const std::uint64_t len = read_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw ProtocolError("truncated dataset header in " + path.string());
  const json header = json::parse(text);

  WindowDataset ds;
  ds.config = config_from_json(header.at("config"));
  ds.config_hash = header.at("config_hash").get<std::string>();
  ds.class_params = header.at("class_params").get<std::vector<double>>();
  ds.sigma_tilde = header.at("sigma_tilde").get<std::vector<double>>();
  ds.labels = header.at("labels").get<std::vector<int>>();
  for (const auto& s : header.at("splits")) ds.splits.push_back(parse_split(s.get<std::string>()));
  const auto trial_ids = header.at("provenance").at("trial").get<std::vector<std::uint32_t>>();
  const auto starts = header.at("provenance").at("start").get<std::vector<std::uint32_t>>();
  if (trial_ids.size() != starts.size()) throw ProtocolError("provenance arrays differ in length");
  for (std::size_t i = 0; i < trial_ids.size(); ++i) ds.provenance.push_back({trial_ids[i], starts[i]});
  for (const auto& t : header.at("trials"))
    ds.trials.push_back({t.at("label").get<std::uint32_t>(), t.at("seed").get<std::uint64_t>(),
                         t.at("length").get<std::uint32_t>(), t.at("redraws").get<std::uint32_t>()});
  const auto shape = header.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw ProtocolError("dataset shape must have three axes");
  std::vector<double> values(shape[0] * shape[1] * shape[2]);
  for (auto& v : values) v = std::bit_cast<double>(read_u64(is));
  if (!is) throw ProtocolError("truncated window data in " + path.string());
  ds.windows = ad::Tensor::from({shape[0], shape[1], shape[2]}, std::move(values));
  validate_dataset(ds);
  return ds;
}

std::vector<std::filesystem::path> export_csv(const WindowDataset& ds, const std::filesystem::path& stem) {
  std::vector<std::filesystem::path> paths;
  const std::size_t W = ds.window(), M = ds.dims();
  auto values = ds.windows.data();
  for (int s = 0; s < 3; ++s) {
    const Split split = static_cast<Split>(s);
    std::filesystem::path p = stem;
    p += "_" + split_name(split) + ".csv";
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw Error("cannot open " + p.string() + " for writing");
    os.precision(17);
    os << "window,label,trial,start,t";
    for (std::size_t m = 0; m < M; ++m) os << ",y" << m;
    os << '\n';
    for (auto i : ds.indices(split)) {
      for (std::size_t t = 0; t < W; ++t) {
        os << i << ',' << ds.labels[i] << ',' << ds.provenance[i].trial << ',' << ds.provenance[i].start << ',' << t;
        for (std::size_t m = 0; m < M; ++m) os << ',' << values[(i * W + t) * M + m];
        os << '\n';
      }
    }
    paths.push_back(p);
  }
  return paths;
}

}  // namespace pulse::sde
