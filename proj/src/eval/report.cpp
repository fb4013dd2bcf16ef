#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "pulse/errors.hpp"
#include "pulse/eval.hpp"

namespace pulse::eval {

namespace {

// NaN has no JSON spelling; undefined metrics become null.
nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\"") != std::string::npos) throw ParameterError("CSV field may not contain ',' or quotes: " + s);
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : per_class)
    classes.push_back({{"label", c.label},
                       {"support", c.support},
                       {"auroc", number(c.auroc)},
                       {"auprc", number(c.auprc)},
                       {"skipped", c.skipped}});
  return {{"averaging", "macro one-vs-rest"},
          {"accuracy", number(accuracy)},
          {"auroc", number(auroc)},
          {"auprc", number(auprc)},
          {"per_class", classes},
          {"warnings", warnings},
          {"seed", seed},
          {"config_hash", config_hash}};
}

nlohmann::json SubsetRecord::to_json() const {
  return {{"subset", subset},
          {"n_labeled", n_labeled},
          {"pseudo_classes", pseudo_classes},
          {"draws", draws},
          {"metrics", metrics.to_json()}};
}

nlohmann::json SemiReport::to_json() const {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : subsets) subs.push_back(s.to_json());
  return {{"fraction", fraction},
          {"coverage", coverage == Coverage::Laplace ? "laplace" : "resample"},
          {"mean_accuracy", number(mean_accuracy)},
          {"mean_auroc", number(mean_auroc)},
          {"mean_auprc", number(mean_auprc)},
          {"subsets", subs}};
}

std::string csv_header() { return "variant,setting,seed,subset,accuracy,auroc,auprc,config_hash"; }

std::string csv_row(const ResultRow& r) {
  check_field(r.variant);
  check_field(r.setting);
  check_field(r.config_hash);
  std::ostringstream os;
  os << r.variant << ',' << r.setting << ',' << r.seed << ',' << r.subset << ',' << exact(r.accuracy) << ','
     << exact(r.auroc) << ',' << exact(r.auprc) << ',' << r.config_hash;
  return os.str();
}

std::vector<ResultRow> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ProtocolError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != csv_header()) throw ProtocolError(path.string() + ": unexpected CSV header");
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 8) throw ProtocolError(path.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      rows.push_back({f[0], f[1], std::stoull(f[2]), std::stoul(f[3]), std::stod(f[4]), std::stod(f[5]),
                      std::stod(f[6]), f[7]});
    } catch (const std::exception&) {
      throw ProtocolError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

void append_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw Error("cannot write " + path.string());
  if (fresh) os << csv_header() << '\n';
  for (const auto& r : rows) os << csv_row(r) << '\n';
}

std::vector<TableRow> assemble_table(const std::vector<ResultRow>& rows) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.variant, r.setting);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  auto cell = [](const std::vector<const ResultRow*>& g, double ResultRow::*field) {
    TableCell c;
    c.n = g.size();
    for (const auto* r : g) c.mean += r->*field;
    c.mean /= static_cast<double>(c.n);
    if (c.n > 1) {
      double ss = 0.0;
      for (const auto* r : g) ss += (r->*field - c.mean) * (r->*field - c.mean);
      c.std = std::sqrt(ss / static_cast<double>(c.n - 1));
    }
    return c;
  };
  std::vector<TableRow> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    out.push_back({key.first, key.second, cell(g, &ResultRow::accuracy), cell(g, &ResultRow::auroc),
                   cell(g, &ResultRow::auprc)});
  }
  return out;
}

std::string format_table(const std::vector<TableRow>& table) {
  auto pct = [](const TableCell& c) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * c.mean, 100.0 * c.std);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "| variant | setting | n | accuracy | AUROC | AUPRC |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& r : table)
    os << "| " << r.variant << " | " << r.setting << " | " << r.accuracy.n << " | " << pct(r.accuracy) << " | "
       << pct(r.auroc) << " | " << pct(r.auprc) << " |\n";
  return os.str();
}

}  // namespace pulse::eval
