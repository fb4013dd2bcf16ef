#include <algorithm>
#include <deque>
#include <sstream>

#include "pulse/errors.hpp"
#include "pulse/graph.hpp"

namespace pulse::graph {

namespace {
const char* sample_tag(int sample) { return sample == 0 ? "i" : sample == 1 ? "j" : "?"; }
}  // namespace

std::string state_name(int sample, int time) { return std::string("X_") + sample_tag(sample) + "," + std::to_string(time); }

std::string observed_name(int sample, int time) {
  return std::string("Y_") + sample_tag(sample) + "," + std::to_string(time);
}

std::size_t GenerativeDag::add_node(NodeKind kind, int sample, int time, std::string name) {
  if (find(name)) throw ContractError("duplicate node name '" + name + "'");
  const std::size_t id = nodes_.size();
  nodes_.push_back({id, kind, sample, time, std::move(name)});
  parents_.emplace_back();
  children_.emplace_back();
  return id;
}

void GenerativeDag::add_edge(std::size_t parent, std::size_t child) {
  if (parent >= size() || child >= size()) throw IndexError("edge endpoint out of range");
  if (parent == child) throw ContractError("self loop on " + nodes_[parent].name);
  if (std::find(children_[parent].begin(), children_[parent].end(), child) != children_[parent].end()) return;
  children_[parent].push_back(child);
  parents_[child].push_back(parent);
}

std::vector<std::pair<std::size_t, std::size_t>> GenerativeDag::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t p = 0; p < size(); ++p)
    for (auto c : children_[p]) out.emplace_back(p, c);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> GenerativeDag::latents() const {
  std::vector<std::size_t> out;
  for (const auto& n : nodes_)
    if (n.latent()) out.push_back(n.id);
  return out;
}

std::vector<std::size_t> GenerativeDag::observables() const {
  std::vector<std::size_t> out;
  for (const auto& n : nodes_)
    if (!n.latent()) out.push_back(n.id);
  return out;
}

std::optional<std::size_t> GenerativeDag::find(const std::string& name) const {
  for (const auto& n : nodes_)
    if (n.name == name) return n.id;
  return std::nullopt;
}

std::size_t GenerativeDag::id_of(const std::string& name) const {
  auto id = find(name);
  if (!id) throw IndexError("no node named '" + name + "'");
  return *id;
}

std::vector<std::size_t> GenerativeDag::topological_order() const {
  std::vector<std::size_t> indeg(size());
  for (std::size_t v = 0; v < size(); ++v) indeg[v] = parents_[v].size();
  std::deque<std::size_t> ready;
  for (std::size_t v = 0; v < size(); ++v)
    if (indeg[v] == 0) ready.push_back(v);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t v = ready.front();
    ready.pop_front();
    order.push_back(v);
    for (auto c : children_[v])
      if (--indeg[c] == 0) ready.push_back(c);
  }
  if (order.size() != size()) throw ContractError("generative graph contains a cycle");
  return order;
}

std::vector<bool> GenerativeDag::ancestors_of(std::size_t id) const {
  std::vector<bool> seen(size(), false);
  std::vector<std::size_t> stack{id};
  seen.at(id) = true;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (auto p : parents_[v])
      if (!seen[p]) {
        seen[p] = true;
        stack.push_back(p);
      }
  }
  return seen;
}

void GenerativeDag::validate() const {
  topological_order();
  for (const auto& n : nodes_) {
    if (n.latent()) continue;
    if (!children_[n.id].empty()) throw ContractError("observed node " + n.name + " has children");
    for (auto p : parents_[n.id])
      if (!nodes_[p].latent()) throw ContractError("observed node " + n.name + " has an observed parent");
  }
}

namespace {

GenerativeDag build_ssm(int window, int samples) {
  if (window < 1) throw ParameterError("window must be at least 1");
  GenerativeDag dag;
  const std::size_t theta = dag.add_node(NodeKind::Theta, -1, 0, "Theta");
  for (int s = 0; s < samples; ++s) {
    std::size_t prev = 0;
    for (int t = 1; t <= window; ++t) {
      const std::size_t x = dag.add_node(NodeKind::State, s, t, state_name(s, t));
      if (t >= 2) {
        dag.add_edge(prev, x);
        dag.add_edge(theta, x);
      }
      const std::size_t y = dag.add_node(NodeKind::Observed, s, t, observed_name(s, t));
      dag.add_edge(x, y);
      prev = x;
    }
  }
  return dag;
}

}  // namespace

GenerativeDag build_two_sample_ssm(int window) { return build_ssm(window, 2); }

GenerativeDag build_single_sample_ssm(int window) { return build_ssm(window, 1); }

MaskScheme MaskScheme::from_samples(const GenerativeDag& dag, const std::vector<std::vector<bool>>& per_sample) {
  MaskScheme m;
  for (auto id : dag.observables()) {
    const Node& n = dag.node(id);
    if (n.sample < 0 || static_cast<std::size_t>(n.sample) >= per_sample.size())
      throw DimensionError("mask has no row for sample of " + n.name);
    const auto& row = per_sample[n.sample];
    if (n.time < 1 || static_cast<std::size_t>(n.time) > row.size())
      throw DimensionError("mask row too short for " + n.name);
    m.observed_ids.push_back(id);
    m.unmasked.push_back(row[n.time - 1]);
  }
  return m;
}

std::vector<bool> MaskScheme::collapse_channels(const std::vector<std::vector<bool>>& per_channel) {
  std::vector<bool> out;
  for (std::size_t t = 0; t < per_channel.size(); ++t) {
    const auto& row = per_channel[t];
    if (row.empty()) throw DimensionError("channel mask row is empty");
    const bool any = std::find(row.begin(), row.end(), true) != row.end();
    const bool all = std::find(row.begin(), row.end(), false) == row.end();
    if (any != all)
      throw ContractError("time point " + std::to_string(t + 1) + " mixes masked and unmasked channels");
    out.push_back(all);
  }
  return out;
}

bool MaskScheme::valid() const {
  const bool any_masked = std::find(unmasked.begin(), unmasked.end(), false) != unmasked.end();
  const bool any_unmasked = std::find(unmasked.begin(), unmasked.end(), true) != unmasked.end();
  return any_masked && any_unmasked;
}

std::string MaskScheme::describe(const GenerativeDag& dag) const {
  // One string per sample, 'U' unmasked and 'M' masked, in time order.
  std::vector<std::string> rows;
  for (std::size_t k = 0; k < observed_ids.size(); ++k) {
    const Node& n = dag.node(observed_ids[k]);
    const std::size_t s = n.sample < 0 ? 0 : static_cast<std::size_t>(n.sample);
    if (rows.size() <= s) rows.resize(s + 1);
    if (rows[s].size() < static_cast<std::size_t>(n.time)) rows[s].resize(n.time, '?');
    rows[s][n.time - 1] = unmasked[k] ? 'U' : 'M';
  }
  std::string out;
  for (std::size_t s = 0; s < rows.size(); ++s) {
    if (s) out += ' ';
    out += std::string(sample_tag(static_cast<int>(s))) + "=" + rows[s];
  }
  return out;
}

std::vector<std::string> SharedSet::names(const GenerativeDag& dag) const {
  std::vector<std::string> out;
  for (auto id : members) out.push_back(dag.node(id).name);
  return out;
}

std::string SharedSet::str(const GenerativeDag& dag) const {
  std::string out = "{";
  const auto n = names(dag);
  for (std::size_t k = 0; k < n.size(); ++k) out += (k ? ", " : "") + n[k];
  return out + "}";
}

}  // namespace pulse::graph
