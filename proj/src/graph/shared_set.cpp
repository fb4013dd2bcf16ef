#include <algorithm>
#include <set>

#include "pulse/errors.hpp"
#include "pulse/graph.hpp"

namespace pulse::graph {

namespace {

// Ancestor-or-self table: anc[v][u] is true when u is an ancestor of v or u == v.
std::vector<std::vector<bool>> ancestor_table(const GenerativeDag& dag) {
  std::vector<std::vector<bool>> anc(dag.size());
  for (std::size_t v = 0; v < dag.size(); ++v) anc[v] = dag.ancestors_of(v);
  return anc;
}

struct ParentPairs {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (parent of masked, parent of unmasked)
  std::vector<bool> masked_parent, unmasked_parent;
};

ParentPairs parent_pairs(const GenerativeDag& dag, const MaskScheme& mask) {
  if (mask.observed_ids.size() != mask.unmasked.size()) throw DimensionError("mask ids and flags differ in length");
  if (!mask.valid()) throw ContractError("mask must contain both masked and unmasked observables");
  ParentPairs out;
  out.masked_parent.assign(dag.size(), false);
  out.unmasked_parent.assign(dag.size(), false);
  for (std::size_t k = 0; k < mask.observed_ids.size(); ++k) {
    const std::size_t id = mask.observed_ids[k];
    if (dag.node(id).latent()) throw ContractError("mask refers to latent node " + dag.node(id).name);
    for (auto p : dag.parents(id)) (mask.unmasked[k] ? out.unmasked_parent : out.masked_parent)[p] = true;
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t a = 0; a < dag.size(); ++a)
    if (out.masked_parent[a])
      for (std::size_t b = 0; b < dag.size(); ++b)
        if (out.unmasked_parent[b]) seen.insert({a, b});
  out.pairs.assign(seen.begin(), seen.end());
  return out;
}

// Latents that are ancestors-or-self of both a and b and have no proper
// descendant with the same property.
std::vector<std::size_t> lowest_common_ancestors(const GenerativeDag& dag, const std::vector<std::vector<bool>>& anc,
                                                 std::size_t a, std::size_t b) {
  std::vector<std::size_t> common;
  for (std::size_t u = 0; u < dag.size(); ++u)
    if (dag.node(u).latent() && anc[a][u] && anc[b][u]) common.push_back(u);
  std::vector<std::size_t> lowest;
  for (auto u : common) {
    bool has_lower = false;
    for (auto w : common)
      if (w != u && anc[w][u]) {
        has_lower = true;
        break;
      }
    if (!has_lower) lowest.push_back(u);
  }
  return lowest;
}

void collect_paths(const GenerativeDag& dag, std::size_t from, std::size_t to, std::vector<std::size_t>& path,
                   std::vector<std::vector<std::size_t>>& out) {
  path.push_back(from);
  if (from == to) {
    out.push_back(path);
  } else {
    for (auto c : dag.children(from))
      if (dag.node(c).latent()) collect_paths(dag, c, to, path, out);
  }
  path.pop_back();
}

// Every trek between masked and unmasked parents, as the node set that can
// block it: the apex plus every non-terminal node on either side.
std::vector<std::vector<std::size_t>> trek_blockers(const GenerativeDag& dag, const MaskScheme& mask) {
  dag.validate();
  const auto anc = ancestor_table(dag);
  const ParentPairs pp = parent_pairs(dag, mask);
  std::set<std::vector<std::size_t>> unique;
  for (auto [a, b] : pp.pairs) {
    for (auto apex : lowest_common_ancestors(dag, anc, a, b)) {
      std::vector<std::vector<std::size_t>> to_a, to_b;
      std::vector<std::size_t> scratch;
      collect_paths(dag, apex, a, scratch, to_a);
      collect_paths(dag, apex, b, scratch, to_b);
      for (const auto& pa : to_a)
        for (const auto& pb : to_b) {
          std::set<std::size_t> nodes{apex};
          nodes.insert(pa.begin(), pa.end() - 1);
          nodes.insert(pb.begin(), pb.end() - 1);
          unique.insert({nodes.begin(), nodes.end()});
        }
    }
  }
  return {unique.begin(), unique.end()};
}

// Path from `from` to `to` through latents whose intermediate nodes avoid `avoid`.
bool reaches_avoiding(const GenerativeDag& dag, std::size_t from, std::size_t to, const std::vector<bool>& avoid) {
  if (from == to) return true;
  std::vector<bool> seen(dag.size(), false);
  std::vector<std::size_t> stack{from};
  seen[from] = true;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (auto c : dag.children(v)) {
      if (!dag.node(c).latent() || seen[c]) continue;
      if (c == to) return true;
      seen[c] = true;
      if (!avoid[c]) stack.push_back(c);
    }
  }
  return false;
}

}  // namespace

SharedSet selection_stage(const GenerativeDag& dag, const MaskScheme& mask) {
  dag.validate();
  const auto anc = ancestor_table(dag);
  const ParentPairs pp = parent_pairs(dag, mask);
  SharedSet s;
  for (auto u : dag.latents()) {
    bool above_masked = false, above_unmasked = false;
    for (std::size_t p = 0; p < dag.size(); ++p) {
      if (pp.masked_parent[p] && anc[p][u]) above_masked = true;
      if (pp.unmasked_parent[p] && anc[p][u]) above_unmasked = true;
    }
    if (above_masked && above_unmasked) s.members.push_back(u);
  }
  return s;
}

SharedSet minimal_shared_set(const GenerativeDag& dag, const MaskScheme& mask) {
  const SharedSet selected = selection_stage(dag, mask);
  const auto anc = ancestor_table(dag);
  const ParentPairs pp = parent_pairs(dag, mask);
  std::vector<bool> in_selected(dag.size(), false);
  for (auto u : selected.members) in_selected[u] = true;

  std::vector<bool> keep(dag.size(), false);
  for (auto [a, b] : pp.pairs) {
    for (auto apex : lowest_common_ancestors(dag, anc, a, b)) {
      if (keep[apex] || !in_selected[apex]) continue;
      std::vector<bool> others = in_selected;
      others[apex] = false;
      if (reaches_avoiding(dag, apex, a, others) && reaches_avoiding(dag, apex, b, others)) keep[apex] = true;
    }
  }
  SharedSet c;
  for (auto u : selected.members)
    if (keep[u]) c.members.push_back(u);
  return c;
}

bool blocks_all_paths(const GenerativeDag& dag, const MaskScheme& mask, const SharedSet& c) {
  std::vector<bool> in_c(dag.size(), false);
  for (auto u : c.members) in_c.at(u) = true;
  for (const auto& trek : trek_blockers(dag, mask)) {
    if (std::none_of(trek.begin(), trek.end(), [&](std::size_t u) { return in_c[u]; })) return false;
  }
  return true;
}

SharedSet brute_force_shared_set(const GenerativeDag& dag, const MaskScheme& mask, std::size_t* minimal_count) {
  const auto latents = dag.latents();
  if (latents.size() > kBruteForceLatentLimit)
    throw SizeError("brute force is limited to " + std::to_string(kBruteForceLatentLimit) + " latents, graph has " +
                    std::to_string(latents.size()));
  std::vector<int> bit(dag.size(), -1);
  for (std::size_t k = 0; k < latents.size(); ++k) bit[latents[k]] = static_cast<int>(k);

  std::vector<std::uint32_t> masks;
  for (const auto& trek : trek_blockers(dag, mask)) {
    std::uint32_t m = 0;
    for (auto u : trek) m |= std::uint32_t{1} << bit[u];
    masks.push_back(m);
  }
  auto blocks = [&](std::uint32_t chosen) {
    return std::all_of(masks.begin(), masks.end(), [&](std::uint32_t m) { return (m & chosen) != 0; });
  };

  const std::size_t n = latents.size();
  for (std::size_t k = 0; k <= n; ++k) {
    std::vector<std::size_t> idx(k);
    for (std::size_t r = 0; r < k; ++r) idx[r] = r;
    std::optional<std::uint32_t> first;
    std::size_t count = 0;
    while (true) {
      std::uint32_t chosen = 0;
      for (auto r : idx) chosen |= std::uint32_t{1} << r;
      if (blocks(chosen)) {
        if (!first) first = chosen;
        ++count;
        if (!minimal_count) break;
      }
      // Next combination in lexicographic order.
      std::size_t r = k;
      while (r > 0 && idx[r - 1] == n - k + r - 1) --r;
      if (r == 0) break;
      ++idx[r - 1];
      for (std::size_t q = r; q < k; ++q) idx[q] = idx[q - 1] + 1;
    }
    if (first) {
      if (minimal_count) *minimal_count = count;
      SharedSet c;
      for (std::size_t r = 0; r < n; ++r)
        if (*first & (std::uint32_t{1} << r)) c.members.push_back(latents[r]);
      return c;
    }
  }
  throw ContractError("no blocking set found");  // unreachable: the full latent set blocks everything
}

}  // namespace pulse::graph
