#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pulse::graph {

enum class NodeKind { Theta, State, Observed };

struct Node {
  std::size_t id = 0;
  NodeKind kind = NodeKind::State;
  int sample = -1;  // 0 = i, 1 = j, -1 = shared
  int time = 0;     // 1-based; 0 for Theta
  std::string name;

  bool latent() const { return kind != NodeKind::Observed; }
};

/// Directed acyclic generative graph. Observed nodes are leaves whose parents
/// are latent.
class GenerativeDag {
 public:
  std::size_t add_node(NodeKind kind, int sample, int time, std::string name);
  void add_edge(std::size_t parent, std::size_t child);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return parents_.at(id); }
  const std::vector<std::size_t>& children(std::size_t id) const { return children_.at(id); }
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;

  std::vector<std::size_t> latents() const;
  std::vector<std::size_t> observables() const;
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t id_of(const std::string& name) const;  // IndexError when absent

  // Kahn order; ContractError on a cycle.
  std::vector<std::size_t> topological_order() const;
  // Ancestor-or-self flags for `id`.
  std::vector<bool> ancestors_of(std::size_t id) const;
  // Throws ContractError if the graph is cyclic or an observed node has an
  // observed parent or children.
  void validate() const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
};

// Node names: "Theta", "X_i,3", "Y_j,1" (one-based time).
std::string state_name(int sample, int time);
std::string observed_name(int sample, int time);

/// Two-sample state-space graph: per sample, X_1 has no parents, X_t (t >= 2)
/// has parents {X_{t-1}, Theta}, Y_t has parent X_t.
GenerativeDag build_two_sample_ssm(int window);
// Theta plus one chain (sample i), used for subsequence masks.
GenerativeDag build_single_sample_ssm(int window);

/// Observation mask: true = unmasked (observed), false = masked.
struct MaskScheme {
  std::vector<std::size_t> observed_ids;
  std::vector<bool> unmasked;

  // Per-sample, per-time flags; sample count must match the graph's.
  static MaskScheme from_samples(const GenerativeDag& dag, const std::vector<std::vector<bool>>& per_sample);
  // Per-channel flags [time][channel] for one sample; a time point is masked
  // only when all its channels are, unmasked only when none are.
  static std::vector<bool> collapse_channels(const std::vector<std::vector<bool>>& per_channel);

  bool valid() const;  // at least one masked and one unmasked observable
  std::string describe(const GenerativeDag& dag) const;
};

struct SharedSet {
  std::vector<std::size_t> members;  // sorted node ids

  bool operator==(const SharedSet&) const = default;
  std::vector<std::string> names(const GenerativeDag& dag) const;
  std::string str(const GenerativeDag& dag) const;
};

/// Selection: latents that are ancestors of some masked and some unmasked
/// observable. Pruning: a selected L survives when it is a lowest common
/// latent ancestor of some (masked, unmasked) pair and reaches both parents
/// along paths that avoid every other selected node.
SharedSet minimal_shared_set(const GenerativeDag& dag, const MaskScheme& mask);

// Latents picked by the selection stage alone.
SharedSet selection_stage(const GenerativeDag& dag, const MaskScheme& mask);

inline constexpr std::size_t kBruteForceLatentLimit = 24;

/// Smallest latent set meeting every latent path between masked and unmasked
/// observables, by enumeration in increasing size (lexicographic ties).
/// `minimal_count` receives the number of minimum-size solutions.
SharedSet brute_force_shared_set(const GenerativeDag& dag, const MaskScheme& mask,
                                 std::size_t* minimal_count = nullptr);

// True when `c` meets every latent path between masked and unmasked observables.
bool blocks_all_paths(const GenerativeDag& dag, const MaskScheme& mask, const SharedSet& c);

struct Counterexample {
  int window = 0;
  std::string kind;
  std::string mask;
  std::string detail;
};

struct WindowReport {
  int window = 0;
  std::size_t masks = 0;
  std::size_t agreements = 0;
  std::size_t full_sample_masks = 0;
  std::size_t theta_only = 0;
  std::size_t theta_with_states = 0;  // C contains Theta and state nodes
  std::size_t states_only = 0;
  std::size_t non_unique = 0;
  std::size_t eq_left = 0, eq_right = 0, eq_middle = 0;  // single-sample subsequence cases checked
  double seconds = 0.0;
};

struct TheoremReport {
  int w_max = 0;
  std::vector<WindowReport> windows;
  std::vector<Counterexample> counterexamples;
  double seconds = 0.0;

  bool passed() const { return counterexamples.empty(); }
  std::string text() const;
  std::string json() const;
};

/// Exhaustive check for W = 2..w_max of: structural == brute force, C = {Theta}
/// iff one sample is fully masked and the other fully unmasked, unique
/// minimum, and the three closed-form subsequence cases on one chain.
TheoremReport verify_theorem1(int w_max);

}  // namespace pulse::graph
