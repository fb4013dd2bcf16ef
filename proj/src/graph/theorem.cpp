#include <chrono>
#include <sstream>

#include <json.hpp>

#include "pulse/errors.hpp"
#include "pulse/graph.hpp"

namespace pulse::graph {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

SharedSet set_of(const GenerativeDag& dag, std::initializer_list<std::string> names) {
  SharedSet s;
  for (const auto& n : names) s.members.push_back(dag.id_of(n));
  std::sort(s.members.begin(), s.members.end());
  return s;
}

void check_two_sample(int W, WindowReport& rep, std::vector<Counterexample>& bad) {
  const GenerativeDag dag = build_two_sample_ssm(W);
  const SharedSet theta_only = set_of(dag, {"Theta"});
  const std::size_t theta = dag.id_of("Theta");
  const std::uint64_t total = std::uint64_t{1} << (2 * W);
  for (std::uint64_t bits = 1; bits + 1 < total; ++bits) {
    std::vector<std::vector<bool>> rows(2, std::vector<bool>(W));
    for (int s = 0; s < 2; ++s)
      for (int t = 0; t < W; ++t) rows[s][t] = (bits >> (s * W + t)) & 1U;
    const MaskScheme mask = MaskScheme::from_samples(dag, rows);
    const std::string desc = mask.describe(dag);
    ++rep.masks;

    const SharedSet c = minimal_shared_set(dag, mask);
    std::size_t count = 0;
    const SharedSet oracle = brute_force_shared_set(dag, mask, &count);
    if (c == oracle)
      ++rep.agreements;
    else
      bad.push_back({W, "oracle-mismatch", desc, "structural " + c.str(dag) + " vs brute force " + oracle.str(dag)});
    if (count != 1) {
      ++rep.non_unique;
      bad.push_back({W, "non-unique", desc, std::to_string(count) + " minimum blocking sets"});
    }

    auto constant = [&](int s, bool v) {
      return std::all_of(rows[s].begin(), rows[s].end(), [&](bool x) { return x == v; });
    };
    const bool full_sample = (constant(0, false) && constant(1, true)) || (constant(0, true) && constant(1, false));
    if (full_sample) ++rep.full_sample_masks;
    const bool is_theta_only = c == theta_only;
    if (is_theta_only != full_sample)
      bad.push_back({W, "biconditional", desc,
                     std::string(full_sample ? "full-sample mask" : "partial mask") + " gave C = " + c.str(dag)});
    const bool has_theta = std::find(c.members.begin(), c.members.end(), theta) != c.members.end();
    if (is_theta_only)
      ++rep.theta_only;
    else if (has_theta)
      ++rep.theta_with_states;
    else
      ++rep.states_only;
  }
}

void check_subsequences(int W, WindowReport& rep, std::vector<Counterexample>& bad) {
  const GenerativeDag dag = build_single_sample_ssm(W);
  for (int t0 = 1; t0 <= W; ++t0) {
    for (int t1 = t0; t1 <= W; ++t1) {
      if (t0 == 1 && t1 == W) continue;  // everything masked
      std::vector<std::vector<bool>> rows(1, std::vector<bool>(W, true));
      for (int t = t0; t <= t1; ++t) rows[0][t - 1] = false;
      const MaskScheme mask = MaskScheme::from_samples(dag, rows);
      SharedSet expected;
      if (t0 == 1) {
        expected = set_of(dag, {state_name(0, t1)});
        ++rep.eq_left;
      } else if (t1 == W) {
        expected = set_of(dag, {state_name(0, t0 - 1)});
        ++rep.eq_right;
      } else {
        expected = set_of(dag, {state_name(0, t0 - 1), state_name(0, t1)});
        ++rep.eq_middle;
      }
      const SharedSet c = minimal_shared_set(dag, mask);
      const SharedSet oracle = brute_force_shared_set(dag, mask);
      if (!(c == expected) || !(oracle == expected))
        bad.push_back({W, "closed-form", mask.describe(dag),
                       "expected " + expected.str(dag) + ", structural " + c.str(dag) + ", brute force " +
                           oracle.str(dag)});
    }
  }
}

}  // namespace

TheoremReport verify_theorem1(int w_max) {
  if (w_max < 2) throw ParameterError("w_max must be at least 2 (at W = 1 Theta has no children)");
  if (w_max > 6) throw ParameterError("w_max is limited to 6");
  const auto start = std::chrono::steady_clock::now();
  TheoremReport report;
  report.w_max = w_max;
  for (int W = 2; W <= w_max; ++W) {
    const auto t = std::chrono::steady_clock::now();
    WindowReport rep;
    rep.window = W;
    check_two_sample(W, rep, report.counterexamples);
    check_subsequences(W, rep, report.counterexamples);
    rep.seconds = seconds_since(t);
    report.windows.push_back(rep);
  }
  report.seconds = seconds_since(start);
  return report;
}

std::string TheoremReport::text() const {
  std::ostringstream os;
  os << "Shared latent set verification, W = 2.." << w_max << "\n";
  for (const auto& r : windows) {
    os << "W=" << r.window << ": " << r.masks << " masks, " << r.agreements << " oracle agreements, "
       << r.full_sample_masks << " full-sample masks, C={Theta} on " << r.theta_only << ", Theta plus states on "
       << r.theta_with_states << ", states only on " << r.states_only << "; subsequence cases left " << r.eq_left
       << " right " << r.eq_right << " middle " << r.eq_middle << " (" << r.seconds << " s)\n";
  }
  os << "counterexamples: " << counterexamples.size() << "\n";
  for (const auto& c : counterexamples)
    os << "  W=" << c.window << " [" << c.kind << "] " << c.mask << ": " << c.detail << "\n";
  os << (passed() ? "PASS" : "FAIL") << " (" << seconds << " s)\n";
  return os.str();
}

std::string TheoremReport::json() const {
  nlohmann::json j;
  j["w_max"] = w_max;
  j["passed"] = passed();
  j["seconds"] = seconds;
  j["windows"] = nlohmann::json::array();
  for (const auto& r : windows)
    j["windows"].push_back({{"window", r.window},
                            {"masks", r.masks},
                            {"agreements", r.agreements},
                            {"full_sample_masks", r.full_sample_masks},
                            {"theta_only", r.theta_only},
                            {"theta_with_states", r.theta_with_states},
                            {"states_only", r.states_only},
                            {"non_unique", r.non_unique},
                            {"subsequence_cases", {{"left", r.eq_left}, {"right", r.eq_right}, {"middle", r.eq_middle}}},
                            {"seconds", r.seconds}});
  j["counterexamples"] = nlohmann::json::array();
  for (const auto& c : counterexamples)
    j["counterexamples"].push_back({{"window", c.window}, {"kind", c.kind}, {"mask", c.mask}, {"detail", c.detail}});
  return j.dump(2);
}

}  // namespace pulse::graph
