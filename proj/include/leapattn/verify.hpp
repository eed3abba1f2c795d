#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace leapattn {

/// Outcome of one property suite: how many checks ran, how many failed,
/// and a capped list of failure descriptions.
struct SuiteResult {
  std::string name;
  int checks = 0;
  int failures = 0;
  double seconds = 0.0;
  std::vector<std::string> messages;

  bool ok() const { return failures == 0; }
};

/// Linear kernel vs quadratic oracle: every re-weight scheme, causal and
/// not, N in {1,2,3,7,16,33,64}, 20 random instances each, 1e-6 relative.
SuiteResult verify_equivalence(std::uint64_t seed);

/// Finite-difference checks through full attention layers (softmax,
/// cos_fixed, cos_leap including its module weights, rope); 5 random
/// instances per family, 1e-4 relative.
SuiteResult verify_gradients(std::uint64_t seed);

/// Streaming properties: per-step decode equals batch causal rows for every
/// scheme, incremental cross-attention equals batch encoding, wait-k traces
/// satisfy the schedule, and unread frames cannot affect emitted tokens.
SuiteResult verify_streaming(std::uint64_t seed);

/// Metric properties: the bundled benchmark fixture reproduces the published
/// composite scores within 0.02, plus the algebraic identities over a
/// 1000-point random grid. Takes the fixture CSV text.
SuiteResult verify_metrics(const std::string& fixture_csv, std::uint64_t seed);

/// Machine-readable summary of a verify run.
std::string suites_to_json(const std::vector<SuiteResult>& suites, std::uint64_t seed);

}  // namespace leapattn
