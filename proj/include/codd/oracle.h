#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "codd/denoiser.h"
#include "codd/evidence.h"
#include "codd/hmm.h"
#include "codd/inference.h"
#include "codd/types.h"

namespace codd {

// Brute-force reference computations. Nothing here shares code with the
// forward-backward kernels; everything is plain enumeration.

inline constexpr std::size_t kEnumerationBudget = 1'000'000;

// Dense table over completions of `positions`. Index is mixed radix with the
// first position most significant.
struct JointTable {
  std::vector<std::size_t> positions;
  std::size_t vocab = 0;
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  TokenVector completion(std::size_t index) const;
  std::size_t index_of(std::span<const Token> completion) const;
  double prob(std::span<const Token> completion) const { return probs[index_of(completion)]; }
};

// p_omega(x) by summing over every hidden path. Throws BudgetError when the
// number of paths exceeds the budget.
double brute_force_sequence_prob(const HmmParams& prior, std::span<const Token> tokens);

// log sum_x p_omega(x) prod_i w_i(x_i) by enumerating all V^L sequences.
double brute_force_log_partition(const HmmParams& prior, const VirtualEvidence& evidence);

// Coupled conditional over the masked positions of `state`:
// p_omega(x) prod theta_i(x_i), normalized. Without a grid the potentials are
// omitted (the prior's own conditional).
JointTable exact_joint_table(const HmmParams& prior, const MaskedSequence& state,
                             const std::optional<PotentialGrid>& grid = std::nullopt);

// Template-distribution conditional, optionally reweighted by a grid.
JointTable exact_joint_table(const TemplateDistribution& dist, const MaskedSequence& state,
                             const std::optional<PotentialGrid>& grid = std::nullopt);

// Product of the grid rows at the masked positions of `state`.
JointTable factorized_table(const PotentialGrid& grid, const MaskedSequence& state);

// Per-position marginals of the table, positions x V.
std::vector<std::vector<double>> table_marginals(const JointTable& table);

// Product of independent rows as a table over the same positions.
JointTable product_table(const std::vector<std::size_t>& positions, const std::vector<std::vector<double>>& rows);

// KL(p || q) in nats; +inf when q = 0 somewhere p > 0.
double kl_divergence(const JointTable& p, const JointTable& q);
double total_variation(const JointTable& p, const JointTable& q);

// KL(joint || product of the given marginals).
double misspec_gap(const JointTable& joint, const std::vector<std::vector<double>>& marginals);

// Empirical table from samples aligned with `positions`.
JointTable empirical_table(const std::vector<std::size_t>& positions, std::size_t vocab,
                           std::span<const TokenVector> samples);

}  // namespace codd
