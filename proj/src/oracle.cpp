#include "codd/oracle.h"

#include <cmath>
#include <limits>
#include <string>

#include "codd/error.h"

namespace codd {

namespace {

std::size_t checked_power(std::size_t base, std::size_t exponent, std::size_t budget, const char* what) {
  std::size_t n = 1;
  for (std::size_t k = 0; k < exponent; ++k) {
    if (n > budget / base)
      throw BudgetError(std::string(what) + ": " + std::to_string(base) + "^" + std::to_string(exponent) +
                        " exceeds the enumeration budget of " + std::to_string(budget));
    n *= base;
  }
  return n;
}

// Advances a mixed-radix counter with the last digit fastest.
bool next_digits(std::vector<std::size_t>& digits, std::size_t radix) {
  for (std::size_t k = digits.size(); k-- > 0;) {
    if (++digits[k] < radix) return true;
    digits[k] = 0;
  }
  return false;
}

JointTable empty_table(const MaskedSequence& state, std::size_t vocab) {
  JointTable t;
  t.positions = state.masked_positions();
  t.vocab = vocab;
  t.probs.assign(checked_power(vocab, t.positions.size(), kEnumerationBudget, "joint table"), 0.0);
  return t;
}

void normalize(JointTable& t, const char* what) {
  double total = 0.0;
  for (double p : t.probs) total += p;
  if (!(total > 0.0)) throw ContradictionError(std::string(what) + ": no completion has positive probability");
  for (double& p : t.probs) p /= total;
}

}  // namespace

TokenVector JointTable::completion(std::size_t index) const {
  TokenVector out(positions.size());
  for (std::size_t k = positions.size(); k-- > 0;) {
    out[k] = static_cast<Token>(index % vocab);
    index /= vocab;
  }
  return out;
}

std::size_t JointTable::index_of(std::span<const Token> completion) const {
  if (completion.size() != positions.size()) throw InputError("completion length does not match the table");
  std::size_t idx = 0;
  for (Token t : completion) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw InputError("completion token out of range");
    idx = idx * vocab + static_cast<std::size_t>(t);
  }
  return idx;
}

double brute_force_sequence_prob(const HmmParams& prior, std::span<const Token> tokens) {
  const std::size_t n = prior.num_states(), len = tokens.size();
  if (len == 0) return 1.0;
  checked_power(n, len, 50 * kEnumerationBudget, "hidden paths");
  std::vector<std::size_t> path(len, 0);
  double total = 0.0;
  do {
    double p = std::exp(prior.log_pi()[path[0]] + prior.log_b(path[0], static_cast<std::size_t>(tokens[0])));
    for (std::size_t i = 1; i < len && p > 0.0; ++i)
      p *= std::exp(prior.log_a(path[i - 1], path[i]) + prior.log_b(path[i], static_cast<std::size_t>(tokens[i])));
    total += p;
  } while (next_digits(path, n));
  return total;
}

double brute_force_log_partition(const HmmParams& prior, const VirtualEvidence& evidence) {
  const std::size_t v = prior.vocab_size(), len = evidence.length();
  checked_power(v, len, kEnumerationBudget, "sequences");
  std::vector<std::size_t> digits(len, 0);
  TokenVector x(len);
  double total = 0.0;
  do {
    double w = 1.0;
    for (std::size_t i = 0; i < len; ++i) {
      x[i] = static_cast<Token>(digits[i]);
      w *= std::exp(evidence.log_weights(i)[digits[i]]);
    }
    if (w > 0.0) total += w * brute_force_sequence_prob(prior, x);
  } while (next_digits(digits, v));
  return std::log(total);
}

JointTable exact_joint_table(const HmmParams& prior, const MaskedSequence& state,
                             const std::optional<PotentialGrid>& grid) {
  const std::size_t v = prior.vocab_size();
  state.check_tokens(v);
  JointTable t = empty_table(state, v);
  TokenVector x = state.tokens();
  for (std::size_t idx = 0; idx < t.size(); ++idx) {
    const TokenVector c = t.completion(idx);
    double w = 1.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      x[t.positions[k]] = c[k];
      if (grid) w *= std::exp(grid->log_theta(t.positions[k], static_cast<std::size_t>(c[k])));
    }
    t.probs[idx] = w > 0.0 ? w * brute_force_sequence_prob(prior, x) : 0.0;
  }
  normalize(t, "prior joint table");
  return t;
}

JointTable exact_joint_table(const TemplateDistribution& dist, const MaskedSequence& state,
                             const std::optional<PotentialGrid>& grid) {
  JointTable t = empty_table(state, dist.vocab_size());
  for (const Template& tpl : dist.templates()) {
    bool consistent = true;
    for (std::size_t i = 0; i < state.length() && consistent; ++i)
      consistent = state.masked(i) || state.token(i) == tpl.tokens[i];
    if (!consistent) continue;
    TokenVector c(t.positions.size());
    double w = tpl.prob;
    for (std::size_t k = 0; k < c.size(); ++k) {
      c[k] = tpl.tokens[t.positions[k]];
      if (grid) w *= std::exp(grid->log_theta(t.positions[k], static_cast<std::size_t>(c[k])));
    }
    t.probs[t.index_of(c)] += w;
  }
  normalize(t, "template joint table");
  return t;
}

JointTable factorized_table(const PotentialGrid& grid, const MaskedSequence& state) {
  const std::vector<std::size_t> positions = state.masked_positions();
  std::vector<std::vector<double>> rows;
  for (std::size_t p : positions) rows.push_back(grid.probabilities(p));
  return product_table(positions, rows);
}

std::vector<std::vector<double>> table_marginals(const JointTable& table) {
  std::vector<std::vector<double>> out(table.positions.size(), std::vector<double>(table.vocab, 0.0));
  for (std::size_t idx = 0; idx < table.size(); ++idx) {
    const TokenVector c = table.completion(idx);
    for (std::size_t k = 0; k < c.size(); ++k) out[k][static_cast<std::size_t>(c[k])] += table.probs[idx];
  }
  return out;
}

JointTable product_table(const std::vector<std::size_t>& positions, const std::vector<std::vector<double>>& rows) {
  if (rows.size() != positions.size()) throw InputError("product_table: one row per position required");
  JointTable t;
  t.positions = positions;
  t.vocab = rows.empty() ? 1 : rows.front().size();
  t.probs.assign(checked_power(t.vocab, positions.size(), kEnumerationBudget, "product table"), 0.0);
  for (std::size_t idx = 0; idx < t.size(); ++idx) {
    const TokenVector c = t.completion(idx);
    double p = 1.0;
    for (std::size_t k = 0; k < c.size(); ++k) p *= rows[k][static_cast<std::size_t>(c[k])];
    t.probs[idx] = p;
  }
  return t;
}

double kl_divergence(const JointTable& p, const JointTable& q) {
  if (p.size() != q.size() || p.positions != q.positions) throw InputError("kl_divergence: tables differ in shape");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p.probs[k] <= 0.0) continue;
    if (q.probs[k] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p.probs[k] * std::log(p.probs[k] / q.probs[k]);
  }
  return std::max(kl, 0.0);
}

double total_variation(const JointTable& p, const JointTable& q) {
  if (p.size() != q.size()) throw InputError("total_variation: tables differ in shape");
  double tv = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) tv += std::abs(p.probs[k] - q.probs[k]);
  return 0.5 * tv;
}

double misspec_gap(const JointTable& joint, const std::vector<std::vector<double>>& marginals) {
  return kl_divergence(joint, product_table(joint.positions, marginals));
}

JointTable empirical_table(const std::vector<std::size_t>& positions, std::size_t vocab,
                           std::span<const TokenVector> samples) {
  JointTable t;
  t.positions = positions;
  t.vocab = vocab;
  t.probs.assign(checked_power(vocab, positions.size(), kEnumerationBudget, "empirical table"), 0.0);
  if (samples.empty()) return t;
  for (const TokenVector& s : samples) t.probs[t.index_of(s)] += 1.0;
  for (double& p : t.probs) p /= static_cast<double>(samples.size());
  return t;
}

}  // namespace codd
