#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "codd/evidence.h"
#include "codd/hmm.h"
#include "codd/rng.h"
#include "codd/types.h"

namespace codd {

// Per-position categorical log-potentials (the factorized denoiser output),
// length x V, each row normalized.
class PotentialGrid {
 public:
  PotentialGrid(std::size_t length, std::size_t vocab, std::vector<double> log_theta);

  static PotentialGrid uniform(std::size_t length, std::size_t vocab);
  // Renormalizes rows in log space. `adjusted` receives the number of rows whose
  // mass deviated from 1 by more than 1e-6.
  static PotentialGrid from_log_potentials(std::size_t length, std::size_t vocab, std::vector<double> log_theta,
                                           std::size_t* adjusted = nullptr);

  std::size_t length() const { return length_; }
  std::size_t vocab_size() const { return vocab_; }
  std::span<const double> row(std::size_t i) const { return {log_theta_.data() + i * vocab_, vocab_}; }
  double log_theta(std::size_t i, std::size_t v) const { return log_theta_[i * vocab_ + v]; }
  std::span<const double> data() const { return log_theta_; }

  std::vector<double> probabilities(std::size_t i) const;
  // Row-wise theta^(1/temperature), renormalized.
  PotentialGrid sharpened(double temperature) const;
  PotentialGrid slice(std::size_t lo, std::size_t hi) const;

  bool operator==(const PotentialGrid&) const = default;

 private:
  std::size_t length_;
  std::size_t vocab_;
  std::vector<double> log_theta_;
};

// Diffusion state x_t: tokens plus a mask flag per position. Tokens at masked
// positions are ignored.
class MaskedSequence {
 public:
  MaskedSequence() = default;
  MaskedSequence(TokenVector tokens, std::vector<char> mask);

  static MaskedSequence all_masked(std::size_t length);
  static MaskedSequence observed(TokenVector tokens);

  std::size_t length() const { return tokens_.size(); }
  bool masked(std::size_t i) const { return mask_[i] != 0; }
  Token token(std::size_t i) const { return tokens_[i]; }
  const TokenVector& tokens() const { return tokens_; }
  const std::vector<char>& mask() const { return mask_; }

  std::size_t masked_count() const;
  double mask_ratio() const;
  std::vector<std::size_t> masked_positions() const;

  void reveal(std::size_t i, Token token);
  void hide(std::size_t i);
  MaskedSequence slice(std::size_t lo, std::size_t hi) const;
  // Throws InputError if an unmasked token lies outside [0, vocab).
  void check_tokens(std::size_t vocab) const;

  bool operator==(const MaskedSequence&) const = default;

 private:
  TokenVector tokens_;
  std::vector<char> mask_;
};

// Position-ordering rules. Score-based rules rank by a value where larger is
// picked first: confidence = max probability, margin = top-1 minus top-2,
// entropy = negative entropy. Ties go to the lowest position.
enum class Heuristic { confidence, margin, entropy, random, left_to_right, right_to_left };

Heuristic parse_heuristic(std::string_view name);
std::string_view to_string(Heuristic h);

double heuristic_score(Heuristic h, std::span<const double> probs, std::size_t position);

enum class SamplerKind { latent, ao, alg1 };

SamplerKind parse_sampler(std::string_view name);
std::string_view to_string(SamplerKind s);

// Observed positions become indicators, targets take the grid row, remaining
// masked positions are vacuous.
VirtualEvidence make_evidence(const MaskedSequence& state, const PotentialGrid& grid,
                              std::span<const std::size_t> target);

// log p_hat(completion | state) for the coupled distribution
// p_omega(x) * prod_{masked i} theta_i(x_i) / Z. `completion` lists tokens for
// the masked positions in increasing position order.
double joint_log_prob(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                      std::span<const Token> completion);

// Latent-path sampling: hidden chain from its evidence posterior, then each
// target token from the temperature-sharpened leaf times potential term.
// Returns tokens aligned with `target`.
TokenVector sample_joint_latent(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                                std::span<const std::size_t> target, double temperature, Rng& rng);

// Any-order sampling: repeatedly computes exact coupled marginals of the
// undecided targets, picks one by `order`, draws it from its sharpened
// marginal and clamps it.
TokenVector sample_joint_ao(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                            std::span<const std::size_t> target, double temperature, Heuristic order, Rng& rng);

// Sharpens only the potential grid, then samples the coupled conditional
// exactly at temperature 1.
TokenVector sample_alg1_simple(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                               std::span<const std::size_t> target, double temperature, Rng& rng);

TokenVector sample_joint(SamplerKind kind, const HmmParams& prior, const MaskedSequence& state,
                         const PotentialGrid& grid, std::span<const std::size_t> target, double temperature,
                         Heuristic ao_order, Rng& rng);

// Independent per-position draw from theta_i^(1/temperature).
Token sample_factorized_token(const PotentialGrid& grid, std::size_t position, double temperature, Rng& rng);

}  // namespace codd
