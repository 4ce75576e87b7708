#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "codd/types.h"

namespace codd {

enum class EvidenceKind : std::uint8_t { vacuous, observed, potential };

// Independent virtual evidence: one nonnegative weight function per position,
// stored as natural-log weights. Observed tokens are log-indicators, vacuous
// positions are all zeros (weight 1), potentials are arbitrary log-weights.
class VirtualEvidence {
 public:
  VirtualEvidence(std::size_t length, std::size_t vocab);

  static VirtualEvidence observed(std::span<const Token> tokens, std::size_t vocab);

  std::size_t length() const { return kinds_.size(); }
  std::size_t vocab_size() const { return vocab_; }

  EvidenceKind kind(std::size_t i) const { return kinds_[i]; }
  // Only meaningful for observed positions.
  Token token(std::size_t i) const { return tokens_[i]; }
  std::span<const double> log_weights(std::size_t i) const {
    return {weights_.data() + i * vocab_, vocab_};
  }

  void set_vacuous(std::size_t i);
  void observe(std::size_t i, Token token);
  // Entries may be -inf (zero weight) but never NaN or +inf.
  void set_potential(std::size_t i, std::span<const double> log_weights);

 private:
  std::size_t vocab_;
  std::vector<EvidenceKind> kinds_;
  std::vector<Token> tokens_;
  std::vector<double> weights_;
};

}  // namespace codd
