#include "codd/evidence.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "codd/error.h"
#include "codd/log_math.h"

namespace codd {

VirtualEvidence::VirtualEvidence(std::size_t length, std::size_t vocab)
    : vocab_(vocab),
      kinds_(length, EvidenceKind::vacuous),
      tokens_(length, 0),
      weights_(length * vocab, 0.0) {
  if (vocab == 0) throw InputError("VirtualEvidence: vocabulary must be nonempty");
}

VirtualEvidence VirtualEvidence::observed(std::span<const Token> tokens, std::size_t vocab) {
  VirtualEvidence ev(tokens.size(), vocab);
  for (std::size_t i = 0; i < tokens.size(); ++i) ev.observe(i, tokens[i]);
  return ev;
}

void VirtualEvidence::set_vacuous(std::size_t i) {
  kinds_.at(i) = EvidenceKind::vacuous;
  std::fill_n(weights_.begin() + static_cast<std::ptrdiff_t>(i * vocab_), vocab_, 0.0);
}

void VirtualEvidence::observe(std::size_t i, Token token) {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_)
    throw InputError("VirtualEvidence: token " + std::to_string(token) + " outside vocabulary");
  kinds_.at(i) = EvidenceKind::observed;
  tokens_[i] = token;
  auto col = weights_.begin() + static_cast<std::ptrdiff_t>(i * vocab_);
  std::fill_n(col, vocab_, kNegInf);
  col[token] = 0.0;
}

void VirtualEvidence::set_potential(std::size_t i, std::span<const double> log_weights) {
  if (log_weights.size() != vocab_)
    throw InputError("VirtualEvidence: potential column has wrong width");
  for (double w : log_weights)
    if (std::isnan(w) || w == std::numeric_limits<double>::infinity())
      throw InputError("VirtualEvidence: potential weights must be finite or -inf");
  kinds_.at(i) = EvidenceKind::potential;
  std::copy(log_weights.begin(), log_weights.end(),
            weights_.begin() + static_cast<std::ptrdiff_t>(i * vocab_));
}

}  // namespace codd
