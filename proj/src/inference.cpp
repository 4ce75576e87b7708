#include "codd/inference.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "codd/error.h"
#include "codd/log_math.h"

namespace codd {

namespace {

constexpr double kGridTolerance = 1e-6;

void check_temperature(double t) {
  if (!(t > 0.0 && t <= 1.0)) throw InputError("temperature must lie in (0, 1]");
}

void check_target(const MaskedSequence& state, std::span<const std::size_t> target) {
  for (std::size_t p : target) {
    if (p >= state.length()) throw InputError("target position " + std::to_string(p) + " out of range");
    if (!state.masked(p)) throw InputError("target position " + std::to_string(p) + " is not masked");
  }
}

}  // namespace

PotentialGrid::PotentialGrid(std::size_t length, std::size_t vocab, std::vector<double> log_theta)
    : length_(length), vocab_(vocab), log_theta_(std::move(log_theta)) {
  if (vocab_ == 0) throw InputError("PotentialGrid: vocabulary must be nonempty");
  if (log_theta_.size() != length_ * vocab_) throw InputError("PotentialGrid: size mismatch");
  for (std::size_t i = 0; i < length_; ++i) {
    double total = 0.0;
    for (double x : row(i)) {
      if (!std::isfinite(x)) throw InputError("PotentialGrid: non-finite entry in row " + std::to_string(i));
      total += std::exp(x);
    }
    if (std::abs(total - 1.0) > kGridTolerance)
      throw InputError("PotentialGrid: row " + std::to_string(i) + " sums to " + std::to_string(total));
  }
}

PotentialGrid PotentialGrid::uniform(std::size_t length, std::size_t vocab) {
  return PotentialGrid(length, vocab, std::vector<double>(length * vocab, -std::log(static_cast<double>(vocab))));
}

PotentialGrid PotentialGrid::from_log_potentials(std::size_t length, std::size_t vocab,
                                                 std::vector<double> log_theta, std::size_t* adjusted) {
  if (log_theta.size() != length * vocab) throw InputError("PotentialGrid: size mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < length; ++i) {
    std::span<double> r(log_theta.data() + i * vocab, vocab);
    for (double x : r)
      if (!std::isfinite(x)) throw InputError("PotentialGrid: non-finite potential in row " + std::to_string(i));
    double total = 0.0;
    for (double x : r) total += std::exp(x);
    if (std::abs(total - 1.0) > kGridTolerance) {
      log_normalize(r);
      ++count;
    }
  }
  if (adjusted) *adjusted = count;
  return PotentialGrid(length, vocab, std::move(log_theta));
}

std::vector<double> PotentialGrid::probabilities(std::size_t i) const {
  std::vector<double> p(vocab_);
  const auto r = row(i);
  for (std::size_t k = 0; k < vocab_; ++k) p[k] = std::exp(r[k]);
  return p;
}

PotentialGrid PotentialGrid::sharpened(double temperature) const {
  check_temperature(temperature);
  std::vector<double> out(log_theta_.size());
  for (std::size_t i = 0; i < length_; ++i) {
    std::span<double> r(out.data() + i * vocab_, vocab_);
    for (std::size_t k = 0; k < vocab_; ++k) r[k] = log_theta_[i * vocab_ + k] / temperature;
    log_normalize(r);
  }
  return PotentialGrid(length_, vocab_, std::move(out));
}

PotentialGrid PotentialGrid::slice(std::size_t lo, std::size_t hi) const {
  if (lo > hi || hi > length_) throw InputError("PotentialGrid::slice: bad range");
  return PotentialGrid(hi - lo, vocab_,
                       std::vector<double>(log_theta_.begin() + static_cast<std::ptrdiff_t>(lo * vocab_),
                                           log_theta_.begin() + static_cast<std::ptrdiff_t>(hi * vocab_)));
}

MaskedSequence::MaskedSequence(TokenVector tokens, std::vector<char> mask)
    : tokens_(std::move(tokens)), mask_(std::move(mask)) {
  if (tokens_.size() != mask_.size()) throw InputError("MaskedSequence: tokens and mask differ in length");
  for (std::size_t i = 0; i < mask_.size(); ++i)
    if (mask_[i]) tokens_[i] = 0;
}

MaskedSequence MaskedSequence::all_masked(std::size_t length) {
  return MaskedSequence(TokenVector(length, 0), std::vector<char>(length, 1));
}

MaskedSequence MaskedSequence::observed(TokenVector tokens) {
  std::vector<char> mask(tokens.size(), 0);
  return MaskedSequence(std::move(tokens), std::move(mask));
}

std::size_t MaskedSequence::masked_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1));
}

double MaskedSequence::mask_ratio() const {
  return mask_.empty() ? 0.0 : static_cast<double>(masked_count()) / static_cast<double>(mask_.size());
}

std::vector<std::size_t> MaskedSequence::masked_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask_.size(); ++i)
    if (mask_[i]) out.push_back(i);
  return out;
}

void MaskedSequence::reveal(std::size_t i, Token token) {
  mask_.at(i) = 0;
  tokens_[i] = token;
}

void MaskedSequence::hide(std::size_t i) {
  mask_.at(i) = 1;
  tokens_[i] = 0;
}

MaskedSequence MaskedSequence::slice(std::size_t lo, std::size_t hi) const {
  if (lo > hi || hi > length()) throw InputError("MaskedSequence::slice: bad range");
  return MaskedSequence(TokenVector(tokens_.begin() + static_cast<std::ptrdiff_t>(lo),
                                    tokens_.begin() + static_cast<std::ptrdiff_t>(hi)),
                        std::vector<char>(mask_.begin() + static_cast<std::ptrdiff_t>(lo),
                                          mask_.begin() + static_cast<std::ptrdiff_t>(hi)));
}

void MaskedSequence::check_tokens(std::size_t vocab) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!mask_[i] && (tokens_[i] < 0 || static_cast<std::size_t>(tokens_[i]) >= vocab))
      throw InputError("token " + std::to_string(tokens_[i]) + " at position " + std::to_string(i) +
                       " outside vocabulary");
}

Heuristic parse_heuristic(std::string_view name) {
  if (name == "confidence") return Heuristic::confidence;
  if (name == "margin") return Heuristic::margin;
  if (name == "entropy") return Heuristic::entropy;
  if (name == "random") return Heuristic::random;
  if (name == "left_to_right" || name == "fixed-left-to-right") return Heuristic::left_to_right;
  if (name == "right_to_left") return Heuristic::right_to_left;
  throw InputError("unknown heuristic '" + std::string(name) + "'");
}

std::string_view to_string(Heuristic h) {
  switch (h) {
    case Heuristic::confidence: return "confidence";
    case Heuristic::margin: return "margin";
    case Heuristic::entropy: return "entropy";
    case Heuristic::random: return "random";
    case Heuristic::left_to_right: return "left_to_right";
    case Heuristic::right_to_left: return "right_to_left";
  }
  return "unknown";
}

double heuristic_score(Heuristic h, std::span<const double> probs, std::size_t position) {
  switch (h) {
    case Heuristic::confidence:
      return *std::max_element(probs.begin(), probs.end());
    case Heuristic::margin: {
      double first = 0.0, second = 0.0;
      for (double p : probs) {
        if (p > first) {
          second = first;
          first = p;
        } else if (p > second) {
          second = p;
        }
      }
      return first - second;
    }
    case Heuristic::entropy:
      return -entropy(probs);
    case Heuristic::left_to_right:
      return -static_cast<double>(position);
    case Heuristic::right_to_left:
      return static_cast<double>(position);
    case Heuristic::random:
      return 0.0;
  }
  return 0.0;
}

SamplerKind parse_sampler(std::string_view name) {
  if (name == "latent") return SamplerKind::latent;
  if (name == "ao") return SamplerKind::ao;
  if (name == "alg1") return SamplerKind::alg1;
  throw InputError("unknown sampler '" + std::string(name) + "'");
}

std::string_view to_string(SamplerKind s) {
  switch (s) {
    case SamplerKind::latent: return "latent";
    case SamplerKind::ao: return "ao";
    case SamplerKind::alg1: return "alg1";
  }
  return "unknown";
}

VirtualEvidence make_evidence(const MaskedSequence& state, const PotentialGrid& grid,
                              std::span<const std::size_t> target) {
  if (grid.length() != state.length())
    throw InputError("grid length " + std::to_string(grid.length()) + " != state length " +
                     std::to_string(state.length()));
  check_target(state, target);
  VirtualEvidence ev(state.length(), grid.vocab_size());
  for (std::size_t i = 0; i < state.length(); ++i)
    if (!state.masked(i)) ev.observe(i, state.token(i));
  for (std::size_t p : target) ev.set_potential(p, grid.row(p));
  return ev;
}

double joint_log_prob(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                      std::span<const Token> completion) {
  const auto masked = state.masked_positions();
  if (completion.size() != masked.size())
    throw InputError("completion has " + std::to_string(completion.size()) + " tokens for " +
                     std::to_string(masked.size()) + " masked positions");
  const double log_z = hmm_log_partition(prior, make_evidence(state, grid, masked));
  if (log_z == kNegInf) throw ContradictionError("coupled distribution has Z = 0");
  TokenVector full = state.tokens();
  double potential = 0.0;
  for (std::size_t k = 0; k < masked.size(); ++k) {
    const Token t = completion[k];
    if (t < 0 || static_cast<std::size_t>(t) >= grid.vocab_size())
      throw InputError("completion token " + std::to_string(t) + " outside vocabulary");
    full[masked[k]] = t;
    potential += grid.log_theta(masked[k], static_cast<std::size_t>(t));
  }
  return hmm_log_likelihood(prior, full) + potential - log_z;
}

TokenVector sample_joint_latent(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                                std::span<const std::size_t> target, double temperature, Rng& rng) {
  check_temperature(temperature);
  const TokenVector full = hmm_sample_conditional(prior, make_evidence(state, grid, target), temperature, rng);
  TokenVector out;
  out.reserve(target.size());
  for (std::size_t p : target) out.push_back(full[p]);
  return out;
}

TokenVector sample_joint_ao(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                            std::span<const std::size_t> target, double temperature, Heuristic order, Rng& rng) {
  check_temperature(temperature);
  VirtualEvidence ev = make_evidence(state, grid, target);
  const std::size_t v = grid.vocab_size();
  std::vector<std::size_t> undecided(target.begin(), target.end());
  std::vector<char> is_undecided(state.length(), 0);
  for (std::size_t p : undecided) is_undecided[p] = 1;
  TokenVector decided(state.length(), 0);
  std::vector<double> logits(v);

  while (!undecided.empty()) {
    const std::vector<double> marginals = hmm_token_marginals(prior, ev);
    std::size_t pick = 0;
    if (order == Heuristic::random) {
      pick = rng.below(undecided.size());
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < undecided.size(); ++k) {
        const std::size_t p = undecided[k];
        const double s = heuristic_score(order, {marginals.data() + p * v, v}, p);
        if (s > best || (s == best && p < undecided[pick])) {
          best = s;
          pick = k;
        }
      }
    }
    const std::size_t pos = undecided[pick];
    for (std::size_t k = 0; k < v; ++k) logits[k] = std::log(marginals[pos * v + k]) / temperature;
    const auto tok = static_cast<Token>(rng.categorical_log(logits));
    ev.observe(pos, tok);
    decided[pos] = tok;
    undecided.erase(undecided.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  TokenVector out;
  out.reserve(target.size());
  for (std::size_t p : target) out.push_back(decided[p]);
  return out;
}

TokenVector sample_alg1_simple(const HmmParams& prior, const MaskedSequence& state, const PotentialGrid& grid,
                               std::span<const std::size_t> target, double temperature, Rng& rng) {
  check_temperature(temperature);
  if (temperature == 1.0) return sample_joint_latent(prior, state, grid, target, 1.0, rng);
  return sample_joint_latent(prior, state, grid.sharpened(temperature), target, 1.0, rng);
}

TokenVector sample_joint(SamplerKind kind, const HmmParams& prior, const MaskedSequence& state,
                         const PotentialGrid& grid, std::span<const std::size_t> target, double temperature,
                         Heuristic ao_order, Rng& rng) {
  switch (kind) {
    case SamplerKind::latent: return sample_joint_latent(prior, state, grid, target, temperature, rng);
    case SamplerKind::ao: return sample_joint_ao(prior, state, grid, target, temperature, ao_order, rng);
    case SamplerKind::alg1: return sample_alg1_simple(prior, state, grid, target, temperature, rng);
  }
  throw InputError("unknown sampler");
}

Token sample_factorized_token(const PotentialGrid& grid, std::size_t position, double temperature, Rng& rng) {
  check_temperature(temperature);
  const auto r = grid.row(position);
  std::vector<double> logits(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) logits[k] = r[k] / temperature;
  return static_cast<Token>(rng.categorical_log(logits));
}

}  // namespace codd
