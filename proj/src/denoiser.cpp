#include "codd/denoiser.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "codd/error.h"

namespace codd {

namespace {

std::vector<double> smoothed_log_row(std::span<const double> mass, double total, double smoothing) {
  const double v = static_cast<double>(mass.size());
  std::vector<double> row(mass.size());
  for (std::size_t k = 0; k < mass.size(); ++k) row[k] = std::log((mass[k] + smoothing) / (total + v * smoothing));
  return row;
}

void append_indicator_row(std::vector<double>& out, std::size_t vocab, Token token, double smoothing) {
  std::vector<double> mass(vocab, 0.0);
  mass[static_cast<std::size_t>(token)] = 1.0;
  const auto row = smoothed_log_row(mass, 1.0, smoothing);
  out.insert(out.end(), row.begin(), row.end());
}

void check_state(const MaskedSequence& state, std::size_t length, std::size_t vocab) {
  if (state.length() != length)
    throw InputError("state length " + std::to_string(state.length()) + " != source length " + std::to_string(length));
  state.check_tokens(vocab);
}

}  // namespace

TemplateDistribution::TemplateDistribution(std::size_t vocab, std::vector<Template> templates)
    : vocab_(vocab), templates_(std::move(templates)) {
  if (templates_.empty()) throw InputError("TemplateDistribution: no templates");
  length_ = templates_.front().tokens.size();
  double total = 0.0;
  for (const Template& t : templates_) {
    if (t.tokens.size() != length_) throw InputError("TemplateDistribution: templates differ in length");
    if (!(t.prob > 0.0)) throw InputError("TemplateDistribution: probabilities must be positive");
    for (Token x : t.tokens)
      if (x < 0 || static_cast<std::size_t>(x) >= vocab_) throw InputError("TemplateDistribution: token out of range");
    total += t.prob;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("TemplateDistribution: probabilities sum to " + std::to_string(total));
}

bool TemplateDistribution::contains(std::span<const Token> tokens) const {
  return std::any_of(templates_.begin(), templates_.end(),
                     [&](const Template& t) { return std::equal(t.tokens.begin(), t.tokens.end(), tokens.begin(), tokens.end()); });
}

TokenVector TemplateDistribution::sample(Rng& rng) const {
  std::vector<double> w;
  w.reserve(templates_.size());
  for (const Template& t : templates_) w.push_back(t.prob);
  return templates_[rng.categorical(w)].tokens;
}

PotentialGrid oracle_potentials(const TemplateDistribution& dist, const MaskedSequence& state, double smoothing) {
  check_state(state, dist.length(), dist.vocab_size());
  const std::size_t len = dist.length(), v = dist.vocab_size();
  std::vector<double> mass(len * v, 0.0);
  double total = 0.0;
  for (const Template& t : dist.templates()) {
    bool consistent = true;
    for (std::size_t i = 0; i < len && consistent; ++i)
      consistent = state.masked(i) || state.token(i) == t.tokens[i];
    if (!consistent) continue;
    total += t.prob;
    for (std::size_t i = 0; i < len; ++i) mass[i * v + static_cast<std::size_t>(t.tokens[i])] += t.prob;
  }
  if (total == 0.0) throw ContradictionError("no template is consistent with the observed tokens");
  std::vector<double> out;
  out.reserve(len * v);
  for (std::size_t i = 0; i < len; ++i) {
    const auto row = smoothed_log_row({mass.data() + i * v, v}, total, smoothing);
    out.insert(out.end(), row.begin(), row.end());
  }
  return PotentialGrid(len, v, std::move(out));
}

PotentialGrid UniformSource::potentials(const MaskedSequence& state) const {
  check_state(state, length_, vocab_);
  return PotentialGrid::uniform(length_, vocab_);
}

CountDenoiser::CountDenoiser(std::size_t length, std::size_t vocab, std::size_t context_radius, double smoothing,
                             std::vector<TokenVector> sequences, std::vector<double> counts)
    : length_(length),
      vocab_(vocab),
      radius_(context_radius),
      smoothing_(smoothing),
      sequences_(std::move(sequences)),
      counts_(std::move(counts)) {
  if (sequences_.size() != counts_.size()) throw InputError("CountDenoiser: counts not aligned with sequences");
  if (!(smoothing_ > 0.0)) throw InputError("CountDenoiser: smoothing must be positive");
}

PotentialGrid CountDenoiser::potentials(const MaskedSequence& state) const {
  check_state(state, length_, vocab_);
  std::vector<double> out;
  out.reserve(length_ * vocab_);
  std::vector<std::size_t> context;
  std::vector<std::size_t> depth(sequences_.size());
  std::vector<double> mass(vocab_);
  for (std::size_t i = 0; i < length_; ++i) {
    if (!state.masked(i)) {
      append_indicator_row(out, vocab_, state.token(i), smoothing_);
      continue;
    }
    // Observed neighbours, nearest first (left before right on ties).
    context.clear();
    for (std::size_t d = 1; d <= radius_ && (d <= i || i + d < length_); ++d) {
      if (d <= i && !state.masked(i - d)) context.push_back(i - d);
      if (i + d < length_ && !state.masked(i + d)) context.push_back(i + d);
    }
    // A sequence matches a context prefix of size k when its first k context
    // tokens agree; back off to the longest prefix with any support.
    std::size_t best = 0;
    for (std::size_t s = 0; s < sequences_.size(); ++s) {
      std::size_t k = 0;
      while (k < context.size() && sequences_[s][context[k]] == state.token(context[k])) ++k;
      depth[s] = k;
      best = std::max(best, k);
    }
    std::fill(mass.begin(), mass.end(), 0.0);
    double total = 0.0;
    for (std::size_t s = 0; s < sequences_.size(); ++s) {
      if (depth[s] < best) continue;
      mass[static_cast<std::size_t>(sequences_[s][i])] += counts_[s];
      total += counts_[s];
    }
    const auto row = smoothed_log_row(mass, total, smoothing_);
    out.insert(out.end(), row.begin(), row.end());
  }
  return PotentialGrid(length_, vocab_, std::move(out));
}

CountDenoiser train_count_denoiser(std::span<const TokenVector> corpus, std::size_t vocab, std::size_t length,
                                   std::size_t context_radius, double smoothing) {
  if (!corpus.empty()) length = corpus.front().size();
  std::map<TokenVector, double> table;
  for (const TokenVector& seq : corpus) {
    if (seq.size() != length) throw InputError("train_count_denoiser: corpus sequences differ in length");
    for (Token t : seq)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw InputError("train_count_denoiser: token out of range");
    table[seq] += 1.0;
  }
  std::vector<TokenVector> sequences;
  std::vector<double> counts;
  for (auto& [seq, c] : table) {
    sequences.push_back(seq);
    counts.push_back(c);
  }
  return CountDenoiser(length, vocab, context_radius, smoothing, std::move(sequences), std::move(counts));
}

}  // namespace codd
