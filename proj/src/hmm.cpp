#include "codd/hmm.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "codd/error.h"
#include "codd/log_math.h"

namespace codd {

namespace {

constexpr double kNormTolerance = 1e-9;
// Linear-space accumulators below this value are recomputed with an exact
// log-sum-exp, so hard zeros and extreme ranges never lose precision.
constexpr double kUnderflowGuard = 1e-250;

void check_distribution(std::span<const double> row, const char* what, std::size_t index) {
  double total = 0.0;
  for (double x : row) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity())
      throw InputError(std::string("HmmParams: non-finite entry in ") + what);
    total += std::exp(x);
  }
  if (std::abs(total - 1.0) > kNormTolerance)
    throw InputError(std::string("HmmParams: ") + what + " row " + std::to_string(index) +
                     " sums to " + std::to_string(total));
}

void check_evidence(const HmmParams& params, const VirtualEvidence& evidence) {
  if (evidence.length() == 0) throw InputError("evidence length must be at least 1");
  if (evidence.vocab_size() != params.vocab_size())
    throw InputError("evidence vocabulary " + std::to_string(evidence.vocab_size()) +
                     " does not match prior vocabulary " + std::to_string(params.vocab_size()));
}

// Per-position, per-state emission terms and the forward/backward lattices,
// all in log space. Row i of each matrix has N entries.
struct Lattice {
  std::size_t length = 0;
  std::size_t n = 0;
  std::vector<double> emit;   // log sum_v B[h, v] w_i(v)
  std::vector<double> alpha;  // log p(evidence_{<=i}, h_i)
  std::vector<double> beta;   // log p(evidence_{>i} | h_i)
  double log_z = kNegInf;

  double* row(std::vector<double>& m, std::size_t i) { return m.data() + i * n; }
  const double* row(const std::vector<double>& m, std::size_t i) const { return m.data() + i * n; }
};

void compute_emissions(const HmmParams& params, const VirtualEvidence& ev, Lattice& lat) {
  const std::size_t n = params.num_states();
  const std::size_t v = params.vocab_size();
  lat.emit.assign(lat.length * n, 0.0);
  std::vector<double> scaled(v);
  const auto b = params.b();
  for (std::size_t i = 0; i < lat.length; ++i) {
    double* e = lat.row(lat.emit, i);
    switch (ev.kind(i)) {
      case EvidenceKind::vacuous:
        break;
      case EvidenceKind::observed: {
        const auto tok = static_cast<std::size_t>(ev.token(i));
        for (std::size_t h = 0; h < n; ++h) e[h] = params.log_b(h, tok);
        break;
      }
      case EvidenceKind::potential: {
        const auto w = ev.log_weights(i);
        double m = kNegInf;
        for (double x : w) m = std::max(m, x);
        if (m == kNegInf) {
          std::fill_n(e, n, kNegInf);
          break;
        }
        for (std::size_t k = 0; k < v; ++k) scaled[k] = std::exp(w[k] - m);
        for (std::size_t h = 0; h < n; ++h) {
          const double* brow = b.data() + h * v;
          double s = 0.0;
          for (std::size_t k = 0; k < v; ++k) s += brow[k] * scaled[k];
          if (s > kUnderflowGuard) {
            e[h] = std::log(s) + m;
          } else {
            double acc = kNegInf;
            for (std::size_t k = 0; k < v; ++k) acc = log_add(acc, params.log_b(h, k) + w[k]);
            e[h] = acc;
          }
        }
        break;
      }
    }
  }
}

void run_forward(const HmmParams& params, Lattice& lat) {
  const std::size_t n = lat.n;
  const auto a = params.a();
  lat.alpha.assign(lat.length * n, kNegInf);
  std::vector<double> scaled(n), acc(n);
  {
    double* a0 = lat.row(lat.alpha, 0);
    const double* e0 = lat.row(lat.emit, 0);
    for (std::size_t h = 0; h < n; ++h) a0[h] = params.log_pi()[h] + e0[h];
  }
  for (std::size_t i = 1; i < lat.length; ++i) {
    const double* prev = lat.row(lat.alpha, i - 1);
    double* cur = lat.row(lat.alpha, i);
    const double* e = lat.row(lat.emit, i);
    double m = kNegInf;
    for (std::size_t h = 0; h < n; ++h) m = std::max(m, prev[h]);
    if (m == kNegInf) continue;  // zero mass already; row stays -inf
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t h = 0; h < n; ++h) {
      const double s = std::exp(prev[h] - m);
      if (s == 0.0) continue;
      const double* arow = a.data() + h * n;
      for (std::size_t g = 0; g < n; ++g) acc[g] += s * arow[g];
    }
    for (std::size_t g = 0; g < n; ++g) {
      if (e[g] == kNegInf) continue;
      double t;
      if (acc[g] > kUnderflowGuard) {
        t = std::log(acc[g]) + m;
      } else {
        t = kNegInf;
        for (std::size_t h = 0; h < n; ++h) t = log_add(t, prev[h] + params.log_a(h, g));
      }
      cur[g] = t + e[g];
    }
  }
  lat.log_z = log_sum_exp({lat.row(lat.alpha, lat.length - 1), n});
}

void run_backward(const HmmParams& params, Lattice& lat) {
  const std::size_t n = lat.n;
  const auto a = params.a();
  lat.beta.assign(lat.length * n, 0.0);
  std::vector<double> next(n), scaled(n);
  for (std::size_t i = lat.length - 1; i-- > 0;) {
    const double* bnext = lat.row(lat.beta, i + 1);
    const double* e = lat.row(lat.emit, i + 1);
    double* cur = lat.row(lat.beta, i);
    double m = kNegInf;
    for (std::size_t g = 0; g < n; ++g) {
      next[g] = e[g] + bnext[g];
      m = std::max(m, next[g]);
    }
    if (m == kNegInf) {
      std::fill_n(cur, n, kNegInf);
      continue;
    }
    for (std::size_t g = 0; g < n; ++g) scaled[g] = std::exp(next[g] - m);
    for (std::size_t h = 0; h < n; ++h) {
      const double* arow = a.data() + h * n;
      double s = 0.0;
      for (std::size_t g = 0; g < n; ++g) s += arow[g] * scaled[g];
      if (s > kUnderflowGuard) {
        cur[h] = std::log(s) + m;
      } else {
        double t = kNegInf;
        for (std::size_t g = 0; g < n; ++g) t = log_add(t, params.log_a(h, g) + next[g]);
        cur[h] = t;
      }
    }
  }
}

Lattice forward_backward(const HmmParams& params, const VirtualEvidence& evidence) {
  check_evidence(params, evidence);
  Lattice lat;
  lat.length = evidence.length();
  lat.n = params.num_states();
  compute_emissions(params, evidence, lat);
  run_forward(params, lat);
  if (lat.log_z == kNegInf) throw ContradictionError("evidence has zero probability under the prior (Z = 0)");
  run_backward(params, lat);
  return lat;
}

// Emission posterior for state h at position i, as a log-weight over tokens
// relative to the state marginal: log B[h, v] + w_i(v) - emit_i(h).
template <typename Fn>
void for_each_emission(const HmmParams& params, const VirtualEvidence& ev, const Lattice& lat,
                       std::size_t i, std::size_t h, Fn&& fn) {
  const std::size_t v = params.vocab_size();
  switch (ev.kind(i)) {
    case EvidenceKind::observed:
      fn(static_cast<std::size_t>(ev.token(i)), 1.0);
      break;
    case EvidenceKind::vacuous:
      for (std::size_t k = 0; k < v; ++k) fn(k, params.b()[h * v + k]);
      break;
    case EvidenceKind::potential: {
      const auto w = ev.log_weights(i);
      const double e = lat.row(lat.emit, i)[h];
      for (std::size_t k = 0; k < v; ++k) fn(k, std::exp(params.log_b(h, k) + w[k] - e));
      break;
    }
  }
}

}  // namespace

HmmParams::HmmParams(std::size_t num_states, std::size_t vocab, std::vector<double> log_pi,
                     std::vector<double> log_a, std::vector<double> log_b)
    : n_(num_states), v_(vocab), log_pi_(std::move(log_pi)), log_a_(std::move(log_a)), log_b_(std::move(log_b)) {
  if (n_ < 1) throw InputError("HmmParams: need at least one hidden state");
  if (v_ < 1) throw InputError("HmmParams: need a nonempty vocabulary");
  if (log_pi_.size() != n_ || log_a_.size() != n_ * n_ || log_b_.size() != n_ * v_)
    throw InputError("HmmParams: dimension mismatch for N=" + std::to_string(n_) + ", V=" + std::to_string(v_));
  check_distribution(log_pi_, "initial", 0);
  for (std::size_t h = 0; h < n_; ++h) {
    check_distribution(log_a_row(h), "transition", h);
    check_distribution(log_b_row(h), "emission", h);
  }
  a_.resize(log_a_.size());
  b_.resize(log_b_.size());
  std::transform(log_a_.begin(), log_a_.end(), a_.begin(), [](double x) { return std::exp(x); });
  std::transform(log_b_.begin(), log_b_.end(), b_.begin(), [](double x) { return std::exp(x); });
}

HmmParams HmmParams::uniform(std::size_t num_states, std::size_t vocab) {
  if (num_states == 0 || vocab == 0) throw InputError("HmmParams::uniform: empty dimensions");
  const double ln = -std::log(static_cast<double>(num_states));
  const double lv = -std::log(static_cast<double>(vocab));
  return HmmParams(num_states, vocab, std::vector<double>(num_states, ln),
                   std::vector<double>(num_states * num_states, ln),
                   std::vector<double>(num_states * vocab, lv));
}

HmmParams HmmParams::random(std::size_t num_states, std::size_t vocab, double concentration, Rng& rng) {
  auto draw_row = [&](std::size_t width) {
    std::vector<double> row(width);
    double total = 0.0;
    for (double& x : row) {
      x = std::max(rng.gamma(concentration), 1e-300);
      total += x;
    }
    for (double& x : row) x = std::log(x / total);
    log_normalize(row);
    return row;
  };
  std::vector<double> pi = draw_row(num_states), a, b;
  for (std::size_t h = 0; h < num_states; ++h) {
    auto r = draw_row(num_states);
    a.insert(a.end(), r.begin(), r.end());
  }
  for (std::size_t h = 0; h < num_states; ++h) {
    auto r = draw_row(vocab);
    b.insert(b.end(), r.begin(), r.end());
  }
  return HmmParams(num_states, vocab, std::move(pi), std::move(a), std::move(b));
}

bool HmmParams::operator==(const HmmParams& other) const {
  return n_ == other.n_ && v_ == other.v_ && log_pi_ == other.log_pi_ && log_a_ == other.log_a_ &&
         log_b_ == other.log_b_;
}

void FlowTotals::add(const FlowTotals& other, double scale) {
  for (std::size_t i = 0; i < initial.size(); ++i) initial[i] += scale * other.initial[i];
  for (std::size_t i = 0; i < transition.size(); ++i) transition[i] += scale * other.transition[i];
  for (std::size_t i = 0; i < emission.size(); ++i) emission[i] += scale * other.emission[i];
}

double hmm_log_partition(const HmmParams& params, const VirtualEvidence& evidence) {
  check_evidence(params, evidence);
  Lattice lat;
  lat.length = evidence.length();
  lat.n = params.num_states();
  compute_emissions(params, evidence, lat);
  run_forward(params, lat);
  return lat.log_z;
}

double hmm_log_likelihood(const HmmParams& params, std::span<const Token> tokens) {
  return hmm_log_partition(params, VirtualEvidence::observed(tokens, params.vocab_size()));
}

HmmPosteriors hmm_posteriors(const HmmParams& params, const VirtualEvidence& evidence) {
  const Lattice lat = forward_backward(params, evidence);
  const std::size_t n = lat.n, v = params.vocab_size(), len = lat.length;
  HmmPosteriors out;
  out.length = len;
  out.num_states = n;
  out.vocab = v;
  out.log_z = lat.log_z;
  out.state_marginals.resize(len * n);
  out.transition_flows.assign(len > 0 ? (len - 1) * n * n : 0, 0.0);
  out.emission_flows.assign(len * n * v, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t h = 0; h < n; ++h) {
      const double g = std::exp(lat.row(lat.alpha, i)[h] + lat.row(lat.beta, i)[h] - lat.log_z);
      out.state_marginals[i * n + h] = g;
      if (g == 0.0) continue;
      double* eta = out.emission_flows.data() + (i * n + h) * v;
      for_each_emission(params, evidence, lat, i, h, [&](std::size_t k, double p) { eta[k] += g * p; });
    }
    if (i + 1 == len) continue;
    const double* al = lat.row(lat.alpha, i);
    const double* e = lat.row(lat.emit, i + 1);
    const double* bn = lat.row(lat.beta, i + 1);
    for (std::size_t h = 0; h < n; ++h) {
      if (al[h] == kNegInf) continue;
      for (std::size_t g = 0; g < n; ++g)
        out.transition_flows[(i * n + h) * n + g] = std::exp(al[h] + params.log_a(h, g) + e[g] + bn[g] - lat.log_z);
    }
  }
  return out;
}

double hmm_accumulate_flows(const HmmParams& params, const VirtualEvidence& evidence, double weight,
                            FlowTotals& totals) {
  const Lattice lat = forward_backward(params, evidence);
  const std::size_t n = lat.n, v = params.vocab_size(), len = lat.length;
  for (std::size_t i = 0; i < len; ++i) {
    const double* al = lat.row(lat.alpha, i);
    const double* be = lat.row(lat.beta, i);
    for (std::size_t h = 0; h < n; ++h) {
      const double g = std::exp(al[h] + be[h] - lat.log_z);
      if (g == 0.0) continue;
      if (i == 0) totals.initial[h] += weight * g;
      double* eta = totals.emission.data() + h * v;
      const double wg = weight * g;
      for_each_emission(params, evidence, lat, i, h, [&](std::size_t k, double p) { eta[k] += wg * p; });
    }
    if (i + 1 == len) continue;
    const double* e = lat.row(lat.emit, i + 1);
    const double* bn = lat.row(lat.beta, i + 1);
    for (std::size_t h = 0; h < n; ++h) {
      if (al[h] == kNegInf) continue;
      double* xi = totals.transition.data() + h * n;
      for (std::size_t g = 0; g < n; ++g)
        xi[g] += weight * std::exp(al[h] + params.log_a(h, g) + e[g] + bn[g] - lat.log_z);
    }
  }
  return lat.log_z;
}

std::vector<double> hmm_token_marginals(const HmmParams& params, const VirtualEvidence& evidence) {
  const Lattice lat = forward_backward(params, evidence);
  const std::size_t n = lat.n, v = params.vocab_size(), len = lat.length;
  std::vector<double> out(len * v, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    double* row = out.data() + i * v;
    for (std::size_t h = 0; h < n; ++h) {
      const double g = std::exp(lat.row(lat.alpha, i)[h] + lat.row(lat.beta, i)[h] - lat.log_z);
      if (g == 0.0) continue;
      for_each_emission(params, evidence, lat, i, h, [&](std::size_t k, double p) { row[k] += g * p; });
    }
  }
  return out;
}

TokenVector hmm_sample_conditional(const HmmParams& params, const VirtualEvidence& evidence, double temperature,
                                   Rng& rng) {
  if (!(temperature > 0.0 && temperature <= 1.0)) throw InputError("temperature must lie in (0, 1]");
  check_evidence(params, evidence);
  Lattice lat;
  lat.length = evidence.length();
  lat.n = params.num_states();
  compute_emissions(params, evidence, lat);
  run_backward(params, lat);

  const std::size_t n = lat.n, v = params.vocab_size();
  std::vector<double> logits(n);
  const double* e0 = lat.row(lat.emit, 0);
  const double* b0 = lat.row(lat.beta, 0);
  for (std::size_t h = 0; h < n; ++h) logits[h] = params.log_pi()[h] + e0[h] + b0[h];
  if (log_sum_exp(logits) == kNegInf) throw ContradictionError("evidence has zero probability under the prior (Z = 0)");

  TokenVector out(lat.length);
  std::vector<double> token_logits(v);
  std::size_t state = rng.categorical_log(logits);
  for (std::size_t i = 0;; ++i) {
    if (evidence.kind(i) == EvidenceKind::observed) {
      out[i] = evidence.token(i);
    } else {
      const auto w = evidence.log_weights(i);
      for (std::size_t k = 0; k < v; ++k) token_logits[k] = (params.log_b(state, k) + w[k]) / temperature;
      out[i] = static_cast<Token>(rng.categorical_log(token_logits));
    }
    if (i + 1 == lat.length) break;
    const double* e = lat.row(lat.emit, i + 1);
    const double* bn = lat.row(lat.beta, i + 1);
    for (std::size_t g = 0; g < n; ++g) logits[g] = params.log_a(state, g) + e[g] + bn[g];
    state = rng.categorical_log(logits);
  }
  return out;
}

}  // namespace codd
