#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "codd/evidence.h"
#include "codd/rng.h"
#include "codd/types.h"

namespace codd {

// Dense homogeneous HMM: initial distribution pi (N), row-stochastic
// transitions A (N x N) and emissions B (N x V), all in natural-log space.
// Hard zeros (-inf) are allowed.
class HmmParams {
 public:
  HmmParams(std::size_t num_states, std::size_t vocab, std::vector<double> log_pi,
            std::vector<double> log_a, std::vector<double> log_b);

  static HmmParams uniform(std::size_t num_states, std::size_t vocab);
  // Every row drawn from a symmetric Dirichlet(concentration).
  static HmmParams random(std::size_t num_states, std::size_t vocab, double concentration, Rng& rng);

  std::size_t num_states() const { return n_; }
  std::size_t vocab_size() const { return v_; }

  std::span<const double> log_pi() const { return log_pi_; }
  std::span<const double> log_a() const { return log_a_; }
  std::span<const double> log_b() const { return log_b_; }
  std::span<const double> log_a_row(std::size_t h) const { return {log_a_.data() + h * n_, n_}; }
  std::span<const double> log_b_row(std::size_t h) const { return {log_b_.data() + h * v_, v_}; }
  double log_a(std::size_t from, std::size_t to) const { return log_a_[from * n_ + to]; }
  double log_b(std::size_t h, std::size_t v) const { return log_b_[h * v_ + v]; }

  // Linear-space copies used by the matrix-vector kernels.
  std::span<const double> a() const { return a_; }
  std::span<const double> b() const { return b_; }

  bool operator==(const HmmParams& other) const;

 private:
  std::size_t n_;
  std::size_t v_;
  std::vector<double> log_pi_;
  std::vector<double> log_a_;
  std::vector<double> log_b_;
  std::vector<double> a_;
  std::vector<double> b_;
};

// log sum_x p(x) prod_i w_i(x_i). Returns -inf (not an error) when the
// evidence has zero probability.
double hmm_log_partition(const HmmParams& params, const VirtualEvidence& evidence);

// log p(x) for a fully observed sequence.
double hmm_log_likelihood(const HmmParams& params, std::span<const Token> tokens);

struct HmmPosteriors {
  std::size_t length = 0;
  std::size_t num_states = 0;
  std::size_t vocab = 0;
  std::vector<double> state_marginals;   // length x N
  std::vector<double> transition_flows;  // (length - 1) x N x N
  std::vector<double> emission_flows;    // length x N x V
  double log_z = 0.0;

  double state(std::size_t i, std::size_t h) const { return state_marginals[i * num_states + h]; }
  double transition(std::size_t i, std::size_t from, std::size_t to) const {
    return transition_flows[(i * num_states + from) * num_states + to];
  }
  double emission(std::size_t i, std::size_t h, std::size_t v) const {
    return emission_flows[(i * num_states + h) * vocab + v];
  }
};

// Forward-backward under virtual evidence. Throws ContradictionError if Z = 0.
HmmPosteriors hmm_posteriors(const HmmParams& params, const VirtualEvidence& evidence);

// Position-summed expected counts, the sufficient statistics of one update.
struct FlowTotals {
  std::vector<double> initial;     // N
  std::vector<double> transition;  // N x N
  std::vector<double> emission;    // N x V

  FlowTotals() = default;
  FlowTotals(std::size_t num_states, std::size_t vocab)
      : initial(num_states, 0.0),
        transition(num_states * num_states, 0.0),
        emission(num_states * vocab, 0.0) {}

  void add(const FlowTotals& other, double scale = 1.0);
};

// Adds weight * flows into `totals` and returns log Z. Throws
// ContradictionError if Z = 0 (nothing is added in that case).
double hmm_accumulate_flows(const HmmParams& params, const VirtualEvidence& evidence,
                            double weight, FlowTotals& totals);

// Exact per-position token marginals under the evidence-weighted
// distribution, length x V in linear space. Throws ContradictionError if Z = 0.
std::vector<double> hmm_token_marginals(const HmmParams& params, const VirtualEvidence& evidence);

// Draws the hidden chain from its posterior given the evidence, then each free
// position's token from exp((log B[h_i, v] + w_i(v)) / temperature).
// Observed positions return their observed token. temperature in (0, 1].
TokenVector hmm_sample_conditional(const HmmParams& params, const VirtualEvidence& evidence,
                                   double temperature, Rng& rng);

// CODDHMM1 binary format.
void write_hmm(std::ostream& out, const HmmParams& params);
HmmParams read_hmm(std::istream& in);
void save_hmm(const std::filesystem::path& path, const HmmParams& params);
HmmParams load_hmm(const std::filesystem::path& path);

}  // namespace codd
