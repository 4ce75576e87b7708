#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "codd/circuit.h"
#include "codd/error.h"
#include "codd/hmm.h"
#include "codd/log_math.h"
#include "codd/oracle.h"
#include "test_support.h"

using namespace codd;

namespace {

// Posterior p(h_i = s | evidence) by enumerating every hidden path and every
// sequence.
std::vector<double> brute_force_state_marginals(const HmmParams& p, const VirtualEvidence& ev) {
  const std::size_t n = p.num_states(), v = p.vocab_size(), len = ev.length();
  std::vector<double> out(len * n, 0.0);
  std::vector<std::size_t> path(len, 0);
  double z = 0.0;
  for (;;) {
    // Weight of this path summed over sequences factorizes per position.
    double w = std::exp(p.log_pi()[path[0]]);
    for (std::size_t i = 1; i < len; ++i) w *= std::exp(p.log_a(path[i - 1], path[i]));
    for (std::size_t i = 0; i < len; ++i) {
      double e = 0.0;
      for (std::size_t t = 0; t < v; ++t) e += std::exp(p.log_b(path[i], t) + ev.log_weights(i)[t]);
      w *= e;
    }
    z += w;
    for (std::size_t i = 0; i < len; ++i) out[i * n + path[i]] += w;
    std::size_t k = len;
    while (k > 0 && ++path[k - 1] == n) path[--k] = 0;
    if (k == 0) break;
  }
  for (double& x : out) x /= z;
  return out;
}

}  // namespace

TEST_CASE("partition function edge cases") {
  Rng rng(1);
  const HmmParams p = testing::random_hmm(3, 4, rng);
  CHECK(hmm_log_partition(p, VirtualEvidence(5, 4)) == doctest::Approx(0.0).epsilon(1e-12));
  const TokenVector x{0, 3, 1, 2};
  CHECK(hmm_log_partition(p, VirtualEvidence::observed(x, 4)) == doctest::Approx(hmm_log_likelihood(p, x)));
  CHECK(hmm_log_likelihood(p, x) == doctest::Approx(std::log(brute_force_sequence_prob(p, x))).epsilon(1e-12));
  CHECK_THROWS_AS(hmm_log_partition(p, VirtualEvidence(5, 3)), InputError);
}

TEST_CASE("partition function matches enumeration and the circuit path") {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(4), v = 2 + rng.below(5), len = 1 + rng.below(5);
    const HmmParams p = testing::random_hmm(n, v, rng, trial % 2 ? 0.3 : 1.0);
    const VirtualEvidence ev = trial % 3 ? testing::random_mixed_evidence(len, v, rng)
                                         : testing::random_potential_evidence(len, v, rng);
    const double fast = hmm_log_partition(p, ev);
    REQUIRE(std::abs(fast - brute_force_log_partition(p, ev)) <= 1e-9);
    REQUIRE(std::abs(fast - evaluate_virtual_evidence(build_hmm_circuit(n, v, len, p), ev)) <= 1e-9);
  }
}

TEST_CASE("hard zeros propagate and a vanishing partition is -inf") {
  const std::vector<double> pi{0.0, kNegInf};
  const std::vector<double> a{0.0, kNegInf, kNegInf, 0.0};
  const std::vector<double> b{0.0, kNegInf, kNegInf, 0.0};
  const HmmParams p(2, 2, pi, a, b);  // always emits token 0
  CHECK(hmm_log_partition(p, VirtualEvidence::observed(TokenVector{0, 0}, 2)) == doctest::Approx(0.0));
  VirtualEvidence ev(2, 2);
  ev.observe(1, 1);
  CHECK(hmm_log_partition(p, ev) == kNegInf);
  CHECK_THROWS_AS(hmm_posteriors(p, ev), ContradictionError);
  Rng rng(0);
  CHECK_THROWS_AS(hmm_sample_conditional(p, ev, 1.0, rng), ContradictionError);
}

TEST_CASE("tiny evidence weights do not underflow the forward pass") {
  Rng rng(4);
  const HmmParams p = testing::random_hmm(3, 3, rng);
  VirtualEvidence ev(4, 3);
  const std::vector<double> w{-800.0, -805.0, -900.0};
  for (std::size_t i = 0; i < 4; ++i) ev.set_potential(i, w);
  VirtualEvidence shifted(4, 3);
  const std::vector<double> ws{0.0, -5.0, -100.0};
  for (std::size_t i = 0; i < 4; ++i) shifted.set_potential(i, ws);
  CHECK(hmm_log_partition(p, ev) == doctest::Approx(hmm_log_partition(p, shifted) - 3200.0).epsilon(1e-12));
}

TEST_CASE("posteriors: single state, symmetry and enumeration") {
  Rng rng(5);
  const HmmParams one = testing::random_hmm(1, 3, rng);
  const HmmPosteriors p1 = hmm_posteriors(one, testing::random_mixed_evidence(4, 3, rng));
  for (double m : p1.state_marginals) CHECK(m == 1.0);

  const HmmPosteriors pu = hmm_posteriors(HmmParams::uniform(4, 3), VirtualEvidence(3, 3));
  for (double m : pu.state_marginals) CHECK(m == doctest::Approx(0.25).epsilon(1e-12));

  for (int trial = 0; trial < 30; ++trial) {
    const HmmParams p = testing::random_hmm(2, 3, rng);
    const VirtualEvidence ev = testing::random_mixed_evidence(3, 3, rng);
    const HmmPosteriors post = hmm_posteriors(p, ev);
    const auto exact = brute_force_state_marginals(p, ev);
    for (std::size_t k = 0; k < exact.size(); ++k) CHECK(std::abs(post.state_marginals[k] - exact[k]) <= 1e-9);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0, f = 0.0;
      for (std::size_t h = 0; h < 2; ++h) {
        s += post.state(i, h);
        double e = 0.0;
        for (std::size_t v = 0; v < 3; ++v) e += post.emission(i, h, v);
        CHECK(e == doctest::Approx(post.state(i, h)).epsilon(1e-9));
        if (i + 1 < 3)
          for (std::size_t g = 0; g < 2; ++g) f += post.transition(i, h, g);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
      if (i + 1 < 3) CHECK(f == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("token marginals sum to one and match the enumerated table") {
  Rng rng(6);
  const HmmParams p = testing::random_hmm(3, 3, rng);
  const PotentialGrid grid = testing::random_grid(3, 3, rng);
  const MaskedSequence state(TokenVector{0, 1, 0}, {1, 0, 1});
  VirtualEvidence ev = make_evidence(state, grid, state.masked_positions());
  const auto marg = hmm_token_marginals(p, ev);
  const auto table = table_marginals(exact_joint_table(p, state, grid));
  for (std::size_t v = 0; v < 3; ++v) {
    CHECK(marg[0 * 3 + v] == doctest::Approx(table[0][v]).epsilon(1e-9));
    CHECK(marg[2 * 3 + v] == doctest::Approx(table[1][v]).epsilon(1e-9));
  }
  CHECK(marg[1 * 3 + 1] == doctest::Approx(1.0));
}

TEST_CASE("conditional sampler: observed positions are fixed and tau=1 matches the exact conditional") {
  Rng rng(7);
  const HmmParams p = testing::random_hmm(3, 4, rng);
  const TokenVector x{1, 3, 0, 2};
  Rng srng(8);
  for (double tau : {1.0, 0.3, 0.05}) CHECK(hmm_sample_conditional(p, VirtualEvidence::observed(x, 4), tau, srng) == x);

  const MaskedSequence state(TokenVector{0, 3, 0, 1}, {1, 0, 1, 0});
  VirtualEvidence ev(4, 4);
  ev.observe(1, 3);
  ev.observe(3, 1);
  const JointTable exact = exact_joint_table(p, state);
  std::vector<TokenVector> samples;
  Rng draw_rng(21);
  for (int s = 0; s < 200000; ++s) {
    const TokenVector y = hmm_sample_conditional(p, ev, 1.0, draw_rng);
    samples.push_back({y[0], y[2]});
  }
  const JointTable emp = empirical_table(exact.positions, 4, samples);
  CHECK(total_variation(exact, emp) <= 0.01);
  // Per-position frequencies within 3 binomial standard errors.
  const auto em = table_marginals(emp), xm = table_marginals(exact);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t v = 0; v < 4; ++v) {
      const double se = std::sqrt(xm[k][v] * (1 - xm[k][v]) / 200000.0);
      CHECK(std::abs(em[k][v] - xm[k][v]) <= 3 * se + 1e-12);
    }
}

TEST_CASE("low temperature with one state approaches the per-position argmax") {
  Rng rng(9);
  const HmmParams p = testing::random_hmm(1, 5, rng);
  const VirtualEvidence ev = testing::random_potential_evidence(6, 5, rng);
  TokenVector argmax(6);
  for (std::size_t i = 0; i < 6; ++i) {
    double best = kNegInf;
    for (std::size_t v = 0; v < 5; ++v) {
      const double s = p.log_b(0, v) + ev.log_weights(i)[v];
      if (s > best) {
        best = s;
        argmax[i] = static_cast<Token>(v);
      }
    }
  }
  int hits = 0;
  for (int s = 0; s < 200; ++s) hits += hmm_sample_conditional(p, ev, 0.01, rng) == argmax;
  CHECK(hits >= 190);
  CHECK_THROWS_AS(hmm_sample_conditional(p, ev, 0.0, rng), InputError);
  CHECK_THROWS_AS(hmm_sample_conditional(p, ev, 1.5, rng), InputError);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(HmmParams(2, 2, {0.0, 0.0}, {std::log(0.5), std::log(0.5), 0.0, kNegInf},
                            {std::log(0.5), std::log(0.5), 0.0, kNegInf}),
                  InputError);
  const double nan = std::nan("");
  CHECK_THROWS_AS(HmmParams(1, 2, {0.0}, {0.0}, {nan, 0.0}), InputError);
  CHECK_THROWS_AS(HmmParams(1, 2, {0.0}, {0.0}, {0.0}), InputError);
}

TEST_CASE("hmm binary roundtrip is bit exact") {
  Rng rng(10);
  const HmmParams p = testing::random_hmm(4, 5, rng);
  std::stringstream buf;
  write_hmm(buf, p);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 8) == "CODDHMM1");
  CHECK(bytes.size() == 8 + 8 + 8 * (4 + 16 + 20));
  std::stringstream in(bytes);
  CHECK(read_hmm(in) == p);
  std::stringstream cut(bytes.substr(0, 30));
  CHECK_THROWS_AS(read_hmm(cut), FormatError);
}

TEST_CASE("flow accumulation adds weighted expected counts") {
  Rng rng(12);
  const HmmParams p = testing::random_hmm(2, 3, rng);
  const VirtualEvidence ev = testing::random_mixed_evidence(4, 3, rng);
  FlowTotals t(2, 3);
  const double lz = hmm_accumulate_flows(p, ev, 2.0, t);
  CHECK(lz == doctest::Approx(hmm_log_partition(p, ev)));
  double init = 0.0, trans = 0.0, emit = 0.0;
  for (double x : t.initial) init += x;
  for (double x : t.transition) trans += x;
  for (double x : t.emission) emit += x;
  CHECK(init == doctest::Approx(2.0));
  CHECK(trans == doctest::Approx(2.0 * 3));
  CHECK(emit == doctest::Approx(2.0 * 4));
}

TEST_CASE("partition time scales linearly in length") {
  Rng rng(13);
  const HmmParams p = testing::random_hmm(64, 16, rng);
  auto median = [&](std::size_t len) {
    const VirtualEvidence ev = testing::random_potential_evidence(len, 16, rng);
    std::vector<double> ts;
    for (int r = 0; r < 11; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      volatile double z = hmm_log_partition(p, ev);
      (void)z;
      ts.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(ts.begin(), ts.begin() + 5, ts.end());
    return ts[5];
  };
  median(128);
  const double t128 = median(128), t256 = median(256), t512 = median(512);
  MESSAGE("partition L=128 " << t128 << " L=256 " << t256 << " L=512 " << t512);
  CHECK(t256 / t128 <= 2.3);
  CHECK(t512 / t256 <= 2.3);
}
