#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "codd/error.h"
#include "codd/harness.h"
#include "codd/log_math.h"
#include "codd/oracle.h"
#include "test_support.h"

using namespace codd;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("exact joint tables: empty, uniform and templates") {
  const HmmParams uni = HmmParams::uniform(2, 3);
  const JointTable none = exact_joint_table(uni, MaskedSequence::observed(TokenVector{0, 1}));
  CHECK(none.size() == 1);
  CHECK(none.probs[0] == 1.0);
  const JointTable flat = exact_joint_table(uni, MaskedSequence::all_masked(2), PotentialGrid::uniform(2, 3));
  for (double p : flat.probs) CHECK(p == doctest::Approx(1.0 / 9));
  const TemplateDistribution d(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}});
  const JointTable t = exact_joint_table(d, MaskedSequence::all_masked(2));
  CHECK(t.prob(TokenVector{0, 2}) == 0.5);
  CHECK(t.prob(TokenVector{1, 3}) == 0.5);
  CHECK(t.prob(TokenVector{0, 3}) == 0.0);
  CHECK_THROWS_AS(exact_joint_table(HmmParams::uniform(1, 10), MaskedSequence::all_masked(7)), BudgetError);
}

TEST_CASE("misspecification gap") {
  const TemplateDistribution d(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}});
  const JointTable t = exact_joint_table(d, MaskedSequence::all_masked(2));
  CHECK(misspec_gap(t, table_marginals(t)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Three equiprobable templates over distinct symbols: KL = ln 3 - 0 = ... by
  // direct enumeration the product puts 1/9 on each of the 3 template cells.
  const TemplateDistribution d3(6, {{{0, 3}, 1.0 / 3}, {{1, 4}, 1.0 / 3}, {{2, 5}, 1.0 / 3}});
  const JointTable t3 = exact_joint_table(d3, MaskedSequence::all_masked(2));
  CHECK(misspec_gap(t3, table_marginals(t3)) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    std::vector<std::vector<double>> rows(3, std::vector<double>(3));
    for (auto& r : rows) {
      double s = 0.0;
      for (double& x : r) s += (x = rng.uniform() + 0.01);
      for (double& x : r) x /= s;
    }
    const JointTable f = product_table({0, 1, 2}, rows);
    CHECK(misspec_gap(f, table_marginals(f)) <= 1e-12);
  }

  std::vector<std::vector<double>> zero{{1.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 1.0, 0.0}};
  CHECK(std::isinf(misspec_gap(t, zero)));
}

TEST_CASE("gap experiment: uniform prior is a no-op, single template has no gap") {
  const TemplateDistribution d(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}});
  const OracleSource src(d);
  const GapReport u = gap_experiment(HmmParams::uniform(3, 4), src, d, 4000, 1);
  CHECK(u.kl_joint_vs_coupled == doctest::Approx(u.kl_joint_vs_factorized).epsilon(1e-9));
  CHECK(u.kl_joint_vs_factorized == doctest::Approx(std::log(2.0)).epsilon(1e-4));
  CHECK(std::abs(u.incoherence_rate_factorized - u.exact_incoherence_factorized) <=
        3 * std::sqrt(0.25 / 4000));
  CHECK(std::abs(u.incoherence_rate_coupled - u.exact_incoherence_coupled) <= 3 * std::sqrt(0.25 / 4000));

  const TemplateDistribution one(4, {{{1, 2}, 1.0}});
  const OracleSource src1(one);
  const GapReport s = gap_experiment(HmmParams::uniform(2, 4), src1, one, 100, 2);
  CHECK(s.kl_joint_vs_factorized <= 1e-4);
  CHECK(s.kl_joint_vs_coupled <= 1e-4);
  const auto j = nlohmann::json::parse(to_json(s));
  CHECK(j.contains("kl_joint_vs_coupled"));
}

TEST_CASE("cll curve bins and the uniform-grid identity") {
  Rng rng(3);
  const HmmParams p = testing::random_hmm(3, 3, rng);
  const UniformSource src(4, 3);
  std::vector<TokenVector> held;
  for (int k = 0; k < 30; ++k) {
    TokenVector x(4);
    for (auto& t : x) t = static_cast<Token>(rng.below(3));
    held.push_back(x);
  }
  const CllCurve c = cll_curve(p, src, held, 10, 4);
  std::size_t total = 0;
  for (const CllBin& b : c.bins) {
    CHECK(b.count > 0);
    CHECK(b.lo >= 0.0);
    CHECK(b.hi <= 1.0);
    total += b.count;
    // Ratios are multiples of 1/4, so they land in bins ending at 0.25, 0.5, 0.75, 1.
    CHECK(std::fmod(b.hi + 1e-9, 0.25) < 1e-6);
  }
  CHECK(total <= 300);

  // With uniform grids the coupled CLL is the prior conditional, so
  // coupled - baseline = log p(x0_masked | obs) - sum_masked log(1/V).
  const TokenVector x{0, 2, 1, 1};
  const MaskedSequence state(x, {1, 0, 1, 0});
  const PotentialGrid g = PotentialGrid::uniform(4, 3);
  const TokenVector comp{0, 1};
  const double coupled = joint_log_prob(p, state, g, comp);
  double marg = 0.0;
  for (Token a = 0; a < 3; ++a)
    for (Token b = 0; b < 3; ++b) marg += brute_force_sequence_prob(p, TokenVector{a, 2, b, 1});
  const double cond = std::log(brute_force_sequence_prob(p, x) / marg);
  CHECK(coupled == doctest::Approx(cond).epsilon(1e-12));

  std::stringstream csv;
  write_cll_csv(csv, c);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "bin_lo,bin_hi,count,mean_cll_baseline,mean_cll_coupled,coupled_minus_baseline");
}

TEST_CASE("corpus generation: frequencies, empty corpus and determinism") {
  CorpusSpec spec;
  spec.vocab = 4;
  spec.length = 2;
  spec.size = 10000;
  spec.seed = 5;
  spec.templates = {{{0, 2}, 0.5}, {{1, 3}, 0.5}};
  const GeneratedCorpus c = gen_corpus(spec);
  REQUIRE(c.summary.template_frequencies.size() == 2);
  CHECK(std::abs(c.summary.template_frequencies[0] - 0.5) <= 0.015);
  CHECK(c.summary.unigram[0][0] + c.summary.unigram[0][1] == doctest::Approx(1.0));

  const auto dir = std::filesystem::temp_directory_path();
  save_corpus(dir / "codd_c1.jsonl", c.entries);
  save_corpus(dir / "codd_c2.jsonl", gen_corpus(spec).entries);
  CHECK(slurp(dir / "codd_c1.jsonl") == slurp(dir / "codd_c2.jsonl"));
  const auto back = load_corpus(dir / "codd_c1.jsonl");
  CHECK(back.size() == 10000);
  CHECK(back[7].tokens == c.entries[7].tokens);

  spec.size = 0;
  const GeneratedCorpus e = gen_corpus(spec);
  save_corpus(dir / "codd_c3.jsonl", e.entries);
  CHECK(load_corpus(dir / "codd_c3.jsonl").empty());

  CorpusSpec markov;
  markov.vocab = 6;
  markov.length = 5;
  markov.size = 100;
  markov.heldout_fraction = 0.2;
  markov.branching = 2;
  const GeneratedCorpus m = gen_corpus(markov);
  CHECK(corpus_sequences(m.entries, "heldout").size() == 20);
  CHECK(corpus_sequences(m.entries, "train").size() == 80);
  for (const char* f : {"codd_c1.jsonl", "codd_c2.jsonl", "codd_c3.jsonl"}) std::filesystem::remove(dir / f);
}

TEST_CASE("bench produces one cell per config with positive timings") {
  Rng rng(6);
  const HmmParams p = testing::random_hmm(4, 4, rng);
  const UniformSource src(8, 4);
  DecodeConfig cfg;
  cfg.length = 8;
  cfg.block_size = 4;
  cfg.steps = 2;
  cfg.gamma = 0.0;
  const std::vector<DecodeConfig> cfgs{cfg};
  const auto cells = bench_overhead(p, src, cfgs, 5, 1);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].baseline_mean_s > 0.0);
  CHECK(cells[0].reps == 5);
  std::stringstream csv;
  write_bench_csv(csv, cells);
  std::string header;
  std::getline(csv, header);
  CHECK(header.find("overhead") != std::string::npos);
}

TEST_CASE("oracle helpers") {
  JointTable t;
  t.positions = {0, 2};
  t.vocab = 3;
  t.probs.assign(9, 0.0);
  CHECK(t.index_of(TokenVector{1, 2}) == 5);
  CHECK(t.completion(5) == TokenVector{1, 2});
  CHECK_THROWS_AS(t.index_of(TokenVector{3, 0}), InputError);
  Rng rng(7);
  const HmmParams p = testing::random_hmm(2, 2, rng);
  VirtualEvidence ev(3, 2);
  CHECK(brute_force_log_partition(p, ev) == doctest::Approx(0.0).epsilon(1e-12));
}
