#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "codd/error.h"
#include "codd/log_math.h"
#include "codd/oracle.h"
#include "codd/train.h"
#include "test_support.h"

using namespace codd;

namespace {

std::vector<TokenVector> template_corpus(const TemplateDistribution& d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenVector> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(d.sample(rng));
  return out;
}

double joint_nll(const HmmParams& prior, const TemplateDistribution& d) {
  double nll = 0.0;
  for (const Template& t : d.templates()) nll -= t.prob * hmm_log_likelihood(prior, t.tokens);
  return nll;
}

std::vector<TrainItem> random_items(std::size_t count, std::size_t len, std::size_t v, Rng& rng) {
  std::vector<TrainItem> items;
  for (std::size_t k = 0; k < count; ++k) {
    TokenVector x0(len);
    for (auto& t : x0) t = static_cast<Token>(rng.below(v));
    NoiseDraw d = draw_noise(len, rng);
    d.mask[rng.below(len)] = 1;
    items.push_back({x0, MaskedSequence(x0, d.mask), testing::random_grid(len, v, rng), d.t});
  }
  return items;
}

void check_rows(std::span<const double> log_probs, std::size_t width, double floor) {
  for (std::size_t lo = 0; lo < log_probs.size(); lo += width) {
    double s = 0.0;
    for (std::size_t k = 0; k < width; ++k) {
      const double p = std::exp(log_probs[lo + k]);
      CHECK(p >= floor * (1 - 1e-9));
      s += p;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

}  // namespace

TEST_CASE("corruption masks independently at rate t") {
  Rng rng(1);
  const TokenVector x(10000, 1);
  CHECK(corrupt(x, 0.0, rng).masked_count() == 0);
  CHECK(corrupt(x, 1.0, rng).masked_count() == 10000);
  const std::size_t half = corrupt(x, 0.5, rng).masked_count();
  CHECK(half >= 4850);
  CHECK(half <= 5150);
  CHECK_THROWS_AS(corrupt(x, 1.5, rng), InputError);
  for (int k = 0; k < 1000; ++k) {
    const NoiseDraw d = draw_noise(3, rng);
    CHECK(d.t > 0.0);
    CHECK(d.t <= 1.0);
  }
}

TEST_CASE("noise weights") {
  TrainConfig c;
  CHECK(noise_weight(c, 0.5) == doctest::Approx(2.0));
  CHECK(noise_weight(c, 0.01) == doctest::Approx(20.0));
  c.weight_mode = WeightMode::uniform;
  CHECK(noise_weight(c, 0.01) == 1.0);
  CHECK(parse_optimizer("ascent") == OptimizerMode::ascent);
  CHECK_THROWS_AS(parse_weight_mode("linear"), InputError);
}

TEST_CASE("objective examples") {
  Rng rng(2);
  const HmmParams p = testing::random_hmm(2, 3, rng);
  TrainConfig cfg;
  cfg.window_length = 3;

  const TokenVector x0{0, 2, 1};
  std::vector<TrainItem> observed{{x0, MaskedSequence::observed(x0), PotentialGrid::uniform(3, 3), 0.3}};
  CHECK(objective(p, observed, cfg).value == 0.0);

  // Single item against a hand computation through the enumeration oracle.
  const MaskedSequence state(x0, {1, 0, 1});
  const PotentialGrid g = testing::random_grid(3, 3, rng);
  const std::vector<TrainItem> one{{x0, state, g, 0.4}};
  double z = 0.0;
  for (Token a = 0; a < 3; ++a)
    for (Token b = 0; b < 3; ++b)
      z += brute_force_sequence_prob(p, TokenVector{a, 2, b}) *
           std::exp(g.log_theta(0, static_cast<std::size_t>(a)) + g.log_theta(2, static_cast<std::size_t>(b)));
  const double expected = std::log(brute_force_sequence_prob(p, x0)) + g.log_theta(0, 0) + g.log_theta(2, 1) - std::log(z);
  CHECK(objective(p, one, cfg).value == doctest::Approx(expected / 0.4).epsilon(1e-10));

  // Uniform grids: the weighted prior conditional log-likelihood.
  const std::vector<TrainItem> uni{{x0, state, PotentialGrid::uniform(3, 3), 0.4}};
  double marg = 0.0;
  for (Token a = 0; a < 3; ++a)
    for (Token b = 0; b < 3; ++b) marg += brute_force_sequence_prob(p, TokenVector{a, 2, b});
  CHECK(objective(p, uni, cfg).value ==
        doctest::Approx(std::log(brute_force_sequence_prob(p, x0) / marg) / 0.4).epsilon(1e-10));
}

TEST_CASE("contradictory items are skipped, impossible targets abort") {
  const std::vector<double> pi{0.0}, a{0.0}, b{0.0, kNegInf};  // always token 0
  const HmmParams p(1, 2, pi, a, b);
  TrainConfig cfg;
  cfg.window_length = 2;
  const TokenVector bad_obs{1, 0};
  const std::vector<TrainItem> skip{{bad_obs, MaskedSequence(bad_obs, {0, 1}), PotentialGrid::uniform(2, 2), 0.5}};
  const ObjectiveValue v = objective(p, skip, cfg);
  CHECK(v.skipped == 1);
  CHECK(v.value == 0.0);

  const TokenVector bad_target{0, 1};
  const std::vector<TrainItem> abort{
      {bad_target, MaskedSequence(bad_target, {0, 1}), PotentialGrid::uniform(2, 2), 0.5}};
  CHECK_THROWS_AS(objective(p, abort, cfg), TrainingError);
}

TEST_CASE("ascent gradient matches central finite differences") {
  Rng rng(3);
  TrainConfig cfg;
  cfg.window_length = 3;
  const double h = 1e-5;
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const HmmParams p = testing::random_hmm(2, 3, rng);
    const auto items = random_items(4, 3, 3, rng);
    const PriorGradient g = objective_gradient(p, items, cfg);
    CHECK(g.objective.value == doctest::Approx(objective(p, items, cfg).value).epsilon(1e-12));
    std::vector<double> lpi(p.log_pi().begin(), p.log_pi().end()), la(p.log_a().begin(), p.log_a().end()),
        lb(p.log_b().begin(), p.log_b().end());
    auto probe = [&](std::vector<double>& block, std::size_t k) {
      const double keep = block[k];
      block[k] = keep + h;
      const double up = objective(prior_from_logits(2, 3, lpi, la, lb), items, cfg).value;
      block[k] = keep - h;
      const double down = objective(prior_from_logits(2, 3, lpi, la, lb), items, cfg).value;
      block[k] = keep;
      return (up - down) / (2 * h);
    };
    auto compare = [&](std::vector<double>& block, const std::vector<double>& grad) {
      for (std::size_t k = 0; k < block.size(); ++k) {
        const double fd = probe(block, k);
        const double rel = std::abs(grad[k] - fd) / std::max(std::abs(fd), 1e-300);
        if (std::abs(fd) > 1e-6) worst = std::max(worst, rel);
        CHECK(std::abs(grad[k] - fd) <= 1e-4 * std::abs(fd) + 1e-9);
      }
    };
    compare(lpi, g.initial);
    compare(la, g.transition);
    compare(lb, g.emission);
  }
  MESSAGE("worst relative gradient error " << worst);
}

TEST_CASE("training on a single template drives its NLL to zero") {
  const TemplateDistribution d(3, {{{2, 0, 1}, 1.0}});
  const auto data = template_corpus(d, 50, 1);
  const UniformSource src(3, 3);
  TrainConfig cfg;
  cfg.window_length = 3;
  cfg.num_states = 3;
  cfg.epochs = 50;
  cfg.param_floor = 1e-8;
  Rng rng(4);
  const TrainResult r = train_prior(data, src, cfg, rng);
  CHECK(joint_nll(r.prior, d) <= 1e-3);
}

TEST_CASE("two-template training: NLL, monotone EM, validity and determinism") {
  const TemplateDistribution d(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}});
  const auto data = template_corpus(d, 200, 2);
  const UniformSource src(2, 4);
  TrainConfig cfg;
  cfg.window_length = 2;
  cfg.num_states = 8;
  cfg.epochs = 100;
  cfg.weight_mode = WeightMode::uniform;
  Rng r1(5), r2(5);
  const TrainResult a = train_prior(data, src, cfg, r1);
  const TrainResult b = train_prior(data, src, cfg, r2);
  CHECK(std::abs(joint_nll(a.prior, d) - std::log(2.0)) <= 0.05);
  CHECK_FALSE(a.em_fallback);
  for (std::size_t e = 1; e < a.history.size(); ++e) CHECK(a.history[e].objective >= a.history[e - 1].objective - 1e-7);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].objective == b.history[e].objective);
  CHECK(a.prior == b.prior);
  check_rows(a.prior.log_pi(), 8, cfg.param_floor);
  check_rows(a.prior.log_a(), 8, cfg.param_floor);
  check_rows(a.prior.log_b(), 4, cfg.param_floor);
}

TEST_CASE("ascent mode improves the objective substantially") {
  const TemplateDistribution d(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}});
  const auto data = template_corpus(d, 200, 3);
  const UniformSource src(2, 4);
  TrainConfig cfg;
  cfg.window_length = 2;
  cfg.num_states = 8;
  cfg.epochs = 40;
  cfg.optimizer = OptimizerMode::ascent;
  cfg.batch_size = 32;
  Rng rng(6);
  const TrainResult r = train_prior(data, src, cfg, rng);
  CHECK(r.history.back().objective - r.history.front().objective >= 0.5);
  check_rows(r.prior.log_b(), 4, cfg.param_floor);
}

TEST_CASE("multithreaded accumulation matches single-threaded") {
  Rng rng(7);
  const HmmParams p = testing::random_hmm(3, 3, rng);
  const auto items = random_items(101, 4, 3, rng);
  TrainConfig cfg;
  cfg.window_length = 4;
  const double single = objective(p, items, cfg).value;
  cfg.threads = 4;
  CHECK(objective(p, items, cfg).value == doctest::Approx(single).epsilon(1e-12));
  cfg.num_states = 3;
  cfg.epochs = 3;
  const TrainResult par = train_prior_on_items(items, cfg, p);
  cfg.threads = 1;
  const TrainResult ser = train_prior_on_items(items, cfg, p);
  for (std::size_t e = 0; e < ser.history.size(); ++e)
    CHECK(std::abs(par.history[e].objective - ser.history[e].objective) <= 1e-6);
}

TEST_CASE("precomputed potentials: zero noise, determinism and pooled marginals") {
  const TemplateDistribution d(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}});
  const OracleSource src(d);
  const auto data = template_corpus(d, 20, 8);
  Rng r0(1);
  const PrecomputedPotentials zero = precompute_potentials(data, src, 1, r0, 0.0);
  for (std::size_t k = 0; k < zero.records.size(); ++k)
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(zero.records[k].grid.probabilities(i)[static_cast<std::size_t>(data[k][i])] > 0.9999);

  Rng ra(9), rb(9);
  const auto pa = precompute_potentials(data, src, 2, ra), pb = precompute_potentials(data, src, 2, rb);
  std::stringstream sa, sb;
  write_potentials(sa, 2, 4, pa.records);
  write_potentials(sb, 2, 4, pb.records);
  CHECK(sa.str() == sb.str());
  CHECK(pa.noise_levels == pb.noise_levels);

  const auto many = template_corpus(d, 500, 10);
  Rng rm(11);
  const auto pm = precompute_potentials(many, src, 8, rm);
  std::vector<std::vector<double>> pooled(2, std::vector<double>(4, 0.0));
  std::vector<double> count(2, 0.0);
  for (const PotentialRecord& r : pm.records)
    for (std::size_t i = 0; i < 2; ++i)
      if (r.state.masked(i)) {
        const auto row = r.grid.probabilities(i);
        for (std::size_t v = 0; v < 4; ++v) pooled[i][v] += row[v];
        count[i] += 1;
      }
  for (std::size_t i = 0; i < 2; ++i) {
    double tv = 0.0;
    for (std::size_t v = 0; v < 4; ++v) {
      const double truth = (i == 0 ? (v == 0 || v == 1) : (v == 2 || v == 3)) ? 0.5 : 0.0;
      tv += std::abs(pooled[i][v] / count[i] - truth);
    }
    CHECK(0.5 * tv <= 0.02);
  }
}

TEST_CASE("items from records and history csv") {
  Rng rng(12);
  std::vector<PotentialRecord> recs;
  const TokenVector x{1, 0};
  recs.push_back({MaskedSequence(x, {1, 0}), PotentialGrid::uniform(2, 2), x});
  const auto items = items_from_records(recs, {});
  CHECK(items[0].t == doctest::Approx(0.5));
  recs.push_back({MaskedSequence(x, {1, 1}), PotentialGrid::uniform(2, 2), std::nullopt});
  CHECK_THROWS_AS(items_from_records(recs, {}), InputError);

  const auto path = std::filesystem::temp_directory_path() / "codd_history_test.csv";
  const std::vector<EpochRecord> h{{0, -1.5, 0, 0.1}, {1, -1.25, 2, 0.2}};
  save_history_csv(path, h);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == "epoch,objective,skipped_items,wall_ms");
  CHECK(line.rfind("0,-1.5,0,", 0) == 0);
  std::filesystem::remove(path);
}
