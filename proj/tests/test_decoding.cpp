#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "codd/decoding.h"
#include "codd/error.h"
#include "codd/log_math.h"
#include "test_support.h"

using namespace codd;

namespace {

PotentialGrid grid_from_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> lt;
  for (const auto& r : rows)
    for (double p : r) lt.push_back(std::log(p));
  return PotentialGrid(rows.size(), rows.front().size(), lt);
}

// HMM that reproduces the two templates (0,2) and (1,3) exactly.
HmmParams two_template_prior() {
  const double z = kNegInf, h = std::log(0.5);
  const std::vector<double> pi{h, h, z, z};
  std::vector<double> a(16, z), b(16, z);
  a[0 * 4 + 2] = 0.0;
  a[1 * 4 + 3] = 0.0;
  a[2 * 4 + 2] = 0.0;
  a[3 * 4 + 3] = 0.0;
  for (std::size_t s = 0; s < 4; ++s) b[s * 4 + s] = 0.0;
  return HmmParams(4, 4, pi, a, b);
}

// Source whose rows depend on the observed tokens, so decoding paths matter.
class ShiftSource final : public PotentialSource {
 public:
  ShiftSource(std::size_t length, std::size_t vocab) : length_(length), vocab_(vocab) {}
  std::size_t length() const override { return length_; }
  std::size_t vocab_size() const override { return vocab_; }
  PotentialGrid potentials(const MaskedSequence& state) const override {
    std::vector<double> lt(length_ * vocab_);
    for (std::size_t i = 0; i < length_; ++i) {
      const std::size_t prev = i > 0 && !state.masked(i - 1) ? static_cast<std::size_t>(state.token(i - 1)) : i;
      for (std::size_t v = 0; v < vocab_; ++v)
        lt[i * vocab_ + v] = -0.7 * static_cast<double>((v + vocab_ - (prev + 1) % vocab_) % vocab_) -
                             0.01 * static_cast<double>(i % 3) * static_cast<double>(v);
    }
    return PotentialGrid::from_log_potentials(length_, vocab_, std::move(lt));
  }

 private:
  std::size_t length_, vocab_;
};

void check_trace(const DecodeResult& r, const DecodeConfig& cfg, bool block_mode, std::span<const Token> prompt) {
  std::vector<char> done(cfg.length, 0);
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    done[i] = 1;
    CHECK(r.tokens[i] == prompt[i]);
  }
  std::size_t step_in_block = 0, last_block = 0;
  for (const StepTrace& t : r.trace) {
    if (t.block != last_block) step_in_block = 0;
    last_block = t.block;
    const std::size_t lo = block_mode ? t.block * cfg.block_size : 0;
    const std::size_t span = block_mode ? cfg.block_size : cfg.length;
    std::size_t remaining = 0;
    for (std::size_t i = lo; i < lo + span; ++i) remaining += !done[i];
    CHECK(t.mask_ratio == doctest::Approx(static_cast<double>(remaining) / static_cast<double>(span)));
    CHECK(t.positions.size() == plan_unmask_counts(remaining, cfg.steps - step_in_block));
    CHECK(t.pc_active == pc_gate(t.mask_ratio, cfg.gamma));
    for (std::size_t k = 0; k < t.positions.size(); ++k) {
      CHECK_FALSE(done[t.positions[k]]);
      done[t.positions[k]] = 1;
      CHECK(r.tokens[t.positions[k]] == t.tokens[k]);
    }
    ++step_in_block;
  }
  for (char d : done) CHECK(d);
}

}  // namespace

TEST_CASE("select_positions examples") {
  Rng rng(1);
  const std::vector<std::size_t> both{0, 1};
  CHECK(select_positions(grid_from_rows({{0.6, 0.3, 0.1}, {0.5, 0.45, 0.05}}), both, 1, Heuristic::margin, rng) ==
        std::vector<std::size_t>{0});
  CHECK(select_positions(grid_from_rows({{0.9, 0.05, 0.05}, {0.4, 0.3, 0.3}}), both, 1, Heuristic::entropy, rng) ==
        std::vector<std::size_t>{0});
  CHECK(select_positions(grid_from_rows({{0.4, 0.3, 0.3}, {0.9, 0.05, 0.05}}), both, 1, Heuristic::entropy, rng) ==
        std::vector<std::size_t>{1});
  CHECK(select_positions(grid_from_rows({{0.5, 0.5}, {0.5, 0.5}}), both, 1, Heuristic::confidence, rng) ==
        std::vector<std::size_t>{0});
  CHECK_THROWS_AS(select_positions(PotentialGrid::uniform(2, 2), both, 3, Heuristic::confidence, rng), InputError);
  const std::vector<std::size_t> many{0, 1, 2, 3, 4, 5};
  const auto pick = select_positions(PotentialGrid::uniform(6, 2), many, 4, Heuristic::random, rng);
  CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 4);
}

TEST_CASE("unmask schedule") {
  auto run = [](std::size_t masked, std::size_t steps) {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t k = plan_unmask_counts(masked, steps - s);
      out.push_back(k);
      masked -= k;
    }
    CHECK(masked == 0);
    return out;
  };
  CHECK(run(32, 8) == std::vector<std::size_t>(8, 4));
  CHECK(run(10, 4) == std::vector<std::size_t>{3, 3, 2, 2});
  CHECK(run(5, 8) == std::vector<std::size_t>{1, 1, 1, 1, 1, 0, 0, 0});
  CHECK_THROWS_AS(plan_unmask_counts(3, 0), InputError);
}

TEST_CASE("window cover examples") {
  const std::vector<std::size_t> a{3, 4, 5}, b{2, 30}, c{0, 7, 8}, d{1, 2, 20, 21};
  CHECK(cover_windows(a, 8, 32) == std::vector<Window>{{3, 11}});
  CHECK(cover_windows(b, 8, 32) == std::vector<Window>{{2, 10}, {24, 32}});
  CHECK(cover_windows(c, 8, 32) == std::vector<Window>{{0, 8}, {8, 16}});
  CHECK(cover_windows(d, 4, 32).size() == 2);
  CHECK(cover_windows({}, 8, 32).empty());
}

TEST_CASE("block decoding invariants and baseline containment") {
  Rng rng(2);
  const HmmParams prior = testing::random_hmm(4, 5, rng);
  const ShiftSource src(12, 5);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    DecodeConfig cfg;
    cfg.length = 12;
    cfg.block_size = 4;
    cfg.steps = 1 + seed % 4;
    cfg.gamma = 0.6;
    cfg.tau = 0.5;
    cfg.sampler = static_cast<SamplerKind>(seed % 3);
    cfg.heuristic = seed % 2 ? Heuristic::confidence : Heuristic::random;
    cfg.seed = seed;
    const TokenVector prompt = seed % 3 == 0 ? TokenVector{1, 2} : TokenVector{};
    check_trace(decode_block(&prior, src, cfg, prompt), cfg, true, prompt);
    cfg.gamma = 0.0;
    const DecodeResult off = decode_block(&prior, src, cfg, prompt);
    const DecodeResult base = decode_block(nullptr, src, cfg, prompt);
    CHECK(off.tokens == base.tokens);
    for (const StepTrace& t : off.trace) CHECK_FALSE(t.pc_active);
  }
}

TEST_CASE("full decoding invariants, baseline containment and windowing") {
  Rng rng(3);
  const HmmParams prior = testing::random_hmm(3, 4, rng);
  const ShiftSource src(16, 4);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    DecodeConfig cfg;
    cfg.length = 16;
    cfg.window = 4 + seed % 5;
    cfg.steps = 2 + seed % 5;
    cfg.gamma = 0.7;
    cfg.tau = 0.3;
    cfg.sampler = static_cast<SamplerKind>(seed % 3);
    cfg.seed = seed;
    const DecodeResult r = decode_full(&prior, src, cfg);
    check_trace(r, cfg, false, {});
    for (const StepTrace& t : r.trace) {
      CHECK(t.windows == cover_windows(t.positions, cfg.window, cfg.length));
      for (const Window& w : t.windows) CHECK(w.second - w.first == cfg.window);
    }
    cfg.gamma = 0.0;
    CHECK(decode_full(&prior, src, cfg).tokens == decode_full(nullptr, src, cfg).tokens);
  }
}

TEST_CASE("full decoding with W = L equals a single block") {
  Rng rng(4);
  const HmmParams prior = testing::random_hmm(3, 4, rng);
  const ShiftSource src(8, 4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DecodeConfig cfg;
    cfg.length = 8;
    cfg.block_size = 8;
    cfg.window = 8;
    cfg.steps = 3;
    cfg.gamma = 0.9;
    cfg.sampler = static_cast<SamplerKind>(seed % 3);
    cfg.heuristic = seed % 2 ? Heuristic::entropy : Heuristic::random;
    cfg.seed = seed;
    const DecodeResult a = decode_full(&prior, src, cfg), b = decode_block(&prior, src, cfg);
    CHECK(a.tokens == b.tokens);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t k = 0; k < a.trace.size(); ++k) {
      CHECK(a.trace[k].positions == b.trace[k].positions);
      CHECK(a.trace[k].windows == b.trace[k].windows);
      CHECK(a.trace[k].pc_active == b.trace[k].pc_active);
    }
  }
}

TEST_CASE("two far-apart target clusters give two windows") {
  // Source strongly prefers positions 1,2 and 13,14 under confidence.
  class Clustered final : public PotentialSource {
   public:
    std::size_t length() const override { return 16; }
    std::size_t vocab_size() const override { return 2; }
    PotentialGrid potentials(const MaskedSequence&) const override {
      std::vector<double> lt;
      for (std::size_t i = 0; i < 16; ++i) {
        const double p = (i == 1 || i == 2 || i == 13 || i == 14) ? 0.99 : 0.6;
        lt.push_back(std::log(p));
        lt.push_back(std::log(1 - p));
      }
      return PotentialGrid(16, 2, lt);
    }
  } src;
  DecodeConfig cfg;
  cfg.length = 16;
  cfg.window = 4;
  cfg.steps = 4;
  cfg.gamma = 1.0;
  const HmmParams prior = HmmParams::uniform(2, 2);
  const DecodeResult r = decode_full(&prior, src, cfg);
  CHECK(r.trace[0].positions == std::vector<std::size_t>{1, 2, 13, 14});
  CHECK(r.trace[0].windows == std::vector<Window>{{1, 5}, {12, 16}});
}

TEST_CASE("one-step coupled block decoding avoids cross-mode pairs") {
  const HmmParams prior = two_template_prior();
  const OracleSource src(TemplateDistribution(4, {{{0, 2}, 0.5}, {{1, 3}, 0.5}}));
  const TemplateDistribution& dist = src.distribution();
  DecodeConfig cfg;
  cfg.length = 2;
  cfg.block_size = 2;
  cfg.steps = 1;
  cfg.gamma = 1.0;
  std::size_t bad_coupled = 0, bad_base = 0;
  const std::size_t n = 4000;
  for (std::uint64_t s = 0; s < n; ++s) {
    cfg.seed = s;
    bad_coupled += !dist.contains(decode_block(&prior, src, cfg).tokens);
    bad_base += !dist.contains(decode_block(nullptr, src, cfg).tokens);
  }
  CHECK(static_cast<double>(bad_coupled) / n <= 0.05);
  CHECK(std::abs(static_cast<double>(bad_base) / n - 0.5) <= 0.03);
}

TEST_CASE("contradictions fall back to factorized sampling") {
  // The prior can only emit token 0, but the observed prompt is token 1.
  const std::vector<double> pi{0.0}, a{0.0}, b{0.0, kNegInf};
  const HmmParams prior(1, 2, pi, a, b);
  const UniformSource src(4, 2);
  DecodeConfig cfg;
  cfg.length = 4;
  cfg.block_size = 4;
  cfg.steps = 3;
  cfg.gamma = 1.0;
  const TokenVector prompt{1};
  const DecodeResult r = decode_block(&prior, src, cfg, prompt);
  for (const StepTrace& t : r.trace) {
    CHECK(t.pc_active);
    CHECK(t.fallback);
  }
  check_trace(r, cfg, true, prompt);
}

TEST_CASE("decode configuration validation") {
  const UniformSource src(8, 2);
  DecodeConfig cfg;
  cfg.length = 8;
  cfg.block_size = 3;
  CHECK_THROWS_AS(decode_block(nullptr, src, cfg), InputError);
  cfg.block_size = 4;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(decode_block(nullptr, src, cfg), InputError);
  cfg.tau = 0.5;
  cfg.window = 9;
  CHECK_THROWS_AS(decode_full(nullptr, src, cfg), InputError);
  cfg.window = 8;
  cfg.length = 7;
  CHECK_THROWS_AS(decode_full(nullptr, src, cfg), InputError);
  cfg.length = 8;
  const TokenVector bad_prompt{5};
  CHECK_THROWS_AS(decode_full(nullptr, src, cfg, bad_prompt), InputError);
}

TEST_CASE("trace serializes one JSON object per step") {
  const UniformSource src(6, 3);
  DecodeConfig cfg;
  cfg.length = 6;
  cfg.window = 3;
  cfg.steps = 2;
  const DecodeResult r = decode_full(nullptr, src, cfg);
  std::stringstream out;
  write_trace_jsonl(out, r.trace);
  std::string line;
  std::size_t n = 0;
  while (std::getline(out, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("mask_ratio"));
    CHECK(j.contains("pc_active"));
    CHECK(j.at("positions").size() == j.at("tokens").size());
    CHECK(j.at("windows").at(0).size() == 2);
    ++n;
  }
  CHECK(n == 2);
}
