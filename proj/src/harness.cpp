#include "codd/harness.h"

#include <chrono>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "codd/error.h"
#include "codd/inference.h"
#include "codd/oracle.h"
#include "codd/rng.h"
#include "codd/train.h"

namespace codd {

namespace {

enum StreamKey : std::uint64_t { kGapFactorized = 21, kGapCoupled = 22, kCllDraw = 23, kCorpusStream = 24 };

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sd_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

double incoherent_mass(const JointTable& table, const TemplateDistribution& dist) {
  double coherent = 0.0;
  for (std::size_t idx = 0; idx < table.size(); ++idx)
    if (dist.contains(table.completion(idx))) coherent += table.probs[idx];
  return std::max(0.0, 1.0 - coherent);
}

}  // namespace

GapReport gap_experiment(const HmmParams& prior, const PotentialSource& source, const TemplateDistribution& dist,
                         std::size_t samples, std::uint64_t seed) {
  const std::size_t len = dist.length();
  if (source.length() != len || source.vocab_size() != dist.vocab_size() || prior.vocab_size() != dist.vocab_size())
    throw InputError("gap_experiment: prior, source and distribution shapes differ");
  const MaskedSequence state = MaskedSequence::all_masked(len);
  const PotentialGrid grid = source.potentials(state);
  const JointTable data = exact_joint_table(dist, state);
  const JointTable factorized = factorized_table(grid, state);
  const JointTable coupled = exact_joint_table(prior, state, grid);

  GapReport r;
  r.description = "V=" + std::to_string(dist.vocab_size()) + " L=" + std::to_string(len) +
                  " templates=" + std::to_string(dist.templates().size()) +
                  " N=" + std::to_string(prior.num_states());
  r.kl_joint_vs_factorized = kl_divergence(data, factorized);
  r.kl_joint_vs_coupled = kl_divergence(data, coupled);
  r.exact_incoherence_factorized = incoherent_mass(factorized, dist);
  r.exact_incoherence_coupled = incoherent_mass(coupled, dist);
  r.samples = samples;

  const std::vector<std::size_t> all = state.masked_positions();
  Rng frng = Rng::derive(seed, {kGapFactorized});
  Rng crng = Rng::derive(seed, {kGapCoupled});
  std::size_t bad_f = 0, bad_c = 0;
  TokenVector x(len);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < len; ++i) x[i] = sample_factorized_token(grid, i, 1.0, frng);
    if (!dist.contains(x)) ++bad_f;
    if (!dist.contains(sample_joint_latent(prior, state, grid, all, 1.0, crng))) ++bad_c;
  }
  if (samples > 0) {
    r.incoherence_rate_factorized = static_cast<double>(bad_f) / static_cast<double>(samples);
    r.incoherence_rate_coupled = static_cast<double>(bad_c) / static_cast<double>(samples);
  }
  return r;
}

CllCurve cll_curve(const HmmParams& prior, const PotentialSource& source, std::span<const TokenVector> heldout,
                   std::size_t draws_per_sequence, std::uint64_t seed, double bin_width) {
  if (!(bin_width > 0.0 && bin_width <= 1.0)) throw InputError("bin width must lie in (0, 1]");
  const std::size_t nbins = static_cast<std::size_t>(std::ceil(1.0 / bin_width - 1e-9));
  std::vector<double> sum_b(nbins, 0.0), sum_c(nbins, 0.0);
  std::vector<std::size_t> counts(nbins, 0);
  for (std::size_t s = 0; s < heldout.size(); ++s) {
    const TokenVector& x0 = heldout[s];
    if (x0.size() != source.length())
      throw InputError("held-out sequence " + std::to_string(s) + " does not match the source length");
    for (std::size_t d = 0; d < draws_per_sequence; ++d) {
      Rng rng = Rng::derive(seed, {kCllDraw, s, d});
      const NoiseDraw noise = draw_noise(x0.size(), rng);
      const MaskedSequence state(x0, noise.mask);
      const auto masked = state.masked_positions();
      if (masked.empty()) continue;
      const PotentialGrid grid = source.potentials(state);
      double baseline = 0.0;
      TokenVector completion;
      for (std::size_t p : masked) {
        baseline += grid.log_theta(p, static_cast<std::size_t>(x0[p]));
        completion.push_back(x0[p]);
      }
      const double coupled = joint_log_prob(prior, state, grid, completion);
      // Bins are (lo, hi]; a ratio sitting on an edge goes to the lower bin.
      const double ratio = state.mask_ratio();
      std::size_t b = static_cast<std::size_t>(std::ceil(ratio / bin_width - 1e-9));
      b = std::min(std::max<std::size_t>(b, 1), nbins) - 1;
      sum_b[b] += baseline;
      sum_c[b] += coupled;
      ++counts[b];
    }
  }
  CllCurve curve;
  curve.bin_width = bin_width;
  for (std::size_t b = 0; b < nbins; ++b) {
    if (counts[b] == 0) continue;
    CllBin bin;
    bin.lo = static_cast<double>(b) * bin_width;
    bin.hi = std::min(1.0, static_cast<double>(b + 1) * bin_width);
    bin.count = counts[b];
    bin.mean_baseline = sum_b[b] / static_cast<double>(counts[b]);
    bin.mean_coupled = sum_c[b] / static_cast<double>(counts[b]);
    if (!curve.crossover && bin.mean_coupled < bin.mean_baseline) curve.crossover = bin.lo;
    curve.bins.push_back(bin);
  }
  return curve;
}

std::vector<BenchCell> bench_overhead(const HmmParams& prior, const PotentialSource& source,
                                      std::span<const DecodeConfig> configs, std::size_t reps, std::size_t warmup) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchCell> cells;
  for (const DecodeConfig& cfg : configs) {
    DecodeConfig base = cfg;
    base.gamma = 0.0;
    auto time_one = [&](const DecodeConfig& c, std::uint64_t seed) {
      DecodeConfig run = c;
      run.seed = seed;
      const auto t0 = clock::now();
      const DecodeResult r = decode_block(&prior, source, run);
      const double s = std::chrono::duration<double>(clock::now() - t0).count();
      if (r.tokens.size() != c.length) throw Error("bench: decode returned the wrong length");
      return s;
    };
    for (std::size_t w = 0; w < warmup; ++w) {
      time_one(base, cfg.seed + w);
      time_one(cfg, cfg.seed + w);
    }
    std::vector<double> tb, tc;
    for (std::size_t r = 0; r < reps; ++r) {
      tb.push_back(time_one(base, cfg.seed + r));
      tc.push_back(time_one(cfg, cfg.seed + r));
    }
    BenchCell cell;
    cell.label = std::string(to_string(cfg.sampler)) + "_L" + std::to_string(cfg.length) + "_Lb" +
                 std::to_string(cfg.block_size) + "_n" + std::to_string(cfg.steps) + "_g" + std::to_string(cfg.gamma);
    cell.config = cfg;
    cell.reps = reps;
    cell.baseline_mean_s = mean_of(tb);
    cell.baseline_sd_s = sd_of(tb);
    cell.coupled_mean_s = mean_of(tc);
    cell.coupled_sd_s = sd_of(tc);
    cell.overhead = cell.baseline_mean_s > 0.0 ? cell.coupled_mean_s / cell.baseline_mean_s - 1.0 : 0.0;
    cells.push_back(cell);
  }
  return cells;
}

GeneratedCorpus gen_corpus(const CorpusSpec& spec) {
  if (spec.vocab < 1 || spec.length < 1) throw InputError("corpus spec needs positive vocab and length");
  if (!(spec.heldout_fraction >= 0.0 && spec.heldout_fraction <= 1.0))
    throw InputError("heldout fraction must lie in [0, 1]");
  Rng rng = Rng::derive(spec.seed, {kCorpusStream});
  std::optional<TemplateDistribution> dist;
  // Sparse chain: start token uniform, each token has `branching` successors.
  std::vector<std::vector<std::size_t>> successors;
  std::vector<std::vector<double>> weights;
  if (!spec.templates.empty()) {
    dist.emplace(spec.vocab, spec.templates);
    if (dist->length() != spec.length) throw InputError("template length does not match the corpus length");
  } else {
    if (spec.branching < 1 || spec.branching > spec.vocab) throw InputError("branching must lie in [1, vocab]");
    successors.resize(spec.vocab);
    weights.resize(spec.vocab);
    for (std::size_t v = 0; v < spec.vocab; ++v) {
      std::vector<std::size_t> pool(spec.vocab);
      for (std::size_t k = 0; k < spec.vocab; ++k) pool[k] = k;
      for (std::size_t k = 0; k < spec.branching; ++k) {
        std::swap(pool[k], pool[k + rng.below(spec.vocab - k)]);
        successors[v].push_back(pool[k]);
        weights[v].push_back(rng.gamma(1.0));
      }
    }
  }

  GeneratedCorpus out;
  out.summary.size = spec.size;
  out.summary.unigram.assign(spec.length, std::vector<double>(spec.vocab, 0.0));
  if (dist) out.summary.template_frequencies.assign(dist->templates().size(), 0.0);
  const auto heldout = static_cast<std::size_t>(std::llround(spec.heldout_fraction * static_cast<double>(spec.size)));
  for (std::size_t s = 0; s < spec.size; ++s) {
    CorpusEntry e;
    e.id = "seq" + std::to_string(s);
    e.split = s < spec.size - heldout ? "train" : "heldout";
    if (dist) {
      e.tokens = dist->sample(rng);
      const auto tpls = dist->templates();
      for (std::size_t k = 0; k < tpls.size(); ++k)
        if (tpls[k].tokens == e.tokens) {
          out.summary.template_frequencies[k] += 1.0;
          break;
        }
    } else {
      e.tokens.resize(spec.length);
      std::size_t cur = rng.below(spec.vocab);
      e.tokens[0] = static_cast<Token>(cur);
      for (std::size_t i = 1; i < spec.length; ++i) {
        cur = successors[cur][rng.categorical(weights[cur])];
        e.tokens[i] = static_cast<Token>(cur);
      }
    }
    for (std::size_t i = 0; i < spec.length; ++i) out.summary.unigram[i][static_cast<std::size_t>(e.tokens[i])] += 1.0;
    out.entries.push_back(std::move(e));
  }
  if (spec.size > 0) {
    const auto n = static_cast<double>(spec.size);
    for (auto& row : out.summary.unigram)
      for (double& p : row) p /= n;
    for (double& f : out.summary.template_frequencies) f /= n;
  }
  return out;
}

std::string to_json(const GapReport& r) {
  const nlohmann::json j{{"description", r.description},
                         {"kl_joint_vs_factorized", r.kl_joint_vs_factorized},
                         {"kl_joint_vs_coupled", r.kl_joint_vs_coupled},
                         {"incoherence_rate_factorized", r.incoherence_rate_factorized},
                         {"incoherence_rate_coupled", r.incoherence_rate_coupled},
                         {"exact_incoherence_factorized", r.exact_incoherence_factorized},
                         {"exact_incoherence_coupled", r.exact_incoherence_coupled},
                         {"samples", r.samples}};
  return j.dump(2);
}

std::string to_json(const CllCurve& c) {
  nlohmann::json bins = nlohmann::json::array();
  for (const CllBin& b : c.bins)
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"count", b.count},
                    {"mean_baseline", b.mean_baseline},
                    {"mean_coupled", b.mean_coupled}});
  nlohmann::json j{{"bin_width", c.bin_width}, {"bins", bins}};
  j["crossover"] = c.crossover ? nlohmann::json(*c.crossover) : nlohmann::json(nullptr);
  return j.dump(2);
}

std::string to_json(const CorpusSummary& s) {
  const nlohmann::json j{{"size", s.size}, {"unigram", s.unigram}, {"template_frequencies", s.template_frequencies}};
  return j.dump(2);
}

void write_cll_csv(std::ostream& out, const CllCurve& curve) {
  out << "bin_lo,bin_hi,count,mean_cll_baseline,mean_cll_coupled,coupled_minus_baseline\n";
  for (const CllBin& b : curve.bins)
    out << b.lo << ',' << b.hi << ',' << b.count << ',' << b.mean_baseline << ',' << b.mean_coupled << ','
        << b.mean_coupled - b.mean_baseline << '\n';
}

void write_bench_csv(std::ostream& out, std::span<const BenchCell> cells) {
  out << "label,sampler,length,block_size,steps,gamma,reps,baseline_mean_s,baseline_sd_s,coupled_mean_s,"
         "coupled_sd_s,overhead\n";
  for (const BenchCell& c : cells)
    out << c.label << ',' << to_string(c.config.sampler) << ',' << c.config.length << ',' << c.config.block_size
        << ',' << c.config.steps << ',' << c.config.gamma << ',' << c.reps << ',' << c.baseline_mean_s << ','
        << c.baseline_sd_s << ',' << c.coupled_mean_s << ',' << c.coupled_sd_s << ',' << c.overhead << '\n';
}

}  // namespace codd
