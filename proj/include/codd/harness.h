#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codd/corpus.h"
#include "codd/decoding.h"
#include "codd/denoiser.h"
#include "codd/hmm.h"

namespace codd {

struct GapReport {
  std::string description;
  double kl_joint_vs_factorized = 0.0;  // nats
  double kl_joint_vs_coupled = 0.0;     // nats
  double incoherence_rate_factorized = 0.0;
  double incoherence_rate_coupled = 0.0;
  double exact_incoherence_factorized = 0.0;
  double exact_incoherence_coupled = 0.0;
  std::size_t samples = 0;
};

// One-shot generation from the fully masked state: compares the factorized
// grid and the coupled distribution against p_data, exactly and by sampling
// (latent sampler, tau = 1).
GapReport gap_experiment(const HmmParams& prior, const PotentialSource& source, const TemplateDistribution& dist,
                         std::size_t samples, std::uint64_t seed);

struct CllBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_baseline = 0.0;
  double mean_coupled = 0.0;
};

struct CllCurve {
  double bin_width = 0.05;
  std::vector<CllBin> bins;  // only bins with count > 0
  // Lowest bin whose mean coupled CLL falls below the baseline, if any.
  std::optional<double> crossover;
};

// Each draw corrupts a held-out sequence at t ~ U(0, 1] and scores the clean
// tokens at the masked positions. Draws with nothing masked are skipped.
CllCurve cll_curve(const HmmParams& prior, const PotentialSource& source, std::span<const TokenVector> heldout,
                   std::size_t draws_per_sequence, std::uint64_t seed, double bin_width = 0.05);

struct BenchCell {
  std::string label;
  DecodeConfig config;
  std::size_t reps = 0;
  double baseline_mean_s = 0.0;
  double baseline_sd_s = 0.0;
  double coupled_mean_s = 0.0;
  double coupled_sd_s = 0.0;
  double overhead = 0.0;  // coupled / baseline - 1
};

// Times block decoding at gamma = 0 and at each config's own gamma, same
// seeds, interleaved repetitions after `warmup` untimed runs of each.
std::vector<BenchCell> bench_overhead(const HmmParams& prior, const PotentialSource& source,
                                      std::span<const DecodeConfig> configs, std::size_t reps,
                                      std::size_t warmup = 2);

struct CorpusSpec {
  std::size_t vocab = 4;
  std::size_t length = 2;
  std::size_t size = 1000;
  std::uint64_t seed = 0;
  double heldout_fraction = 0.0;
  // Either templates, or (when empty) a sparse random Markov chain where each
  // token has `branching` successors with Dirichlet(1) weights.
  std::vector<Template> templates;
  std::size_t branching = 2;
};

struct CorpusSummary {
  std::size_t size = 0;
  std::vector<std::vector<double>> unigram;  // length x V position marginals
  std::vector<double> template_frequencies;  // empty for Markov corpora
};

struct GeneratedCorpus {
  std::vector<CorpusEntry> entries;
  CorpusSummary summary;
};

GeneratedCorpus gen_corpus(const CorpusSpec& spec);

// JSON / CSV emitters.
std::string to_json(const GapReport& report);
std::string to_json(const CllCurve& curve);
std::string to_json(const CorpusSummary& summary);
void write_cll_csv(std::ostream& out, const CllCurve& curve);
void write_bench_csv(std::ostream& out, std::span<const BenchCell> cells);

}  // namespace codd
