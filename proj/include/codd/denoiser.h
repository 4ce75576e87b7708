#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codd/inference.h"
#include "codd/rng.h"
#include "codd/types.h"

namespace codd {

inline constexpr double kDefaultSmoothing = 1e-6;

struct Template {
  TokenVector tokens;
  double prob = 0.0;
};

// Synthetic ground-truth data distribution: a finite list of sequences with
// probabilities.
class TemplateDistribution {
 public:
  TemplateDistribution(std::size_t vocab, std::vector<Template> templates);

  std::size_t length() const { return length_; }
  std::size_t vocab_size() const { return vocab_; }
  std::span<const Template> templates() const { return templates_; }

  bool contains(std::span<const Token> tokens) const;
  TokenVector sample(Rng& rng) const;

 private:
  std::size_t length_ = 0;
  std::size_t vocab_;
  std::vector<Template> templates_;
};

// Stand-in for the frozen denoiser f(x_t): maps a masked state to a fully
// factorized grid, one independent row per position.
class PotentialSource {
 public:
  virtual ~PotentialSource() = default;
  virtual std::size_t length() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual PotentialGrid potentials(const MaskedSequence& state) const = 0;
};

// Exact per-position conditionals p_data(x_i | observed), additively smoothed
// as (p + eps) / (1 + V eps). Throws ContradictionError if no template is
// consistent with the observed tokens.
PotentialGrid oracle_potentials(const TemplateDistribution& dist, const MaskedSequence& state,
                                double smoothing = kDefaultSmoothing);

class OracleSource final : public PotentialSource {
 public:
  explicit OracleSource(TemplateDistribution dist, double smoothing = kDefaultSmoothing)
      : dist_(std::move(dist)), smoothing_(smoothing) {}

  std::size_t length() const override { return dist_.length(); }
  std::size_t vocab_size() const override { return dist_.vocab_size(); }
  PotentialGrid potentials(const MaskedSequence& state) const override {
    return oracle_potentials(dist_, state, smoothing_);
  }
  const TemplateDistribution& distribution() const { return dist_; }

 private:
  TemplateDistribution dist_;
  double smoothing_;
};

class UniformSource final : public PotentialSource {
 public:
  UniformSource(std::size_t length, std::size_t vocab) : length_(length), vocab_(vocab) {}

  std::size_t length() const override { return length_; }
  std::size_t vocab_size() const override { return vocab_; }
  PotentialGrid potentials(const MaskedSequence& state) const override;

 private:
  std::size_t length_;
  std::size_t vocab_;
};

// Frequency-table denoiser. Row i conditions on the observed tokens within
// `context_radius` of i; when that exact context never occurs in the corpus
// the farthest context tokens are dropped one at a time (nearest first kept),
// down to the unigram counts at position i.
class CountDenoiser final : public PotentialSource {
 public:
  CountDenoiser(std::size_t length, std::size_t vocab, std::size_t context_radius, double smoothing,
                std::vector<TokenVector> sequences, std::vector<double> counts);

  std::size_t length() const override { return length_; }
  std::size_t vocab_size() const override { return vocab_; }
  PotentialGrid potentials(const MaskedSequence& state) const override;

  std::size_t unique_sequences() const { return sequences_.size(); }

 private:
  std::size_t length_;
  std::size_t vocab_;
  std::size_t radius_;
  double smoothing_;
  std::vector<TokenVector> sequences_;
  std::vector<double> counts_;
};

// Degenerate corpora (empty) yield uniform rows. `length` is taken from the
// corpus when nonempty.
CountDenoiser train_count_denoiser(std::span<const TokenVector> corpus, std::size_t vocab, std::size_t length,
                                   std::size_t context_radius, double smoothing = kDefaultSmoothing);

// Randomly initialized transformer-shaped network used where the cost of a
// neural backbone matters (overhead benchmarks). Its potentials are
// state-dependent but carry no knowledge of any corpus. Pre-norm blocks of
// single-head self-attention and a ReLU feed-forward layer; mask is token V.
struct TransformerShape {
  std::size_t d_model = 256;
  std::size_t layers = 2;
  std::size_t ffn = 1024;
  std::uint64_t seed = 0;
};

class TransformerStandIn final : public PotentialSource {
 public:
  TransformerStandIn(std::size_t length, std::size_t vocab, TransformerShape shape = {});

  std::size_t length() const override { return length_; }
  std::size_t vocab_size() const override { return vocab_; }
  PotentialGrid potentials(const MaskedSequence& state) const override;

 private:
  struct Layer {
    std::vector<float> wq, wk, wv, wo, w1, w2;  // row-major, input-major
  };
  std::size_t length_;
  std::size_t vocab_;
  TransformerShape shape_;
  std::vector<float> token_embed_;     // (V + 1) x d
  std::vector<float> position_embed_;  // L x d
  std::vector<Layer> layers_;
  std::vector<float> unembed_;         // d x V
};

// CODDPOT1 potential cache.
struct PotentialRecord {
  MaskedSequence state;
  PotentialGrid grid;
  std::optional<TokenVector> ground_truth;
};

struct PotentialBatch {
  std::size_t length = 0;
  std::size_t vocab = 0;
  std::vector<PotentialRecord> records;
  std::size_t adjusted_rows = 0;  // rows renormalized on load
};

void write_potentials(std::ostream& out, std::size_t length, std::size_t vocab,
                      std::span<const PotentialRecord> records);
PotentialBatch read_potentials(std::istream& in);
void save_potentials(const std::filesystem::path& path, std::size_t length, std::size_t vocab,
                     std::span<const PotentialRecord> records);
PotentialBatch load_potentials(const std::filesystem::path& path);

// Companion JSON-lines manifest, one object per potential record. `t` is the
// noise level the record was drawn at, kept so training can weight it.
struct ManifestEntry {
  std::string id;
  std::string source;
  std::string split;
  std::optional<double> t;
};

void save_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

}  // namespace codd
