#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "codd/denoiser.h"
#include "codd/hmm.h"
#include "codd/inference.h"
#include "codd/rng.h"

namespace codd {

// One forward-corruption draw: noise level t and the realized mask.
struct NoiseDraw {
  double t = 0.0;
  std::vector<char> mask;
};

// t ~ U(0, 1], then each of `length` positions masked independently w.p. t.
NoiseDraw draw_noise(std::size_t length, Rng& rng);

// Masks each position independently with probability t.
MaskedSequence corrupt(std::span<const Token> x0, double t, Rng& rng);

enum class WeightMode { uniform, inverse_t };
enum class OptimizerMode { em, ascent };

WeightMode parse_weight_mode(std::string_view name);
OptimizerMode parse_optimizer(std::string_view name);
std::string_view to_string(WeightMode m);
std::string_view to_string(OptimizerMode m);

struct TrainConfig {
  WeightMode weight_mode = WeightMode::inverse_t;
  OptimizerMode optimizer = OptimizerMode::em;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;       // ascent minibatch size
  double learning_rate = 0.5;        // ascent step on softmax logits
  std::uint64_t seed = 0;
  std::size_t window_length = 32;
  double param_floor = 1e-6;
  std::size_t num_states = 1024;
  std::size_t draws_per_sequence = 1;
  std::size_t threads = 1;
  double t_min = 0.05;               // inverse_t weights use 1 / max(t, t_min)
  double init_concentration = 1.1;   // Dirichlet rows of the initial prior
};

double noise_weight(const TrainConfig& config, double t);

// A frozen-potential training example: clean sequence, its corruption, and
// the denoiser grid computed for that corruption.
struct TrainItem {
  TokenVector x0;
  MaskedSequence state;
  PotentialGrid grid;
  double t = 1.0;
};

std::vector<TrainItem> make_train_items(std::span<const TokenVector> dataset, const PotentialSource& source,
                                        std::size_t draws_per_sequence, Rng& rng);

struct ObjectiveValue {
  double value = 0.0;
  std::size_t skipped = 0;  // items with Z = 0
};

// (1/|items|) sum_k w(t_k) log p_hat(x0_k | x_t,k) with all masked positions
// as targets. Throws TrainingError naming the item on a non-finite term.
ObjectiveValue objective(const HmmParams& prior, std::span<const TrainItem> items, const TrainConfig& config);

// Gradient of `objective` with respect to the softmax logits of pi, every row
// of A and every row of B (logits = log-probabilities at the current point).
struct PriorGradient {
  std::vector<double> initial;     // N
  std::vector<double> transition;  // N x N
  std::vector<double> emission;    // N x V
  ObjectiveValue objective;
};

PriorGradient objective_gradient(const HmmParams& prior, std::span<const TrainItem> items,
                                 const TrainConfig& config);

// Softmax of each row of unconstrained logits.
HmmParams prior_from_logits(std::size_t num_states, std::size_t vocab, std::span<const double> initial,
                            std::span<const double> transition, std::span<const double> emission);

struct EpochRecord {
  std::size_t epoch = 0;
  double objective = 0.0;
  std::size_t skipped_items = 0;
  double wall_ms = 0.0;
};

struct TrainResult {
  HmmParams prior;
  std::vector<EpochRecord> history;  // entry 0 is the initial objective
  bool em_fallback = false;          // em could not improve and switched to ascent
};

TrainResult train_prior_on_items(std::span<const TrainItem> items, const TrainConfig& config,
                                 std::optional<HmmParams> init = std::nullopt);

TrainResult train_prior(std::span<const TokenVector> dataset, const PotentialSource& source,
                        const TrainConfig& config, Rng& rng);

// Writes epoch,objective,skipped_items,wall_ms.
void save_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

// `draws` corruptions per sequence, one source query each. `fixed_t` pins the
// noise level instead of drawing it.
struct PrecomputedPotentials {
  std::vector<PotentialRecord> records;
  std::vector<double> noise_levels;
};

PrecomputedPotentials precompute_potentials(std::span<const TokenVector> dataset, const PotentialSource& source,
                                            std::size_t draws, Rng& rng,
                                            std::optional<double> fixed_t = std::nullopt);

// Rebuilds training items from a potential cache; records without ground
// truth are rejected. Missing noise levels fall back to the realized mask ratio.
std::vector<TrainItem> items_from_records(std::span<const PotentialRecord> records,
                                          std::span<const double> noise_levels);

}  // namespace codd
