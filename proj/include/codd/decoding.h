#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "codd/denoiser.h"
#include "codd/hmm.h"
#include "codd/inference.h"
#include "codd/rng.h"

namespace codd {

struct DecodeConfig {
  std::size_t length = 32;
  std::size_t steps = 8;
  std::size_t block_size = 32;   // block mode only
  std::size_t window = 32;       // full mode prior window
  double gamma = 0.5;
  double tau = 0.2;
  Heuristic heuristic = Heuristic::confidence;
  SamplerKind sampler = SamplerKind::latent;
  std::optional<Heuristic> ao_order;  // defaults to `heuristic`
  std::uint64_t seed = 0;
};

// Throws InputError on an invalid configuration. `block_mode` additionally
// requires the block size to divide the length.
void validate(const DecodeConfig& cfg, bool block_mode);

// Coupled sampling is enabled when the mask ratio is strictly below gamma.
// gamma = 1 enables it unconditionally so that a fully masked one-step block
// can still be decoded jointly.
bool pc_gate(double mask_ratio, double gamma);

using Window = std::pair<std::size_t, std::size_t>;  // [lo, hi)

struct StepTrace {
  std::size_t step = 0;
  std::size_t block = 0;
  double mask_ratio = 0.0;  // before this step's commits
  bool pc_active = false;
  bool fallback = false;    // joint sampling hit a contradiction
  std::vector<std::size_t> positions;  // increasing
  TokenVector tokens;                  // aligned with positions
  std::vector<Window> windows;
  std::vector<double> scores;          // heuristic score per position
};

struct DecodeResult {
  TokenVector tokens;
  std::vector<StepTrace> trace;
};

// Top-k masked positions by heuristic score over the grid rows, ties to the
// lowest index. Returned in rank order. Throws InputError if k > |masked|.
std::vector<std::size_t> select_positions(const PotentialGrid& grid, std::span<const std::size_t> masked,
                                          std::size_t k, Heuristic heuristic, Rng& rng);

// ceil(remaining_masked / remaining_steps).
std::size_t plan_unmask_counts(std::size_t remaining_masked, std::size_t remaining_steps);

// Greedy fixed-width cover of sorted targets; starts clipped to L - W.
std::vector<Window> cover_windows(std::span<const std::size_t> targets, std::size_t window, std::size_t length);

// Block diffusion. A null prior gives the factorized baseline; with gamma = 0
// both paths consume identical random streams and agree bit for bit.
DecodeResult decode_block(const HmmParams* prior, const PotentialSource& source, const DecodeConfig& cfg,
                          std::span<const Token> prompt = {});

// Full-sequence diffusion with dynamic windowing.
DecodeResult decode_full(const HmmParams* prior, const PotentialSource& source, const DecodeConfig& cfg,
                         std::span<const Token> prompt = {});

void write_trace_jsonl(std::ostream& out, std::span<const StepTrace> trace);
void save_trace_jsonl(const std::filesystem::path& path, std::span<const StepTrace> trace);

}  // namespace codd
