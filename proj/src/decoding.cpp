#include "codd/decoding.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include <json.hpp>

#include "codd/error.h"

namespace codd {

namespace {

// Stream keys. Every draw is keyed by what it decides, never by how many
// draws came before, so switching the prior on or off leaves the rest alone.
enum StreamKey : std::uint64_t { kSelectStream = 11, kTokenStream = 12, kJointStream = 13 };

struct StepContext {
  const HmmParams* prior;
  const PotentialSource& source;
  const DecodeConfig& cfg;
  std::size_t block;
  std::size_t step;
};

void check_prompt(std::span<const Token> prompt, const DecodeConfig& cfg, std::size_t vocab) {
  if (prompt.size() > cfg.length) throw InputError("prompt is longer than the sequence");
  for (Token t : prompt)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw InputError("prompt token out of vocabulary");
}

MaskedSequence initial_state(std::span<const Token> prompt, std::size_t length) {
  MaskedSequence state = MaskedSequence::all_masked(length);
  for (std::size_t i = 0; i < prompt.size(); ++i) state.reveal(i, prompt[i]);
  return state;
}

void check_sources(const HmmParams* prior, const PotentialSource& source, const DecodeConfig& cfg) {
  if (source.length() != cfg.length)
    throw InputError("source length " + std::to_string(source.length()) + " does not match decode length " +
                     std::to_string(cfg.length));
  if (prior && prior->vocab_size() != source.vocab_size())
    throw InputError("prior and source vocabularies differ");
}

// Samples the targets inside one window. Targets are absolute positions,
// increasing, all inside [w.first, w.second).
TokenVector sample_window(const StepContext& ctx, const MaskedSequence& state, const PotentialGrid& grid,
                          const Window& w, std::size_t window_index, std::span<const std::size_t> targets,
                          bool pc_active, bool& fallback) {
  if (pc_active) {
    std::vector<std::size_t> local(targets.size());
    for (std::size_t k = 0; k < targets.size(); ++k) local[k] = targets[k] - w.first;
    Rng rng = Rng::derive(ctx.cfg.seed, {kJointStream, ctx.block, ctx.step, window_index});
    try {
      return sample_joint(ctx.cfg.sampler, *ctx.prior, state.slice(w.first, w.second), grid.slice(w.first, w.second),
                          local, ctx.cfg.tau, ctx.cfg.ao_order.value_or(ctx.cfg.heuristic), rng);
    } catch (const ContradictionError&) {
      fallback = true;
    }
  }
  TokenVector out(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Rng rng = Rng::derive(ctx.cfg.seed, {kTokenStream, ctx.block, ctx.step, targets[k]});
    out[k] = sample_factorized_token(grid, targets[k], ctx.cfg.tau, rng);
  }
  return out;
}

std::vector<double> scores_for(const PotentialGrid& grid, std::span<const std::size_t> positions, Heuristic h) {
  std::vector<double> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(heuristic_score(h, grid.probabilities(p), p));
  return out;
}

// One denoising step over the masked positions in `candidates`. Windows are
// the prior's scopes; each target belongs to exactly one window.
StepTrace run_step(const StepContext& ctx, MaskedSequence& state, std::span<const std::size_t> candidates,
                   std::size_t remaining_steps, double mask_ratio, bool block_mode, std::size_t block_lo) {
  const PotentialGrid grid = ctx.source.potentials(state);
  const std::size_t k = plan_unmask_counts(candidates.size(), remaining_steps);
  Rng select_rng = Rng::derive(ctx.cfg.seed, {kSelectStream, ctx.block, ctx.step});
  std::vector<std::size_t> targets = select_positions(grid, candidates, k, ctx.cfg.heuristic, select_rng);
  std::sort(targets.begin(), targets.end());

  StepTrace trace;
  trace.step = ctx.step;
  trace.block = ctx.block;
  trace.mask_ratio = mask_ratio;
  trace.pc_active = ctx.prior != nullptr && pc_gate(mask_ratio, ctx.cfg.gamma);
  trace.positions = targets;
  trace.scores = scores_for(grid, targets, ctx.cfg.heuristic);
  trace.windows = block_mode ? std::vector<Window>{{block_lo, block_lo + ctx.cfg.block_size}}
                             : cover_windows(targets, ctx.cfg.window, ctx.cfg.length);

  trace.tokens.resize(targets.size());
  std::size_t next = 0;
  for (std::size_t w = 0; w < trace.windows.size(); ++w) {
    const Window& win = trace.windows[w];
    std::size_t end = next;
    while (end < targets.size() && targets[end] < win.second) ++end;
    const std::span<const std::size_t> mine(targets.data() + next, end - next);
    const TokenVector drawn = sample_window(ctx, state, grid, win, w, mine, trace.pc_active, trace.fallback);
    std::copy(drawn.begin(), drawn.end(), trace.tokens.begin() + static_cast<std::ptrdiff_t>(next));
    next = end;
  }
  if (next != targets.size()) throw Error("internal: windows do not cover the selected targets");
  // Commit after every window has sampled so all windows see the same state.
  for (std::size_t j = 0; j < targets.size(); ++j) state.reveal(targets[j], trace.tokens[j]);
  return trace;
}

}  // namespace

void validate(const DecodeConfig& cfg, bool block_mode) {
  if (cfg.length == 0) throw InputError("decode length must be positive");
  if (cfg.steps == 0) throw InputError("steps must be positive");
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw InputError("gamma must lie in [0, 1]");
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw InputError("tau must lie in (0, 1]");
  if (block_mode) {
    if (cfg.block_size == 0 || cfg.length % cfg.block_size != 0)
      throw InputError("block size must divide the sequence length");
  } else if (cfg.window == 0 || cfg.window > cfg.length) {
    throw InputError("window must lie in [1, length]");
  }
}

bool pc_gate(double mask_ratio, double gamma) { return gamma >= 1.0 || mask_ratio < gamma; }

std::vector<std::size_t> select_positions(const PotentialGrid& grid, std::span<const std::size_t> masked,
                                          std::size_t k, Heuristic heuristic, Rng& rng) {
  if (k > masked.size())
    throw InputError("cannot select " + std::to_string(k) + " of " + std::to_string(masked.size()) +
                     " masked positions");
  std::vector<std::size_t> pool(masked.begin(), masked.end());
  if (heuristic == Heuristic::random) {
    for (std::size_t j = 0; j < k; ++j) std::swap(pool[j], pool[j + rng.below(pool.size() - j)]);
    pool.resize(k);
    return pool;
  }
  const std::vector<double> scores = scores_for(grid, pool, heuristic);
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return pool[a] < pool[b];
                    });
  std::vector<std::size_t> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = pool[idx[j]];
  return out;
}

std::size_t plan_unmask_counts(std::size_t remaining_masked, std::size_t remaining_steps) {
  if (remaining_steps == 0) throw InputError("no steps remain");
  return (remaining_masked + remaining_steps - 1) / remaining_steps;
}

std::vector<Window> cover_windows(std::span<const std::size_t> targets, std::size_t window, std::size_t length) {
  if (window == 0 || window > length) throw InputError("window must lie in [1, length]");
  std::vector<Window> out;
  std::size_t j = 0;
  while (j < targets.size()) {
    const std::size_t lo = std::min(targets[j], length - window);
    out.emplace_back(lo, lo + window);
    while (j < targets.size() && targets[j] < lo + window) ++j;
  }
  return out;
}

DecodeResult decode_block(const HmmParams* prior, const PotentialSource& source, const DecodeConfig& cfg,
                          std::span<const Token> prompt) {
  validate(cfg, true);
  check_sources(prior, source, cfg);
  check_prompt(prompt, cfg, source.vocab_size());
  MaskedSequence state = initial_state(prompt, cfg.length);
  DecodeResult result;
  std::size_t global_step = 0;
  for (std::size_t b = 0; b * cfg.block_size < cfg.length; ++b) {
    const std::size_t lo = b * cfg.block_size, hi = lo + cfg.block_size;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
      std::vector<std::size_t> masked;
      for (std::size_t i = lo; i < hi; ++i)
        if (state.masked(i)) masked.push_back(i);
      if (masked.empty()) break;
      const double ratio = static_cast<double>(masked.size()) / static_cast<double>(cfg.block_size);
      const StepContext ctx{prior, source, cfg, b, s};
      StepTrace t = run_step(ctx, state, masked, cfg.steps - s, ratio, true, lo);
      t.step = global_step++;
      result.trace.push_back(std::move(t));
    }
  }
  result.tokens = state.tokens();
  return result;
}

DecodeResult decode_full(const HmmParams* prior, const PotentialSource& source, const DecodeConfig& cfg,
                         std::span<const Token> prompt) {
  validate(cfg, false);
  check_sources(prior, source, cfg);
  check_prompt(prompt, cfg, source.vocab_size());
  MaskedSequence state = initial_state(prompt, cfg.length);
  DecodeResult result;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const std::vector<std::size_t> masked = state.masked_positions();
    if (masked.empty()) break;
    const StepContext ctx{prior, source, cfg, 0, s};
    result.trace.push_back(run_step(ctx, state, masked, cfg.steps - s, state.mask_ratio(), false, 0));
  }
  result.tokens = state.tokens();
  return result;
}

void write_trace_jsonl(std::ostream& out, std::span<const StepTrace> trace) {
  for (const StepTrace& t : trace) {
    nlohmann::json windows = nlohmann::json::array();
    for (const Window& w : t.windows) windows.push_back({w.first, w.second});
    const nlohmann::json j{{"step", t.step},         {"block", t.block},     {"mask_ratio", t.mask_ratio},
                           {"pc_active", t.pc_active}, {"fallback", t.fallback}, {"positions", t.positions},
                           {"tokens", t.tokens},     {"windows", windows},   {"scores", t.scores}};
    out << j.dump() << '\n';
  }
}

void save_trace_jsonl(const std::filesystem::path& path, std::span<const StepTrace> trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_trace_jsonl(out, trace);
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace codd
