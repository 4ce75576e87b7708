#include "codd/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>

#include "codd/error.h"
#include "codd/log_math.h"

namespace codd {

namespace {

enum StreamKey : std::uint64_t { kInitStream = 1, kShuffleStream = 2 };

constexpr double kAcceptSlack = 1e-10;
constexpr int kMaxEmTries = 16;

// Objective sum plus, optionally, the clamped-sequence flows and the
// partition-function flows, each pre-multiplied by the item weight.
struct Accumulator {
  double sum = 0.0;
  std::size_t skipped = 0;
  FlowTotals clamped;
  FlowTotals partition;
};

void accumulate_range(const HmmParams& prior, std::span<const TrainItem> items, std::span<const std::size_t> order,
                      std::size_t lo, std::size_t hi, const TrainConfig& config, double scale, bool with_flows,
                      Accumulator& acc) {
  for (std::size_t k = lo; k < hi; ++k) {
    const std::size_t idx = order.empty() ? k : order[k];
    const TrainItem& item = items[idx];
    const auto masked = item.state.masked_positions();
    if (masked.empty()) continue;
    const double w = noise_weight(config, item.t) * scale;
    const VirtualEvidence z_evidence = make_evidence(item.state, item.grid, masked);
    double log_z;
    try {
      log_z = with_flows ? hmm_accumulate_flows(prior, z_evidence, w, acc.partition)
                         : hmm_log_partition(prior, z_evidence);
    } catch (const ContradictionError&) {
      log_z = kNegInf;
    }
    if (log_z == kNegInf) {
      ++acc.skipped;
      continue;
    }
    const VirtualEvidence clamped = VirtualEvidence::observed(item.x0, prior.vocab_size());
    double log_px = kNegInf;
    try {
      log_px = with_flows ? hmm_accumulate_flows(prior, clamped, w, acc.clamped) : hmm_log_partition(prior, clamped);
    } catch (const ContradictionError&) {
    }
    double potential = 0.0;
    for (std::size_t p : masked) potential += item.grid.log_theta(p, static_cast<std::size_t>(item.x0[p]));
    const double term = log_px + potential - log_z;
    if (!std::isfinite(term))
      throw TrainingError("non-finite objective term at item " + std::to_string(idx) + " (log p(x0) = " +
                          std::to_string(log_px) + ", log Z = " + std::to_string(log_z) + ")");
    acc.sum += w * term;
  }
}

Accumulator accumulate(const HmmParams& prior, std::span<const TrainItem> items, std::span<const std::size_t> order,
                       const TrainConfig& config, bool with_flows) {
  const std::size_t n = order.empty() ? items.size() : order.size();
  const double scale = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  const std::size_t threads = std::max<std::size_t>(1, std::min(config.threads, n));
  auto fresh = [&] {
    Accumulator a;
    if (with_flows) {
      a.clamped = FlowTotals(prior.num_states(), prior.vocab_size());
      a.partition = FlowTotals(prior.num_states(), prior.vocab_size());
    }
    return a;
  };
  if (threads <= 1) {
    Accumulator acc = fresh();
    accumulate_range(prior, items, order, 0, n, config, scale, with_flows, acc);
    return acc;
  }
  // Contiguous chunks, merged in chunk order.
  std::vector<Accumulator> parts(threads);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    parts[t] = fresh();
    pool.emplace_back([&, t] {
      try {
        accumulate_range(prior, items, order, n * t / threads, n * (t + 1) / threads, config, scale, with_flows,
                         parts[t]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  Accumulator acc = fresh();
  for (const Accumulator& p : parts) {
    acc.sum += p.sum;
    acc.skipped += p.skipped;
    if (with_flows) {
      acc.clamped.add(p.clamped);
      acc.partition.add(p.partition);
    }
  }
  return acc;
}

// d/d logit_k of sum_j (c_j - z_j) log softmax(logit)_j.
void softmax_gradient(std::span<const double> log_probs, std::span<const double> c, std::span<const double> z,
                      std::span<double> out) {
  double total = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) total += c[k] - z[k];
  for (std::size_t k = 0; k < c.size(); ++k) out[k] = (c[k] - z[k]) - std::exp(log_probs[k]) * total;
}

// Raises entries below `floor` to it and rescales the rest so the row still
// sums to 1, repeating until no free entry drops under the floor.
void project_floor(std::vector<double>& p, double floor) {
  const std::size_t n = p.size();
  if (floor <= 0.0) {
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p) x /= s;
    return;
  }
  if (floor * static_cast<double>(n) >= 1.0) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(n));
    return;
  }
  std::vector<char> clamped(n, 0);
  for (;;) {
    double free_mass = 1.0, free_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (clamped[k]) free_mass -= floor;
      else free_sum += p[k];
    }
    bool changed = false;
    for (std::size_t k = 0; k < n; ++k) {
      if (clamped[k]) {
        p[k] = floor;
        continue;
      }
      p[k] = free_sum > 0.0 ? p[k] * free_mass / free_sum : free_mass;
      if (p[k] < floor) {
        clamped[k] = 1;
        changed = true;
      }
    }
    if (!changed) break;
  }
}

std::vector<double> to_log(const std::vector<double>& p) {
  std::vector<double> out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = std::log(p[k]);
  log_normalize(out);
  return out;
}

// Extended Baum-Welch on one row: new_k is proportional to
// (c_k - z_k) + D theta_k, with D large enough to keep every entry positive.
std::vector<double> ebw_row(std::span<const double> log_theta, std::span<const double> c, std::span<const double> z,
                            double multiplier, double floor) {
  const std::size_t n = log_theta.size();
  double need = 0.0, z_total = 0.0, diff_total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double theta = std::exp(log_theta[k]);
    const double diff = c[k] - z[k];
    diff_total += diff;
    z_total += z[k];
    if (theta > 0.0) need = std::max(need, -diff / theta);
  }
  const double d = std::max({2.0 * need, multiplier * z_total, 1e-12});
  std::vector<double> p(n);
  for (std::size_t k = 0; k < n; ++k) p[k] = std::max(0.0, (c[k] - z[k] + d * std::exp(log_theta[k])) / (diff_total + d));
  project_floor(p, floor);
  return to_log(p);
}

HmmParams ebw_update(const HmmParams& prior, const Accumulator& acc, double multiplier, double floor) {
  const std::size_t n = prior.num_states(), v = prior.vocab_size();
  std::vector<double> pi = ebw_row(prior.log_pi(), acc.clamped.initial, acc.partition.initial, multiplier, floor);
  std::vector<double> a, b;
  a.reserve(n * n);
  b.reserve(n * v);
  for (std::size_t h = 0; h < n; ++h) {
    const auto row = ebw_row(prior.log_a_row(h), {acc.clamped.transition.data() + h * n, n},
                             {acc.partition.transition.data() + h * n, n}, multiplier, floor);
    a.insert(a.end(), row.begin(), row.end());
  }
  for (std::size_t h = 0; h < n; ++h) {
    const auto row = ebw_row(prior.log_b_row(h), {acc.clamped.emission.data() + h * v, v},
                             {acc.partition.emission.data() + h * v, v}, multiplier, floor);
    b.insert(b.end(), row.begin(), row.end());
  }
  return HmmParams(n, v, std::move(pi), std::move(a), std::move(b));
}

std::vector<double> floored_softmax(std::span<const double> logits, double floor) {
  std::vector<double> lp(logits.begin(), logits.end());
  log_normalize(lp);
  std::vector<double> p(lp.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(lp[k]);
  project_floor(p, floor);
  return to_log(p);
}

HmmParams ascent_step(const HmmParams& prior, const PriorGradient& g, double lr, double floor) {
  const std::size_t n = prior.num_states(), v = prior.vocab_size();
  auto step = [&](std::span<const double> log_row, const double* grad) {
    std::vector<double> logits(log_row.begin(), log_row.end());
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += lr * grad[k];
    return floored_softmax(logits, floor);
  };
  std::vector<double> pi = step(prior.log_pi(), g.initial.data()), a, b;
  for (std::size_t h = 0; h < n; ++h) {
    auto r = step(prior.log_a_row(h), g.transition.data() + h * n);
    a.insert(a.end(), r.begin(), r.end());
  }
  for (std::size_t h = 0; h < n; ++h) {
    auto r = step(prior.log_b_row(h), g.emission.data() + h * v);
    b.insert(b.end(), r.begin(), r.end());
  }
  return HmmParams(n, v, std::move(pi), std::move(a), std::move(b));
}

PriorGradient gradient_from(const HmmParams& prior, const Accumulator& acc) {
  const std::size_t n = prior.num_states(), v = prior.vocab_size();
  PriorGradient g;
  g.initial.resize(n);
  g.transition.resize(n * n);
  g.emission.resize(n * v);
  softmax_gradient(prior.log_pi(), acc.clamped.initial, acc.partition.initial, g.initial);
  for (std::size_t h = 0; h < n; ++h) {
    softmax_gradient(prior.log_a_row(h), {acc.clamped.transition.data() + h * n, n},
                     {acc.partition.transition.data() + h * n, n}, {g.transition.data() + h * n, n});
    softmax_gradient(prior.log_b_row(h), {acc.clamped.emission.data() + h * v, v},
                     {acc.partition.emission.data() + h * v, v}, {g.emission.data() + h * v, v});
  }
  g.objective = {acc.sum, acc.skipped};
  return g;
}

void check_items(std::span<const TrainItem> items, const TrainConfig& config) {
  if (items.empty()) throw InputError("training set is empty");
  const std::size_t v = items.front().grid.vocab_size();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const TrainItem& it = items[k];
    if (it.x0.size() != config.window_length || it.state.length() != config.window_length ||
        it.grid.length() != config.window_length)
      throw InputError("item " + std::to_string(k) + " does not match window length " +
                       std::to_string(config.window_length));
    if (it.grid.vocab_size() != v) throw InputError("item " + std::to_string(k) + " has a different vocabulary");
  }
}

}  // namespace

NoiseDraw draw_noise(std::size_t length, Rng& rng) {
  NoiseDraw d;
  d.t = 1.0 - rng.uniform();
  d.mask.resize(length);
  for (auto& m : d.mask) m = rng.uniform() < d.t ? 1 : 0;
  return d;
}

MaskedSequence corrupt(std::span<const Token> x0, double t, Rng& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw InputError("noise level must lie in [0, 1]");
  std::vector<char> mask(x0.size());
  for (auto& m : mask) m = rng.uniform() < t ? 1 : 0;
  return MaskedSequence(TokenVector(x0.begin(), x0.end()), std::move(mask));
}

WeightMode parse_weight_mode(std::string_view name) {
  if (name == "uniform") return WeightMode::uniform;
  if (name == "inverse_t") return WeightMode::inverse_t;
  throw InputError("unknown weight mode '" + std::string(name) + "'");
}

OptimizerMode parse_optimizer(std::string_view name) {
  if (name == "em") return OptimizerMode::em;
  if (name == "ascent") return OptimizerMode::ascent;
  throw InputError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(WeightMode m) { return m == WeightMode::uniform ? "uniform" : "inverse_t"; }
std::string_view to_string(OptimizerMode m) { return m == OptimizerMode::em ? "em" : "ascent"; }

double noise_weight(const TrainConfig& config, double t) {
  return config.weight_mode == WeightMode::uniform ? 1.0 : 1.0 / std::max(t, config.t_min);
}

std::vector<TrainItem> make_train_items(std::span<const TokenVector> dataset, const PotentialSource& source,
                                        std::size_t draws_per_sequence, Rng& rng) {
  std::vector<TrainItem> items;
  items.reserve(dataset.size() * draws_per_sequence);
  for (const TokenVector& x0 : dataset) {
    for (std::size_t d = 0; d < draws_per_sequence; ++d) {
      NoiseDraw noise = draw_noise(x0.size(), rng);
      MaskedSequence state(x0, std::move(noise.mask));
      PotentialGrid grid = source.potentials(state);
      items.push_back({x0, std::move(state), std::move(grid), noise.t});
    }
  }
  return items;
}

ObjectiveValue objective(const HmmParams& prior, std::span<const TrainItem> items, const TrainConfig& config) {
  const Accumulator acc = accumulate(prior, items, {}, config, false);
  return {acc.sum, acc.skipped};
}

PriorGradient objective_gradient(const HmmParams& prior, std::span<const TrainItem> items,
                                 const TrainConfig& config) {
  return gradient_from(prior, accumulate(prior, items, {}, config, true));
}

HmmParams prior_from_logits(std::size_t num_states, std::size_t vocab, std::span<const double> initial,
                            std::span<const double> transition, std::span<const double> emission) {
  if (initial.size() != num_states || transition.size() != num_states * num_states ||
      emission.size() != num_states * vocab)
    throw InputError("prior_from_logits: dimension mismatch");
  auto rows = [](std::span<const double> x, std::size_t width) {
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t lo = 0; lo < out.size(); lo += width) log_normalize({out.data() + lo, width});
    return out;
  };
  return HmmParams(num_states, vocab, rows(initial, num_states), rows(transition, num_states),
                   rows(emission, vocab));
}

TrainResult train_prior_on_items(std::span<const TrainItem> items, const TrainConfig& config,
                                 std::optional<HmmParams> init) {
  check_items(items, config);
  const std::size_t v = items.front().grid.vocab_size();
  HmmParams prior = [&] {
    if (init) {
      if (init->vocab_size() != v) throw InputError("initial prior vocabulary does not match the data");
      return *init;
    }
    Rng rng = Rng::derive(config.seed, {kInitStream});
    return HmmParams::random(config.num_states, v, config.init_concentration, rng);
  }();

  TrainResult result{prior, {}, false};
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  ObjectiveValue current = objective(prior, items, config);
  auto ms_since = [](clock::time_point t) {
    return std::chrono::duration<double, std::milli>(clock::now() - t).count();
  };
  result.history.push_back({0, current.value, current.skipped, ms_since(t0)});

  double multiplier = 1.0;
  std::vector<std::size_t> order(items.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    t0 = clock::now();
    if (config.optimizer == OptimizerMode::em && !result.em_fallback) {
      const Accumulator stats = accumulate(prior, items, {}, config, true);
      bool accepted = false;
      double m = std::max(multiplier / 4.0, 1e-3);
      for (int attempt = 0; attempt < kMaxEmTries; ++attempt, m *= 4.0) {
        HmmParams candidate = ebw_update(prior, stats, m, config.param_floor);
        const ObjectiveValue value = objective(candidate, items, config);
        if (value.value >= current.value - kAcceptSlack) {
          prior = std::move(candidate);
          current = value;
          multiplier = m;
          accepted = true;
          break;
        }
      }
      // No step size improved the objective: hand over to first-order ascent.
      if (!accepted) result.em_fallback = true;
    } else {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle = Rng::derive(config.seed, {kShuffleStream, epoch});
      for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[shuffle.below(k)]);
      const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
      for (std::size_t lo = 0; lo < order.size(); lo += batch) {
        const std::size_t hi = std::min(order.size(), lo + batch);
        const PriorGradient g =
            gradient_from(prior, accumulate(prior, items, std::span(order).subspan(lo, hi - lo), config, true));
        prior = ascent_step(prior, g, config.learning_rate, config.param_floor);
      }
      current = objective(prior, items, config);
    }
    result.history.push_back({epoch, current.value, current.skipped, ms_since(t0)});
  }
  result.prior = std::move(prior);
  return result;
}

TrainResult train_prior(std::span<const TokenVector> dataset, const PotentialSource& source,
                        const TrainConfig& config, Rng& rng) {
  const std::vector<TrainItem> items = make_train_items(dataset, source, config.draws_per_sequence, rng);
  return train_prior_on_items(items, config);
}

void save_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "epoch,objective,skipped_items,wall_ms\n";
  out.precision(17);
  for (const EpochRecord& r : history)
    out << r.epoch << ',' << r.objective << ',' << r.skipped_items << ',' << r.wall_ms << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

PrecomputedPotentials precompute_potentials(std::span<const TokenVector> dataset, const PotentialSource& source,
                                            std::size_t draws, Rng& rng, std::optional<double> fixed_t) {
  if (draws < 1) throw InputError("precompute_potentials: need at least one draw per sequence");
  PrecomputedPotentials out;
  for (const TokenVector& x0 : dataset) {
    for (std::size_t d = 0; d < draws; ++d) {
      double t;
      MaskedSequence state;
      if (fixed_t) {
        t = *fixed_t;
        state = corrupt(x0, t, rng);
      } else {
        NoiseDraw noise = draw_noise(x0.size(), rng);
        t = noise.t;
        state = MaskedSequence(x0, std::move(noise.mask));
      }
      PotentialGrid grid = source.potentials(state);
      out.records.push_back({std::move(state), std::move(grid), x0});
      out.noise_levels.push_back(t);
    }
  }
  return out;
}

std::vector<TrainItem> items_from_records(std::span<const PotentialRecord> records,
                                          std::span<const double> noise_levels) {
  std::vector<TrainItem> items;
  items.reserve(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    const PotentialRecord& r = records[k];
    if (!r.ground_truth) throw InputError("potential record " + std::to_string(k) + " has no ground truth");
    const double t = k < noise_levels.size() ? noise_levels[k] : std::max(r.state.mask_ratio(), 1e-12);
    items.push_back({*r.ground_truth, r.state, r.grid, t});
  }
  return items;
}

}  // namespace codd
