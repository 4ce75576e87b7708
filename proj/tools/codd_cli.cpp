// Command-line driver: data generation, potential caching, prior training,
// decoding and the evaluation experiments.

#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "codd/corpus.h"
#include "codd/decoding.h"
#include "codd/denoiser.h"
#include "codd/error.h"
#include "codd/harness.h"
#include "codd/hmm.h"
#include "codd/train.h"

using namespace codd;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

// Looks for --config <file> before the real parse so its values become
// defaults that explicit flags override.
std::optional<json> prescan_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--config") == 0) return load_json(argv[i + 1]);
  return std::nullopt;
}

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void apply_config(const json& j, TrainConfig& t, DecodeConfig& d) {
  if (j.contains("weight_mode")) t.weight_mode = parse_weight_mode(j.at("weight_mode").get<std::string>());
  if (j.contains("optimizer")) t.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  take(j, "epochs", t.epochs);
  take(j, "batch_size", t.batch_size);
  take(j, "learning_rate", t.learning_rate);
  take(j, "window_length", t.window_length);
  take(j, "param_floor", t.param_floor);
  take(j, "num_states", t.num_states);
  take(j, "draws_per_sequence", t.draws_per_sequence);
  take(j, "threads", t.threads);
  take(j, "t_min", t.t_min);
  take(j, "init_concentration", t.init_concentration);
  take(j, "seed", t.seed);
  take(j, "seed", d.seed);
  take(j, "length", d.length);
  take(j, "steps", d.steps);
  take(j, "block_size", d.block_size);
  take(j, "window", d.window);
  take(j, "gamma", d.gamma);
  take(j, "tau", d.tau);
  if (j.contains("heuristic")) d.heuristic = parse_heuristic(j.at("heuristic").get<std::string>());
  if (j.contains("sampler")) d.sampler = parse_sampler(j.at("sampler").get<std::string>());
  if (j.contains("ao_order")) d.ao_order = parse_heuristic(j.at("ao_order").get<std::string>());
}

TemplateDistribution load_templates(const std::string& path) {
  const json j = load_json(path);
  std::vector<Template> tpls;
  for (const json& t : j.at("templates")) tpls.push_back({t.at("tokens").get<TokenVector>(), t.at("prob").get<double>()});
  return TemplateDistribution(j.at("vocab").get<std::size_t>(), std::move(tpls));
}

TokenVector parse_tokens(const std::string& text) {
  TokenVector out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(static_cast<Token>(std::stol(item)));
  return out;
}

struct SourceOptions {
  std::string kind = "count";
  std::string corpus;
  std::string split = "train";
  std::string templates;
  std::size_t radius = 1;
  double smoothing = kDefaultSmoothing;
  std::size_t vocab = 0;
  std::size_t length = 0;
  std::uint64_t model_seed = 0;

  void add(CLI::App* app) {
    app->add_option("--source", kind, "potential source: count, oracle, uniform or transformer")
        ->check(CLI::IsMember({"count", "oracle", "uniform", "transformer"}));
    app->add_option("--source_corpus", corpus, "corpus the count denoiser is fit on");
    app->add_option("--source_split", split, "corpus split for the count denoiser");
    app->add_option("--templates", templates, "template JSON file for the oracle source");
    app->add_option("--radius", radius, "count denoiser context radius");
    app->add_option("--smoothing", smoothing, "additive smoothing of source rows");
    app->add_option("--vocab", vocab, "vocabulary size (uniform/transformer source, or count source override)");
    app->add_option("--model_seed", model_seed, "weight seed of the random-weight transformer source");
  }

  std::unique_ptr<PotentialSource> build(std::size_t fallback_length) const {
    const std::size_t len = length ? length : fallback_length;
    if (kind == "oracle") {
      if (templates.empty()) throw InputError("--templates is required for the oracle source");
      return std::make_unique<OracleSource>(load_templates(templates), smoothing);
    }
    if (kind == "uniform") {
      if (vocab == 0) throw InputError("--vocab is required for the uniform source");
      return std::make_unique<UniformSource>(len, vocab);
    }
    if (kind == "transformer") {
      if (vocab == 0) throw InputError("--vocab is required for the transformer source");
      TransformerShape shape;
      shape.seed = model_seed;
      return std::make_unique<TransformerStandIn>(len, vocab, shape);
    }
    if (corpus.empty()) throw InputError("--source_corpus is required for the count source");
    const auto seqs = corpus_sequences(load_corpus(corpus), split);
    std::size_t v = vocab;
    if (v == 0)
      for (const auto& s : seqs)
        for (Token t : s) v = std::max(v, static_cast<std::size_t>(t) + 1);
    return std::make_unique<CountDenoiser>(train_count_denoiser(seqs, v, len, radius, smoothing));
  }
};

void add_decode_flags(CLI::App* app, DecodeConfig& d, std::string& heuristic, std::string& sampler,
                      std::string& ao_order) {
  app->add_option("--length", d.length, "total sequence length");
  app->add_option("--steps", d.steps, "denoising steps (per block in block mode)");
  app->add_option("--block_size", d.block_size, "block size");
  app->add_option("--window", d.window, "prior window in full mode");
  app->add_option("--gamma", d.gamma, "activation threshold on the mask ratio");
  app->add_option("--tau", d.tau, "sampling temperature in (0, 1]");
  app->add_option("--heuristic", heuristic, "confidence, margin, entropy or random");
  app->add_option("--sampler", sampler, "latent, ao or alg1");
  app->add_option("--ao_order", ao_order, "position order for the ao sampler (defaults to --heuristic)");
  app->add_option("--seed", d.seed, "run seed");
}

void finish_decode_flags(DecodeConfig& d, const std::string& heuristic, const std::string& sampler,
                         const std::string& ao_order) {
  if (!heuristic.empty()) d.heuristic = parse_heuristic(heuristic);
  if (!sampler.empty()) d.sampler = parse_sampler(sampler);
  if (!ao_order.empty()) d.ao_order = parse_heuristic(ao_order);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coupled discrete diffusion toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with TrainConfig / DecodeConfig fields");
  app.fallthrough();

  TrainConfig tcfg;
  DecodeConfig dcfg;
  try {
    if (auto j = prescan_config(argc, argv)) apply_config(*j, tcfg, dcfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::string heuristic, sampler, ao_order;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  CorpusSpec cspec;
  std::string gen_templates, gen_out = "corpus.jsonl", gen_summary;
  gen->add_option("--vocab", cspec.vocab, "vocabulary size");
  gen->add_option("--length", cspec.length, "sequence length");
  gen->add_option("--size", cspec.size, "number of sequences");
  gen->add_option("--seed", cspec.seed, "generator seed");
  gen->add_option("--heldout_fraction", cspec.heldout_fraction, "fraction written with split=heldout");
  gen->add_option("--templates", gen_templates, "template JSON file (otherwise a sparse Markov chain)");
  gen->add_option("--branching", cspec.branching, "successors per token for the Markov chain");
  gen->add_option("--out", gen_out, "corpus JSONL path");
  gen->add_option("--summary", gen_summary, "summary JSON path (stdout if omitted)");

  // precompute
  auto* pre = app.add_subcommand("precompute", "cache denoiser potentials for training");
  SourceOptions pre_src;
  pre_src.add(pre);
  std::string pre_corpus, pre_split = "train", pre_out = "potentials.bin", pre_manifest = "manifest.jsonl";
  std::size_t pre_draws = 1;
  std::uint64_t pre_seed = 0;
  std::optional<double> pre_t;
  pre->add_option("--corpus", pre_corpus, "corpus JSONL")->required();
  pre->add_option("--split", pre_split, "split to corrupt");
  pre->add_option("--draws", pre_draws, "corruptions per sequence");
  pre->add_option("--seed", pre_seed, "corruption seed");
  pre->add_option("--fixed_t", pre_t, "fixed noise level instead of t ~ U(0,1]");
  pre->add_option("--out", pre_out, "potential cache path");
  pre->add_option("--manifest", pre_manifest, "manifest JSONL path");

  // train
  auto* tr = app.add_subcommand("train", "train the circuit prior on cached potentials");
  std::string tr_potentials, tr_manifest, tr_out = "prior.bin", tr_history, tr_init, weight_mode, optimizer;
  tr->add_option("--potentials", tr_potentials, "potential cache")->required();
  tr->add_option("--manifest", tr_manifest, "manifest with noise levels");
  tr->add_option("--init", tr_init, "initial prior");
  tr->add_option("--out", tr_out, "trained prior path");
  tr->add_option("--history", tr_history, "per-epoch CSV");
  tr->add_option("--weight_mode", weight_mode, "uniform or inverse_t");
  tr->add_option("--optimizer", optimizer, "em or ascent");
  tr->add_option("--epochs", tcfg.epochs);
  tr->add_option("--batch_size", tcfg.batch_size);
  tr->add_option("--learning_rate", tcfg.learning_rate);
  tr->add_option("--seed", tcfg.seed);
  tr->add_option("--window_length", tcfg.window_length);
  tr->add_option("--param_floor", tcfg.param_floor);
  tr->add_option("--num_states", tcfg.num_states);
  tr->add_option("--threads", tcfg.threads);
  tr->add_option("--t_min", tcfg.t_min);
  tr->add_option("--init_concentration", tcfg.init_concentration);

  // decode
  auto* dec = app.add_subcommand("decode", "generate sequences");
  SourceOptions dec_src;
  dec_src.add(dec);
  add_decode_flags(dec, dcfg, heuristic, sampler, ao_order);
  std::string dec_prior, dec_mode = "block", dec_prompt, dec_out = "samples.jsonl", dec_trace;
  std::size_t dec_count = 1;
  dec->add_option("--prior", dec_prior, "trained prior (omit for the factorized baseline)");
  dec->add_option("--mode", dec_mode, "block or full")->check(CLI::IsMember({"block", "full"}));
  dec->add_option("--prompt", dec_prompt, "comma-separated observed prefix");
  dec->add_option("--count", dec_count, "number of sequences (seeds seed, seed+1, ...)");
  dec->add_option("--out", dec_out, "samples JSONL");
  dec->add_option("--trace", dec_trace, "step trace JSONL");

  // eval-gap
  auto* gap = app.add_subcommand("eval-gap", "misspecification gap and incoherence rates");
  std::string gap_prior, gap_templates, gap_out;
  std::size_t gap_samples = 20000;
  std::uint64_t gap_seed = 0;
  double gap_smoothing = kDefaultSmoothing;
  gap->add_option("--prior", gap_prior, "trained prior")->required();
  gap->add_option("--templates", gap_templates, "template JSON file")->required();
  gap->add_option("--smoothing", gap_smoothing, "oracle source smoothing");
  gap->add_option("--samples", gap_samples, "Monte Carlo samples");
  gap->add_option("--seed", gap_seed, "sampling seed");
  gap->add_option("--out", gap_out, "report JSON (stdout if omitted)");

  // eval-cll
  auto* cll = app.add_subcommand("eval-cll", "CLL against mask ratio");
  SourceOptions cll_src;
  cll_src.add(cll);
  std::string cll_prior, cll_corpus, cll_split = "heldout", cll_csv, cll_json;
  std::size_t cll_draws = 20;
  std::uint64_t cll_seed = 0;
  double cll_bin = 0.05;
  cll->add_option("--prior", cll_prior, "trained prior")->required();
  cll->add_option("--corpus", cll_corpus, "held-out corpus")->required();
  cll->add_option("--split", cll_split, "split to evaluate");
  cll->add_option("--draws", cll_draws, "corruptions per sequence");
  cll->add_option("--seed", cll_seed, "corruption seed");
  cll->add_option("--bin_width", cll_bin, "mask-ratio bin width");
  cll->add_option("--csv", cll_csv, "curve CSV (stdout if omitted)");
  cll->add_option("--json", cll_json, "curve JSON");

  // bench
  auto* bench = app.add_subcommand("bench", "decode overhead of the coupled path");
  SourceOptions bench_src;
  bench_src.add(bench);
  add_decode_flags(bench, dcfg, heuristic, sampler, ao_order);
  std::string bench_prior, bench_csv;
  std::size_t bench_reps = 20;
  bench->add_option("--prior", bench_prior, "trained prior")->required();
  bench->add_option("--reps", bench_reps, "timed repetitions per cell");
  bench->add_option("--csv", bench_csv, "CSV output (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (!gen_templates.empty()) {
        const TemplateDistribution d = load_templates(gen_templates);
        cspec.templates.assign(d.templates().begin(), d.templates().end());
        cspec.vocab = d.vocab_size();
        cspec.length = d.length();
      }
      const GeneratedCorpus c = gen_corpus(cspec);
      save_corpus(gen_out, c.entries);
      if (gen_summary.empty()) std::cout << to_json(c.summary) << '\n';
      else open_out(gen_summary) << to_json(c.summary) << '\n';
    } else if (*pre) {
      const auto entries = load_corpus(pre_corpus);
      const auto seqs = corpus_sequences(entries, pre_split);
      if (seqs.empty()) throw InputError("no sequences in split '" + pre_split + "'");
      const auto source = pre_src.build(seqs.front().size());
      Rng rng(pre_seed);
      const PrecomputedPotentials p = precompute_potentials(seqs, *source, pre_draws, rng, pre_t);
      save_potentials(pre_out, source->length(), source->vocab_size(), p.records);
      std::vector<ManifestEntry> manifest;
      for (std::size_t k = 0; k < p.records.size(); ++k)
        manifest.push_back({"rec" + std::to_string(k), pre_src.kind, pre_split, p.noise_levels[k]});
      save_manifest(pre_manifest, manifest);
      std::cerr << "wrote " << p.records.size() << " records\n";
    } else if (*tr) {
      if (!weight_mode.empty()) tcfg.weight_mode = parse_weight_mode(weight_mode);
      if (!optimizer.empty()) tcfg.optimizer = parse_optimizer(optimizer);
      const PotentialBatch batch = load_potentials(tr_potentials);
      if (batch.adjusted_rows) std::cerr << "renormalized " << batch.adjusted_rows << " potential rows\n";
      std::vector<double> levels;
      if (!tr_manifest.empty())
        for (const ManifestEntry& m : load_manifest(tr_manifest)) {
          if (!m.t) break;
          levels.push_back(*m.t);
        }
      tcfg.window_length = batch.length;
      const auto items = items_from_records(batch.records, levels);
      std::optional<HmmParams> init;
      if (!tr_init.empty()) init = load_hmm(tr_init);
      const TrainResult r = train_prior_on_items(items, tcfg, init);
      save_hmm(tr_out, r.prior);
      if (!tr_history.empty()) save_history_csv(tr_history, r.history);
      if (r.em_fallback) std::cerr << "em could not improve the objective; switched to ascent\n";
      std::cerr << "final objective " << r.history.back().objective << '\n';
    } else if (*dec) {
      finish_decode_flags(dcfg, heuristic, sampler, ao_order);
      std::optional<HmmParams> prior;
      if (!dec_prior.empty()) prior = load_hmm(dec_prior);
      dec_src.length = dcfg.length;
      const auto source = dec_src.build(dcfg.length);
      const TokenVector prompt = parse_tokens(dec_prompt);
      std::ofstream out = open_out(dec_out);
      std::ofstream trace;
      if (!dec_trace.empty()) trace = open_out(dec_trace);
      for (std::size_t k = 0; k < dec_count; ++k) {
        DecodeConfig c = dcfg;
        c.seed = dcfg.seed + k;
        const HmmParams* p = prior ? &*prior : nullptr;
        const DecodeResult r =
            dec_mode == "block" ? decode_block(p, *source, c, prompt) : decode_full(p, *source, c, prompt);
        out << json{{"seed", c.seed}, {"tokens", r.tokens}}.dump() << '\n';
        if (trace.is_open()) write_trace_jsonl(trace, r.trace);
      }
    } else if (*gap) {
      const HmmParams prior = load_hmm(gap_prior);
      const TemplateDistribution dist = load_templates(gap_templates);
      const OracleSource source(dist, gap_smoothing);
      const GapReport r = gap_experiment(prior, source, dist, gap_samples, gap_seed);
      if (gap_out.empty()) std::cout << to_json(r) << '\n';
      else open_out(gap_out) << to_json(r) << '\n';
    } else if (*cll) {
      const HmmParams prior = load_hmm(cll_prior);
      const auto seqs = corpus_sequences(load_corpus(cll_corpus), cll_split);
      if (seqs.empty()) throw InputError("no sequences in split '" + cll_split + "'");
      const auto source = cll_src.build(seqs.front().size());
      const CllCurve curve = cll_curve(prior, *source, seqs, cll_draws, cll_seed, cll_bin);
      if (cll_csv.empty()) {
        write_cll_csv(std::cout, curve);
      } else {
        std::ofstream out = open_out(cll_csv);
        write_cll_csv(out, curve);
      }
      if (!cll_json.empty()) open_out(cll_json) << to_json(curve) << '\n';
    } else if (*bench) {
      finish_decode_flags(dcfg, heuristic, sampler, ao_order);
      const HmmParams prior = load_hmm(bench_prior);
      bench_src.length = dcfg.length;
      const auto source = bench_src.build(dcfg.length);
      const std::vector<DecodeConfig> cfgs{dcfg};
      const auto cells = bench_overhead(prior, *source, cfgs, bench_reps);
      if (bench_csv.empty()) {
        write_bench_csv(std::cout, cells);
      } else {
        std::ofstream out = open_out(bench_csv);
        write_bench_csv(out, cells);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
