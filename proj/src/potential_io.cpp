#include <fstream>
#include <limits>

#include <json.hpp>

#include "binary_io.h"
#include "codd/denoiser.h"
#include "codd/error.h"

namespace codd {

namespace {
constexpr std::string_view kMagic = "CODDPOT1";
constexpr std::size_t kMaxCells = std::size_t{1} << 31;
}  // namespace

void write_potentials(std::ostream& out, std::size_t length, std::size_t vocab,
                      std::span<const PotentialRecord> records) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u32(static_cast<std::uint32_t>(length));
  w.u32(static_cast<std::uint32_t>(vocab));
  for (const PotentialRecord& r : records) {
    if (r.state.length() != length || r.grid.length() != length || r.grid.vocab_size() != vocab)
      throw InputError("write_potentials: record dimensions differ from header");
    for (std::size_t i = 0; i < length; ++i) w.u8(r.state.masked(i) ? 1 : 0);
    for (std::size_t i = 0; i < length; ++i) w.u32(static_cast<std::uint32_t>(r.state.token(i)));
    if (r.ground_truth) {
      if (r.ground_truth->size() != length) throw InputError("write_potentials: ground truth has wrong length");
      w.u8(1);
      for (Token t : *r.ground_truth) w.u32(static_cast<std::uint32_t>(t));
    } else {
      w.u8(0);
    }
    for (double x : r.grid.data()) w.f32(static_cast<float>(x));
  }
  w.flush_to(out);
}

PotentialBatch read_potentials(std::istream& in) {
  auto r = detail::ByteReader::from_stream(in);
  r.expect_magic(kMagic);
  PotentialBatch batch;
  const std::size_t count = r.u32();
  batch.length = r.u32();
  batch.vocab = r.u32();
  if (batch.vocab == 0) throw FormatError("vocabulary size is zero", r.offset());
  if (batch.length > kMaxCells / batch.vocab) throw FormatError("dimension overflow: L x V too large", r.offset());
  const std::size_t len = batch.length, v = batch.vocab;
  const std::size_t min_record = len * 5 + 1 + len * v * 4;
  r.require_bytes(count, min_record, "potential records");
  batch.records.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<char> mask(len);
    for (auto& m : mask) {
      const std::size_t at = r.offset();
      const auto b = r.u8();
      if (b > 1) throw FormatError("mask byte must be 0 or 1", at);
      m = static_cast<char>(b);
    }
    TokenVector tokens(len);
    for (auto& t : tokens) t = static_cast<Token>(r.u32());
    std::optional<TokenVector> truth;
    const std::size_t flag_at = r.offset();
    const auto flag = r.u8();
    if (flag > 1) throw FormatError("ground-truth flag must be 0 or 1", flag_at);
    if (flag == 1) {
      r.require_bytes(len, 4, "ground-truth tokens");
      truth.emplace(len);
      for (auto& t : *truth) t = static_cast<Token>(r.u32());
    }
    r.require_bytes(len * v, 4, "potential grid");
    std::vector<double> grid(len * v);
    for (double& x : grid) x = static_cast<double>(r.f32());
    std::size_t adjusted = 0;
    const std::size_t grid_at = r.offset();
    MaskedSequence state(std::move(tokens), std::move(mask));
    try {
      state.check_tokens(v);
      auto g = PotentialGrid::from_log_potentials(len, v, std::move(grid), &adjusted);
      batch.records.push_back({std::move(state), std::move(g), std::move(truth)});
    } catch (const InputError& e) {
      throw FormatError(std::string("invalid record ") + std::to_string(k) + ": " + e.what(), grid_at);
    }
    batch.adjusted_rows += adjusted;
  }
  if (!r.at_end()) throw FormatError("trailing bytes after potential records", r.offset());
  return batch;
}

void save_potentials(const std::filesystem::path& path, std::size_t length, std::size_t vocab,
                     std::span<const PotentialRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_potentials(out, length, vocab, records);
  if (!out) throw Error("failed writing " + path.string());
}

PotentialBatch load_potentials(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_potentials(in);
}

void save_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const ManifestEntry& e : entries) {
    nlohmann::json j{{"id", e.id}, {"source", e.source}, {"split", e.split}};
    if (e.t) j["t"] = *e.t;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        const auto j = nlohmann::json::parse(line);
        ManifestEntry e{j.at("id").get<std::string>(), j.at("source").get<std::string>(),
                        j.at("split").get<std::string>(), std::nullopt};
        if (j.contains("t")) e.t = j.at("t").get<double>();
        out.push_back(std::move(e));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad manifest line: ") + e.what(), offset);
      }
    }
    offset += line.size() + 1;
  }
  return out;
}

}  // namespace codd
