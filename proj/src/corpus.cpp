#include "codd/corpus.h"

#include <fstream>

#include <json.hpp>

#include "codd/error.h"

namespace codd {

void save_corpus(const std::filesystem::path& path, std::span<const CorpusEntry> entries) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const CorpusEntry& e : entries) {
    nlohmann::json j{{"id", e.id}, {"tokens", e.tokens}, {"split", e.split}};
    if (e.prompt_len) j["prompt_len"] = *e.prompt_len;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<CorpusEntry> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<CorpusEntry> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        const auto j = nlohmann::json::parse(line);
        CorpusEntry e;
        e.id = j.at("id").get<std::string>();
        e.tokens = j.at("tokens").get<TokenVector>();
        e.split = j.value("split", std::string("train"));
        if (j.contains("prompt_len")) e.prompt_len = j.at("prompt_len").get<std::size_t>();
        out.push_back(std::move(e));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad corpus line: ") + e.what(), offset);
      }
    }
    offset += line.size() + 1;
  }
  return out;
}

std::vector<TokenVector> corpus_sequences(std::span<const CorpusEntry> entries, const std::string& split) {
  std::vector<TokenVector> out;
  for (const CorpusEntry& e : entries)
    if (split.empty() || e.split == split) out.push_back(e.tokens);
  return out;
}

}  // namespace codd
