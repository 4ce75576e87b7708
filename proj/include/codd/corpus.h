#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codd/types.h"

namespace codd {

// One line of a corpus JSONL file: {id, tokens:[...], split, prompt_len?}.
struct CorpusEntry {
  std::string id;
  TokenVector tokens;
  std::string split = "train";
  std::optional<std::size_t> prompt_len;
};

void save_corpus(const std::filesystem::path& path, std::span<const CorpusEntry> entries);
std::vector<CorpusEntry> load_corpus(const std::filesystem::path& path);

// Token vectors of the entries whose split matches (all entries if empty).
std::vector<TokenVector> corpus_sequences(std::span<const CorpusEntry> entries, const std::string& split = "");

}  // namespace codd
