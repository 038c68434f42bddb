#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace langbal {

using TokenId = std::uint32_t;

// Token inventory. The mask token is a regular entry of `tokens()` at
// `mask_id()`; it never belongs to a filler or signal set. Synthetic
// vocabularies also record which ids are per-language filler and which are
// per-(language, class) signal; ingested vocabularies leave those sets empty.
class Vocab {
 public:
  using IdSet = std::vector<TokenId>;

  Vocab() = default;
  // Throws Error("corpus") when the set invariants do not hold.
  Vocab(std::vector<std::string> tokens, TokenId mask_id,
        std::vector<IdSet> fillers = {},
        std::vector<std::vector<IdSet>> signals = {});

  std::size_t size() const { return tokens_.size(); }
  TokenId mask_id() const { return mask_id_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::optional<TokenId> find(std::string_view token) const;

  // fillers()[l]: ids used only as filler in language l.
  const std::vector<IdSet>& fillers() const { return fillers_; }
  // signals()[l][c]: ids indicating class c in language l.
  const std::vector<std::vector<IdSet>>& signals() const { return signals_; }
  bool annotated() const { return !fillers_.empty(); }

  // Stable hex digest of the token strings and mask position.
  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  TokenId mask_id_ = 0;
  std::vector<IdSet> fillers_;
  std::vector<std::vector<IdSet>> signals_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Example {
  std::string id;
  int language = 0;
  int label = 0;
  std::vector<TokenId> tokens;

  bool operator==(const Example&) const = default;
};

// Vocabulary plus the dense language and label dictionaries.
struct Schema {
  Vocab vocab;
  std::vector<std::string> languages;
  std::vector<std::string> labels;

  int n_languages() const { return static_cast<int>(languages.size()); }
  int n_classes() const { return static_cast<int>(labels.size()); }
};

struct Corpus {
  Schema schema;
  std::vector<Example> examples;
};

struct CorpusSpec {
  int n_languages = 2;
  int n_classes = 3;
  int min_tokens = 8;
  int max_tokens = 12;
  double signal_rate = 0.3;
  double noise_rate = 0.1;
  int fillers_per_language = 50;
  int signals_per_cell = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusSpec& spec);
void from_json(const nlohmann::json& j, CorpusSpec& spec);

// Synthetic vocabulary for a spec. Depends only on the set sizes, never on
// the seed, so corpora generated from specs that differ only in rates or seed
// share token ids.
Schema synthetic_schema(const CorpusSpec& spec);

// Exactly `per_cell` examples for every (language, label) cell, ordered by
// language, then label, then counter. Ids are "lang:label:counter".
Corpus generate_corpus(const CorpusSpec& spec, int per_cell);

// Reads a JSONL dataset. Without a schema the vocabulary, languages and
// labels are built in first-seen order and a fresh mask token is appended.
// With a schema its dictionaries are used and unknown entries are errors.
Corpus load_jsonl(const std::filesystem::path& path);
Corpus load_jsonl(const std::filesystem::path& path, const Schema& schema);

void write_jsonl(const std::filesystem::path& path,
                 const std::vector<Example>& examples, const Schema& schema);

nlohmann::json schema_to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& j);
void write_schema(const std::filesystem::path& path, const Schema& schema);
Schema read_schema(const std::filesystem::path& path);

enum class TokenCategory { signal_pos, signal_other, filler, foreign };

std::string_view to_string(TokenCategory category);

// Ground-truth role of `token` for an example of (language, label).
// signal_other covers signal tokens of the same language for another class;
// anything outside the language's sets (including the mask) is foreign.
TokenCategory ground_truth_category(const Vocab& vocab, TokenId token,
                                    int language, int label);

}  // namespace langbal
