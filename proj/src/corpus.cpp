#include "langbal/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "langbal/error.hpp"
#include "langbal/rng.hpp"

namespace langbal {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) {
  throw Error("corpus", message);
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

// Interns strings into a dense id space in first-seen order.
class Dictionary {
 public:
  int intern(const std::string& key) {
    auto [it, inserted] = ids_.emplace(key, static_cast<int>(names_.size()));
    if (inserted) names_.push_back(key);
    return it->second;
  }
  std::vector<std::string> names() && { return std::move(names_); }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> names_;
};

std::optional<int> lookup(const std::vector<std::string>& names,
                          const std::string& key) {
  auto it = std::find(names.begin(), names.end(), key);
  if (it == names.end()) return std::nullopt;
  return static_cast<int>(it - names.begin());
}

struct RawRecord {
  std::string id;
  std::string lang;
  std::string label;
  std::vector<std::string> tokens;
};

RawRecord parse_record(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(where + "invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) fail(where + "record is not a JSON object");
  RawRecord r;
  auto require_string = [&](const char* key) -> std::string {
    if (!j.contains(key)) fail(where + "missing field \"" + key + "\"");
    if (!j[key].is_string()) fail(where + "field \"" + key + "\" must be a string");
    return j[key].get<std::string>();
  };
  r.id = require_string("id");
  r.lang = require_string("lang");
  if (!j.contains("label")) fail(where + "missing field \"label\"");
  const json& label = j["label"];
  if (label.is_string()) {
    r.label = label.get<std::string>();
  } else if (label.is_number_integer()) {
    r.label = std::to_string(label.get<long long>());
  } else {
    fail(where + "field \"label\" must be a string or an integer");
  }
  if (j.contains("tokens")) {
    if (!j["tokens"].is_array()) fail(where + "field \"tokens\" must be an array");
    for (const json& t : j["tokens"]) {
      if (!t.is_string()) fail(where + "tokens must be strings");
      r.tokens.push_back(t.get<std::string>());
    }
  } else if (j.contains("text")) {
    if (!j["text"].is_string()) fail(where + "field \"text\" must be a string");
    r.tokens = split_whitespace(j["text"].get<std::string>());
  } else {
    fail(where + "record needs \"tokens\" or \"text\"");
  }
  if (r.tokens.empty()) fail(where + "record has no tokens");
  return r;
}

template <typename OnRecord>
void for_each_record(const std::filesystem::path& path, OnRecord&& on_record) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::unordered_set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RawRecord r = parse_record(line, line_no);
    if (!seen_ids.insert(r.id).second) {
      fail("line " + std::to_string(line_no) + ": duplicate id \"" + r.id + "\"");
    }
    on_record(std::move(r), line_no);
  }
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens, TokenId mask_id,
             std::vector<IdSet> fillers, std::vector<std::vector<IdSet>> signals)
    : tokens_(std::move(tokens)),
      mask_id_(mask_id),
      fillers_(std::move(fillers)),
      signals_(std::move(signals)) {
  if (mask_id_ >= tokens_.size()) fail("mask id out of range");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      fail("duplicate token string \"" + tokens_[i] + "\"");
    }
  }
  if (fillers_.empty() != signals_.empty()) {
    fail("filler and signal sets must be given together");
  }
  if (!signals_.empty() && signals_.size() != fillers_.size()) {
    fail("signal sets must cover the same languages as filler sets");
  }
  // Every annotated id may belong to at most one set, and never the mask.
  std::vector<char> owned(tokens_.size(), 0);
  auto claim = [&](const IdSet& set, const char* what) {
    for (TokenId id : set) {
      if (id >= tokens_.size()) fail(std::string(what) + " id out of range");
      if (id == mask_id_) fail(std::string(what) + " set contains the mask id");
      if (owned[id]) fail("token id " + std::to_string(id) + " is in more than one set");
      owned[id] = 1;
    }
  };
  for (const IdSet& set : fillers_) claim(set, "filler");
  for (const auto& per_class : signals_) {
    for (const IdSet& set : per_class) claim(set, "signal");
  }
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Vocab::hash() const {
  std::uint64_t h = fnv1a("langbal-vocab");
  for (const std::string& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\n", 1), h);
  }
  h = fnv1a(std::to_string(mask_id_), h);
  return hex64(h);
}

void CorpusSpec::validate() const {
  if (n_languages < 2) fail("n_languages must be at least 2");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (min_tokens < 1 || max_tokens < min_tokens) fail("invalid token length range");
  if (!(signal_rate > 0.0 && signal_rate <= 1.0)) fail("signal_rate must be in (0, 1]");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) fail("noise_rate must be in [0, 1)");
  if (signal_rate + noise_rate > 1.0) fail("signal_rate + noise_rate must not exceed 1");
  if (signals_per_cell < 1) fail("signal sets would be empty (signals_per_cell < 1)");
  if (signal_rate + noise_rate < 1.0 && fillers_per_language < 1) {
    fail("filler sets would be empty (fillers_per_language < 1)");
  }
  if (fillers_per_language < 0) fail("fillers_per_language must be non-negative");
}

void to_json(json& j, const CorpusSpec& s) {
  j = json{{"n_languages", s.n_languages},
           {"n_classes", s.n_classes},
           {"min_tokens", s.min_tokens},
           {"max_tokens", s.max_tokens},
           {"signal_rate", s.signal_rate},
           {"noise_rate", s.noise_rate},
           {"fillers_per_language", s.fillers_per_language},
           {"signals_per_cell", s.signals_per_cell},
           {"seed", s.seed}};
}

void from_json(const json& j, CorpusSpec& s) {
  CorpusSpec d;
  s.n_languages = j.value("n_languages", d.n_languages);
  s.n_classes = j.value("n_classes", d.n_classes);
  s.min_tokens = j.value("min_tokens", d.min_tokens);
  s.max_tokens = j.value("max_tokens", d.max_tokens);
  s.signal_rate = j.value("signal_rate", d.signal_rate);
  s.noise_rate = j.value("noise_rate", d.noise_rate);
  s.fillers_per_language = j.value("fillers_per_language", d.fillers_per_language);
  s.signals_per_cell = j.value("signals_per_cell", d.signals_per_cell);
  s.seed = j.value("seed", d.seed);
}

Schema synthetic_schema(const CorpusSpec& spec) {
  spec.validate();
  const int L = spec.n_languages;
  const int C = spec.n_classes;
  std::vector<std::string> tokens;
  std::vector<Vocab::IdSet> fillers(L);
  std::vector<std::vector<Vocab::IdSet>> signals(L, std::vector<Vocab::IdSet>(C));
  auto add = [&](std::string s) {
    tokens.push_back(std::move(s));
    return static_cast<TokenId>(tokens.size() - 1);
  };
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < spec.fillers_per_language; ++i) {
      fillers[l].push_back(add("l" + std::to_string(l) + "_f" + std::to_string(i)));
    }
  }
  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < spec.signals_per_cell; ++i) {
        signals[l][c].push_back(add("l" + std::to_string(l) + "_c" +
                                    std::to_string(c) + "_s" + std::to_string(i)));
      }
    }
  }
  const TokenId mask = add("[MASK]");
  Schema schema{Vocab(std::move(tokens), mask, std::move(fillers), std::move(signals)),
                {}, {}};
  for (int l = 0; l < L; ++l) schema.languages.push_back("lang" + std::to_string(l));
  for (int c = 0; c < C; ++c) schema.labels.push_back(std::to_string(c));
  return schema;
}

Corpus generate_corpus(const CorpusSpec& spec, int per_cell) {
  if (per_cell < 0) fail("examples per cell must be non-negative");
  Corpus corpus{synthetic_schema(spec), {}};
  const Vocab& vocab = corpus.schema.vocab;
  const int L = spec.n_languages;
  const int C = spec.n_classes;
  corpus.examples.reserve(static_cast<std::size_t>(L) * C * per_cell);

  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < C; ++c) {
      // One stream per cell so cell contents do not depend on the cell count.
      Rng rng(derive_seed(derive_seed(spec.seed, "corpus"),
                          static_cast<std::uint64_t>(l) * 1000003u + c));
      const auto& own = vocab.signals()[l][c];
      const auto& filler = vocab.fillers()[l];
      for (int k = 0; k < per_cell; ++k) {
        Example ex;
        ex.id = std::to_string(l) + ":" + std::to_string(c) + ":" + std::to_string(k);
        ex.language = l;
        ex.label = c;
        const int len = spec.min_tokens + static_cast<int>(uniform_index(
                            rng, static_cast<std::uint64_t>(spec.max_tokens - spec.min_tokens + 1)));
        ex.tokens.reserve(len);
        for (int pos = 0; pos < len; ++pos) {
          const double u = uniform01(rng);
          if (u < spec.signal_rate) {
            ex.tokens.push_back(own[uniform_index(rng, own.size())]);
          } else if (u < spec.signal_rate + spec.noise_rate) {
            int other = static_cast<int>(uniform_index(rng, C - 1));
            if (other >= c) ++other;
            const auto& set = vocab.signals()[l][other];
            ex.tokens.push_back(set[uniform_index(rng, set.size())]);
          } else {
            ex.tokens.push_back(filler[uniform_index(rng, filler.size())]);
          }
        }
        corpus.examples.push_back(std::move(ex));
      }
    }
  }
  return corpus;
}

Corpus load_jsonl(const std::filesystem::path& path) {
  Dictionary tokens, languages, labels;
  std::vector<Example> examples;
  for_each_record(path, [&](RawRecord r, std::size_t) {
    Example ex;
    ex.id = std::move(r.id);
    ex.language = languages.intern(r.lang);
    ex.label = labels.intern(r.label);
    for (const std::string& t : r.tokens) {
      ex.tokens.push_back(static_cast<TokenId>(tokens.intern(t)));
    }
    examples.push_back(std::move(ex));
  });
  std::vector<std::string> token_names = std::move(tokens).names();
  std::string mask = "[MASK]";
  while (std::find(token_names.begin(), token_names.end(), mask) != token_names.end()) {
    mask += "_";
  }
  token_names.push_back(mask);
  const auto mask_id = static_cast<TokenId>(token_names.size() - 1);
  return Corpus{Schema{Vocab(std::move(token_names), mask_id), std::move(languages).names(),
                       std::move(labels).names()},
                std::move(examples)};
}

Corpus load_jsonl(const std::filesystem::path& path, const Schema& schema) {
  Corpus corpus{schema, {}};
  for_each_record(path, [&](RawRecord r, std::size_t line_no) {
    const std::string where = "line " + std::to_string(line_no) + ": ";
    Example ex;
    ex.id = std::move(r.id);
    auto lang = lookup(schema.languages, r.lang);
    if (!lang) fail(where + "unknown language \"" + r.lang + "\"");
    auto label = lookup(schema.labels, r.label);
    if (!label) fail(where + "unknown label \"" + r.label + "\"");
    ex.language = *lang;
    ex.label = *label;
    for (const std::string& t : r.tokens) {
      auto id = schema.vocab.find(t);
      if (!id) fail(where + "token \"" + t + "\" is not in the vocabulary");
      if (*id == schema.vocab.mask_id()) fail(where + "input contains the mask token");
      ex.tokens.push_back(*id);
    }
    corpus.examples.push_back(std::move(ex));
  });
  return corpus;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples,
                 const Schema& schema) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path.string());
  for (const Example& ex : examples) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["lang"] = schema.languages.at(ex.language);
    j["label"] = schema.labels.at(ex.label);
    auto& toks = j["tokens"] = nlohmann::ordered_json::array();
    for (TokenId t : ex.tokens) toks.push_back(schema.vocab.token(t));
    out << j.dump() << '\n';
  }
  if (!out) fail("write failed for " + path.string());
}

json schema_to_json(const Schema& schema) {
  const Vocab& v = schema.vocab;
  json j;
  j["tokens"] = v.tokens();
  j["mask_id"] = v.mask_id();
  j["vocab_hash"] = v.hash();
  j["languages"] = schema.languages;
  j["labels"] = schema.labels;
  if (v.annotated()) {
    j["fillers"] = v.fillers();
    j["signals"] = v.signals();
  }
  return j;
}

Schema schema_from_json(const json& j) {
  try {
    std::vector<Vocab::IdSet> fillers;
    std::vector<std::vector<Vocab::IdSet>> signals;
    if (j.contains("fillers")) {
      fillers = j.at("fillers").get<std::vector<Vocab::IdSet>>();
      signals = j.at("signals").get<std::vector<std::vector<Vocab::IdSet>>>();
    }
    Schema s{Vocab(j.at("tokens").get<std::vector<std::string>>(),
                   j.at("mask_id").get<TokenId>(), std::move(fillers), std::move(signals)),
             j.at("languages").get<std::vector<std::string>>(),
             j.at("labels").get<std::vector<std::string>>()};
    if (j.contains("vocab_hash") && j["vocab_hash"].get<std::string>() != s.vocab.hash()) {
      fail("schema vocab_hash does not match its token list");
    }
    return s;
  } catch (const json::exception& e) {
    fail(std::string("malformed schema: ") + e.what());
  }
}

void write_schema(const std::filesystem::path& path, const Schema& schema) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path.string());
  out << schema_to_json(schema).dump(1) << '\n';
}

Schema read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail("schema " + path.string() + ": " + e.what());
  }
  return schema_from_json(j);
}

std::string_view to_string(TokenCategory category) {
  switch (category) {
    case TokenCategory::signal_pos: return "signal_pos";
    case TokenCategory::signal_other: return "signal_other";
    case TokenCategory::filler: return "filler";
    case TokenCategory::foreign: return "foreign";
  }
  return "foreign";
}

TokenCategory ground_truth_category(const Vocab& vocab, TokenId token, int language,
                                    int label) {
  if (token >= vocab.size()) fail("token id " + std::to_string(token) + " out of range");
  if (!vocab.annotated() || language < 0 ||
      language >= static_cast<int>(vocab.fillers().size())) {
    return TokenCategory::foreign;
  }
  auto contains = [token](const Vocab::IdSet& set) {
    return std::find(set.begin(), set.end(), token) != set.end();
  };
  if (contains(vocab.fillers()[language])) return TokenCategory::filler;
  const auto& per_class = vocab.signals()[language];
  for (int c = 0; c < static_cast<int>(per_class.size()); ++c) {
    if (contains(per_class[c])) {
      return c == label ? TokenCategory::signal_pos : TokenCategory::signal_other;
    }
  }
  return TokenCategory::foreign;
}

}  // namespace langbal
