#include <cmath>
#include <functional>
#include <map>
#include <set>

#include "doctest.h"
#include "langbal/corpus.hpp"
#include "langbal/error.hpp"
#include "support.hpp"

using namespace langbal;

namespace {

CorpusSpec spec_2x3() {
  CorpusSpec s;
  s.n_languages = 2;
  s.n_classes = 3;
  s.min_tokens = 10;
  s.max_tokens = 10;
  s.signal_rate = 0.3;
  s.noise_rate = 0.1;
  s.seed = 42;
  return s;
}

bool within_3sigma(long hits, long n, double p) {
  const double mu = n * p;
  return std::abs(hits - mu) <= 3.0 * std::sqrt(n * p * (1.0 - p));
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("degenerate rates put every token in the true signal set") {
  CorpusSpec s;
  s.n_classes = 2;
  s.signal_rate = 1.0;
  s.noise_rate = 0.0;
  s.seed = 3;
  const Corpus c = generate_corpus(s, 20);
  CHECK(c.examples.size() == 80);
  for (const Example& ex : c.examples) {
    for (TokenId t : ex.tokens) {
      CHECK(ground_truth_category(c.schema.vocab, t, ex.language, ex.label) == TokenCategory::signal_pos);
    }
  }
}

TEST_CASE("per-cell counts are exact and category draws match the rates") {
  const Corpus c = generate_corpus(spec_2x3(), 200);
  CHECK(c.examples.size() == 1200);
  std::map<std::pair<int, int>, int> cells;
  long pos = 0, other = 0, filler = 0, total = 0;
  for (const Example& ex : c.examples) {
    ++cells[{ex.language, ex.label}];
    CHECK(ex.tokens.size() == 10);
    for (TokenId t : ex.tokens) {
      CHECK(t != c.schema.vocab.mask_id());
      switch (ground_truth_category(c.schema.vocab, t, ex.language, ex.label)) {
        case TokenCategory::signal_pos: ++pos; break;
        case TokenCategory::signal_other: ++other; break;
        case TokenCategory::filler: ++filler; break;
        case TokenCategory::foreign: FAIL("foreign token in generated example");
      }
      ++total;
    }
  }
  for (const auto& [cell, n] : cells) CHECK(n == 200);
  CHECK(cells.size() == 6);
  CHECK(total == 12000);
  CHECK(within_3sigma(pos, total, 0.3));
  CHECK(within_3sigma(other, total, 0.1));
  CHECK(within_3sigma(filler, total, 0.6));
}

TEST_CASE("100 per cell gives 600 examples with ids lang:label:counter") {
  const Corpus c = generate_corpus(spec_2x3(), 100);
  CHECK(c.examples.size() == 600);
  CHECK(c.examples.front().id == "0:0:0");
  CHECK(c.examples.back().id == "1:2:99");
}

TEST_CASE("same seed gives byte-identical corpora, another seed does not") {
  const auto dir = support::scratch("corpus_determinism");
  const Corpus a = generate_corpus(spec_2x3(), 50);
  const Corpus b = generate_corpus(spec_2x3(), 50);
  write_jsonl(dir / "a.jsonl", a.examples, a.schema);
  write_jsonl(dir / "b.jsonl", b.examples, b.schema);
  CHECK(support::slurp(dir / "a.jsonl") == support::slurp(dir / "b.jsonl"));
  CorpusSpec other = spec_2x3();
  other.seed = 43;
  CHECK(generate_corpus(other, 50).examples != a.examples);
}

TEST_CASE("synthetic vocabulary satisfies the set invariants") {
  const Schema s = synthetic_schema(spec_2x3());
  const Vocab& v = s.vocab;
  std::set<TokenId> seen;
  std::size_t members = 0;
  for (const auto& f : v.fillers()) {
    CHECK(f.size() == 50);
    for (TokenId t : f) { seen.insert(t); ++members; }
  }
  for (const auto& row : v.signals()) {
    for (const auto& sig : row) {
      CHECK(sig.size() == 10);
      for (TokenId t : sig) { seen.insert(t); ++members; }
    }
  }
  CHECK(seen.size() == members);
  CHECK(!seen.count(v.mask_id()));
  CHECK(*seen.rbegin() < v.size());
  CHECK(v.size() == 2 * 50 + 6 * 10 + 1);
}

TEST_CASE("Vocab rejects overlapping sets and a mask inside a set") {
  const std::vector<std::string> toks = {"a", "b", "c", "[MASK]"};
  CHECK_THROWS_AS(Vocab(toks, 3, {{0}, {0}}, {{{1}}, {{2}}}), Error);
  CHECK_THROWS_AS(Vocab(toks, 3, {{3}, {0}}, {{{1}}, {{2}}}), Error);
  CHECK_THROWS_AS(Vocab(toks, 3, {{0}, {1}}, {{{2}}, {{2}}}), Error);
  CHECK_NOTHROW(Vocab(toks, 3, {{0}, {1}}, {{{2}}, {{}}}));
}

TEST_CASE("invalid specs are rejected") {
  CorpusSpec s = spec_2x3();
  s.signal_rate = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec_2x3();
  s.signal_rate = 0.7;
  s.noise_rate = 0.4;
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec_2x3();
  s.n_languages = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec_2x3();
  s.signals_per_cell = 0;
  CHECK_THROWS_AS(generate_corpus(s, 1), Error);
  s = spec_2x3();
  s.fillers_per_language = 0;
  CHECK_THROWS_AS(generate_corpus(s, 1), Error);
}

TEST_CASE("ground_truth_category examples") {
  const Schema s = synthetic_schema(spec_2x3());
  const Vocab& v = s.vocab;
  CHECK(ground_truth_category(v, v.signals()[0][1][0], 0, 1) == TokenCategory::signal_pos);
  CHECK(ground_truth_category(v, v.signals()[0][2][0], 0, 1) == TokenCategory::signal_other);
  CHECK(ground_truth_category(v, v.fillers()[0][0], 0, 1) == TokenCategory::filler);
  CHECK(ground_truth_category(v, v.fillers()[1][0], 0, 1) == TokenCategory::foreign);
  CHECK(ground_truth_category(v, v.signals()[1][1][0], 0, 1) == TokenCategory::foreign);
  CHECK(ground_truth_category(v, v.mask_id(), 0, 1) == TokenCategory::foreign);
  CHECK_THROWS_AS(ground_truth_category(v, static_cast<TokenId>(v.size()), 0, 1), Error);
}

TEST_CASE("load_jsonl builds dictionaries in first-seen order") {
  const auto dir = support::scratch("jsonl_basic");
  support::write_lines(dir / "d.jsonl",
                       {R"({"id":"x1","lang":"fr","label":"pos","tokens":["bon","film"]})",
                        R"({"id":"x2","lang":"en","label":1,"text":"good  film","extra":true})",
                        R"({"id":"x3","lang":"fr","label":"neg","tokens":["mauvais"]})"});
  const Corpus c = load_jsonl(dir / "d.jsonl");
  REQUIRE(c.examples.size() == 3);
  CHECK(c.schema.languages == std::vector<std::string>{"fr", "en"});
  CHECK(c.schema.labels == std::vector<std::string>{"pos", "1", "neg"});
  // bon film good mauvais + mask
  CHECK(c.schema.vocab.size() == 5);
  CHECK(c.schema.vocab.mask_id() == 4);
  CHECK(c.examples[1].tokens == std::vector<TokenId>{2, 1});
  CHECK(c.examples[2].language == 0);
  CHECK(c.examples[2].label == 2);
}

TEST_CASE("load_jsonl errors name the line or the id") {
  const auto dir = support::scratch("jsonl_errors");
  support::write_lines(dir / "missing.jsonl", {R"({"id":"a","lang":"fr","label":0,"tokens":["x"]})",
                                               R"({"id":"b","lang":"fr","tokens":["y"]})"});
  const std::string missing = error_of([&] { load_jsonl(dir / "missing.jsonl"); });
  CHECK(missing.find("line 2") != std::string::npos);
  CHECK(missing.find("label") != std::string::npos);

  support::write_lines(dir / "dup.jsonl", {R"({"id":"same","lang":"fr","label":0,"tokens":["x"]})",
                                           R"({"id":"same","lang":"en","label":1,"tokens":["y"]})"});
  CHECK(error_of([&] { load_jsonl(dir / "dup.jsonl"); }).find("\"same\"") != std::string::npos);

  support::write_lines(dir / "bad.jsonl", {R"({"id":"a","lang":"fr","label":0,"tokens":["x"]})", "{nope"});
  CHECK(error_of([&] { load_jsonl(dir / "bad.jsonl"); }).find("line 2") != std::string::npos);

  CHECK_THROWS_AS(load_jsonl(dir / "absent.jsonl"), Error);
}

TEST_CASE("JSONL round trip reproduces examples field for field") {
  const auto dir = support::scratch("jsonl_roundtrip");
  const Corpus c = generate_corpus(spec_2x3(), 10);
  write_jsonl(dir / "c.jsonl", c.examples, c.schema);
  write_schema(dir / "schema.json", c.schema);

  const Schema s = read_schema(dir / "schema.json");
  CHECK(s.vocab.hash() == c.schema.vocab.hash());
  CHECK(s.vocab.fillers() == c.schema.vocab.fillers());
  CHECK(s.vocab.signals() == c.schema.vocab.signals());
  CHECK(load_jsonl(dir / "c.jsonl", s).examples == c.examples);

  // Without the sidecar ids are re-densified; the surface strings still match.
  const Corpus fresh = load_jsonl(dir / "c.jsonl");
  REQUIRE(fresh.examples.size() == c.examples.size());
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    const Example& a = c.examples[i];
    const Example& b = fresh.examples[i];
    CHECK(a.id == b.id);
    CHECK(c.schema.languages[a.language] == fresh.schema.languages[b.language]);
    CHECK(c.schema.labels[a.label] == fresh.schema.labels[b.label]);
    REQUIRE(a.tokens.size() == b.tokens.size());
    for (std::size_t k = 0; k < a.tokens.size(); ++k) {
      CHECK(c.schema.vocab.token(a.tokens[k]) == fresh.schema.vocab.token(b.tokens[k]));
    }
  }
}

TEST_CASE("an observed [MASK] string does not collide with the fresh mask") {
  const auto dir = support::scratch("jsonl_mask");
  support::write_lines(dir / "m.jsonl", {R"({"id":"a","lang":"fr","label":0,"tokens":["[MASK]","x"]})"});
  const Corpus c = load_jsonl(dir / "m.jsonl");
  CHECK(c.schema.vocab.size() == 3);
  CHECK(c.schema.vocab.token(c.schema.vocab.mask_id()) != "[MASK]");
  CHECK(c.examples[0].tokens[0] != c.schema.vocab.mask_id());
}
