#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "ssrem/common.hpp"
#include "ssrem/corpus.hpp"

using namespace ssrem;

TEST_CASE("ingest accepts valid lines and rejects bad ones with line numbers") {
  std::istringstream in(
      R"({"conversation_id": "a", "turns": [{"speaker": "x", "text": "hi"}, {"speaker": "y", "text": "yo"}]})"
      "\n"
      R"({"conversation_id": "b", "turns": []})"
      "\n"
      R"({"conversation_id": "c", "turns": [{"speaker": "x", "text": "hi"}, {"speaker": "y", "text": "yo"}]})"
      "\n");
  const auto result = ingest(in);
  CHECK(result.conversations.size() == 2);
  REQUIRE(result.rejected.size() == 1);
  CHECK(result.rejected[0].line == 2);
}

TEST_CASE("ingest merges consecutive turns of one speaker by default") {
  const std::string line =
      R"({"conversation_id": "a", "turns": [{"speaker": "x", "text": "one"}, {"speaker": "x", "text": "two"}, {"speaker": "y", "text": "three"}]})";
  {
    std::istringstream in(line);
    const auto result = ingest(in);
    REQUIRE(result.conversations[0].turns.size() == 2);
    CHECK(result.conversations[0].turns[0].text == "one two");
  }
  {
    std::istringstream in(line);
    const auto result = ingest(in, IngestOptions{false});
    CHECK(result.conversations[0].turns.size() == 3);
  }
}

TEST_CASE("ingest rejects schema violations") {
  const char* bad[] = {
      R"(not json)",
      R"(["array"])",
      R"({"turns": [{"speaker": "x", "text": "a"}, {"speaker": "y", "text": "b"}]})",
      R"({"conversation_id": "a", "turns": [{"speaker": "x", "text": "a"}, {"speaker": "x", "text": "b"}]})",
      R"({"conversation_id": "a", "turns": [{"speaker": "x", "text": "   "}, {"speaker": "y", "text": "b"}]})",
      R"({"conversation_id": "a", "turns": [{"speaker": "", "text": "a"}, {"speaker": "y", "text": "b"}]})",
      R"({"conversation_id": "a", "turns": [{"speaker": 3, "text": "a"}, {"speaker": "y", "text": "b"}]})",
  };
  for (const char* line : bad) {
    std::istringstream in(std::string(line) + "\n" +
                          R"({"conversation_id": "ok", "turns": [{"speaker": "x", "text": "a"}, {"speaker": "y", "text": "b"}]})");
    const auto result = ingest(in);
    CHECK_MESSAGE(result.rejected.size() == 1, line);
  }
  std::istringstream empty("");
  CHECK_THROWS_AS(ingest(empty), DataError);
}

TEST_CASE("ingest warns about unknown keys and rejects duplicate ids") {
  std::vector<std::string> warnings;
  auto previous = set_warning_handler([&](std::string_view m) { warnings.emplace_back(m); });
  std::istringstream in(
      R"({"conversation_id": "a", "lang": "en", "turns": [{"speaker": "x", "text": "a"}, {"speaker": "y", "text": "b"}]})"
      "\n"
      R"({"conversation_id": "a", "turns": [{"speaker": "x", "text": "a"}, {"speaker": "y", "text": "b"}]})");
  const auto result = ingest(in);
  set_warning_handler(previous);
  CHECK(result.conversations.size() == 1);
  CHECK(result.rejected.size() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("lang") != std::string::npos);
}

TEST_CASE("canonical writer round-trips through ingest") {
  const Corpus corpus = fixtures::toy_corpus();
  std::ostringstream first;
  write_jsonl(corpus, first);
  std::istringstream in(first.str());
  const auto reread = ingest(in);
  CHECK(reread.conversations == corpus);
  std::ostringstream second;
  write_jsonl(reread.conversations, second);
  CHECK(first.str() == second.str());
}

TEST_CASE("speaker index on the three-conversation toy corpus") {
  const Corpus corpus = fixtures::toy_corpus();
  const SpeakerIndex index(corpus);
  const SpeakerId a = *index.find("A");
  const SpeakerId b = *index.find("B");
  const SpeakerId c = *index.find("C");

  std::set<std::uint32_t> convs;
  for (const auto& ref : index.turns_of(a)) convs.insert(ref.conversation);
  CHECK(convs.size() == 3);

  const auto groups = index.partner_groups(a);
  REQUIRE(groups.size() == 2);
  CHECK(index.conversations_with(a, {b}) == std::vector<std::uint32_t>{0, 1});
  CHECK(index.conversations_with(a, {c}) == std::vector<std::uint32_t>{2});
  CHECK(index.conversations_with(b, {a}) == std::vector<std::uint32_t>{0, 1});

  std::size_t covered = 0;
  for (SpeakerId s = 0; s < index.speaker_count(); ++s) {
    for (const auto& ref : index.turns_of(s)) {
      CHECK(index.turn(ref).speaker == index.name(s));
      ++covered;
    }
  }
  CHECK(covered == index.total_turns());
  CHECK(covered == 13);
}

TEST_CASE("speaker appearing once has one position") {
  const Corpus corpus = {{"c", {{"X", "hi"}, {"Y", "hello"}, {"Y2", "hey"}}}};
  const SpeakerIndex index(corpus);
  CHECK(index.turns_of(*index.find("X")).size() == 1);
  CHECK(index.partners(0, *index.find("X")).size() == 2);
}

TEST_CASE("context response pairs") {
  const Corpus corpus = fixtures::toy_corpus();
  const auto pairs = context_response_pairs(corpus);
  CHECK(pairs.size() == 4 + 3 + 3);
  for (const auto& p : pairs) {
    CHECK(p.k >= 1);
    CHECK(p.responder == corpus[p.conversation].turns[p.k].speaker);
  }
  CHECK(pairs[0].id() == "conv1#1");
}

TEST_CASE("largest remainder apportionment") {
  CHECK(apportion(10, {0.8, 0.1, 0.1}) == std::array<std::size_t, 3>{8, 1, 1});
  CHECK(apportion(3, {0.34, 0.33, 0.33}) == std::array<std::size_t, 3>{1, 1, 1});
  CHECK(apportion(7, {0.5, 0.25, 0.25}) == std::array<std::size_t, 3>{3, 2, 2});
  CHECK_THROWS_AS(apportion(10, {0.5, 0.5, 0.5}), UsageError);
  CHECK_THROWS_AS(apportion(10, {1.0, 0.0, 0.0}), UsageError);
}

TEST_CASE("split partitions by conversation deterministically") {
  Corpus corpus;
  for (int i = 0; i < 10; ++i) {
    corpus.push_back({"c" + std::to_string(i), {{"a", "x"}, {"b", "y"}}});
  }
  const auto s1 = split(corpus, {0.8, 0.1, 0.1}, 42);
  const auto s2 = split(corpus, {0.8, 0.1, 0.1}, 42);
  CHECK(s1.train.size() == 8);
  CHECK(s1.valid.size() == 1);
  CHECK(s1.test.size() == 1);
  CHECK(s1.train == s2.train);
  CHECK(s1.valid == s2.valid);
  std::multiset<std::string> ids;
  for (const auto* part : {&s1.train, &s1.valid, &s1.test}) {
    for (const auto& c : *part) ids.insert(c.id);
  }
  CHECK(ids.size() == 10);
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 10);
  CHECK_THROWS_AS(split(Corpus(corpus.begin(), corpus.begin() + 2), {0.8, 0.1, 0.1}, 1), DataError);
}
