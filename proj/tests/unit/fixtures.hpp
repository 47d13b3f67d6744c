#pragma once

#include <string>
#include <vector>

#include "ssrem/corpus.hpp"
#include "ssrem/embed.hpp"

namespace fixtures {

// Speaker A talks with B twice and with C once.
inline ssrem::Corpus toy_corpus() {
  return {
      {"conv1", {{"A", "hi b"}, {"B", "hey a"}, {"A", "movie tonight?"}, {"B", "sure"}, {"A", "great"}}},
      {"conv2", {{"B", "lunch?"}, {"A", "yes please"}, {"B", "noon"}, {"A", "see you"}}},
      {"conv3", {{"C", "hello a"}, {"A", "hello c"}, {"C", "how are you"}, {"A", "fine thanks"}}},
  };
}

inline std::vector<std::string> toks(const std::string& text) { return ssrem::tokenize(text); }

}  // namespace fixtures
