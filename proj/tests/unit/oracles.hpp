#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssrem/embed.hpp"

namespace oracles {

using ssrem::EmbeddingTable;

struct BleuCase {
  const char* reference;
  const char* candidate;
  double chen_cherry;  // current NLTK sentence_bleu, method7
  double legacy4;      // NLTK 3.4.5, 4-gram weights (NaN: NLTK raises)
  double legacy3;      // NLTK 3.4.5, 3-gram weights
  double rouge;        // brute-force LCS F1
};

// Generated by tests/oracles/metric_oracles.py.
inline const BleuCase kCases[] = {
    {"yeah let's go to the theater", "the weather is no good for walking", 0.10482090744790598, 0.28069502124082862, 0.32110249128014345, 0.15384615384615383},
    {"yeah let's go to the theater", "the sight is extra beautiful here", 0.11133131628989178, 0.27646153585956462, 0.31854199658016114, 0.16666666666666666},
    {"yeah let's go to the theater", "enjoy your concert", 0, 0, 0, 0},
    {"yeah let's go to the theater", "that sounds good ! have you seen thor ?", 0, 0, 0, 0},
    {"yeah let's go to the theater", "good , what movie ?", 0, 0, 0, 0},
    {"yeah let's go to the theater", "or hang out in city", 0, 0, 0, 0},
    {"the cat sat on the mat", "the cat sat on the mat", 1.1167470964180197, 1.1167470964180197, 1.1538875781891342, 1},
    {"the cat sat on the mat", "the cat is on the mat", 0.41010744832592433, 0.45857026306779092, 0.59463234211085603, 0.83333333333333337},
    {"a b c d e f g", "a b c d x f g", 0.54748529170136306, 0.54748529170136306, 0.67732362916747335, 0.8571428571428571},
    {"i love you", "i love you too", 0.5174850954454262, 0.52231477355256373, 0.68638698263979703, 0.8571428571428571},
    {"hello world", "hello", 0.070798431463220443, NAN, NAN, 0.66666666666666663},
    {"the cat", "the the the the", 0.1394721495522781, 0.26505278683040973, 0.31356967053774815, 0.33333333333333331},
    {"it is a guide to action that ensures that the military will forever heed party commands",
     "it is a guide to action which ensures that the military always obeys the commands of the party",
     0.50000798863095275, 0.50000798863095275, 0.59006348574844014, 0.6470588235294118},
    {"let's go to the movie theater tonight", "go to the movie tonight", 0.49640918751477242, 0.49640918751477242, 0.55777125370614866, 0.83333333333333326},
    {"yes", "yes", 0.19245008972987526, NAN, NAN, 1},
};

// Minimum over all basic feasible solutions: every set of m + n - 1 cells whose
// equality system has a unique nonnegative solution.
inline double brute_force_transport(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                             const Eigen::MatrixXd& cost) {
  const int m = static_cast<int>(a.size());
  const int n = static_cast<int>(b.size());
  const int cells = m * n;
  const int k = m + n - 1;
  Eigen::VectorXd rhs(m + n);
  rhs << a, b;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) pick[static_cast<std::size_t>(i)] = i;
  while (true) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m + n, k);
    for (int s = 0; s < k; ++s) {
      const int cell = pick[static_cast<std::size_t>(s)];
      A(cell / n, s) = 1;
      A(m + cell % n, s) = 1;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() == k) {
      const Eigen::VectorXd x = qr.solve(rhs);
      if ((A * x - rhs).norm() < 1e-10 && x.minCoeff() > -1e-12) {
        double c = 0;
        for (int s = 0; s < k; ++s) {
          const int cell = pick[static_cast<std::size_t>(s)];
          c += x(s) * cost(cell / n, cell % n);
        }
        best = std::min(best, c);
      }
    }
    int i = k - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == cells - k + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
  return best;
}

// Closed-form 4-d word vectors shared with metric_oracles.py.
inline std::vector<double> oracle_vector(const std::string& word) {
  double h = 0;
  for (std::size_t j = 0; j < word.size(); ++j)
    h += static_cast<double>(j + 1) * static_cast<unsigned char>(word[j]);
  std::vector<double> v(4);
  for (std::size_t i = 0; i < 4; ++i) v[i] = std::sin(0.37 * static_cast<double>(i + 1) + 0.011 * h);
  return v;
}

inline EmbeddingTable oracle_table(const std::vector<std::string>& words) {
  EmbeddingTable table(4);
  for (const auto& w : words) table.add(w, oracle_vector(w));
  return table;
}

struct EmbCase {
  const char* reference;
  const char* candidate;
  double emb;    // cosine of mean vectors
  double mover;  // exp(-s_wms distance), scipy linprog
};

// metric_oracles.py --embedding
inline const EmbCase kEmbCases[] = {
    {"yeah let's go to the theater", "the weather is no good for walking", -0.79506580407948202, 0.48381448762070733},
    {"yeah let's go to the theater", "the sight is extra beautiful here", 0.37019290629273705, 0.56374309131647682},
    {"yeah let's go to the theater", "enjoy your concert", -0.96797757345365487, 0.23453325659105259},
    {"yeah let's go to the theater", "that sounds good ! have you seen thor ?", -0.99724735401764075, 0.2481938252279379},
    {"yeah let's go to the theater", "good , what movie ?", -0.97422682355336832, 0.27972929358462628},
    {"yeah let's go to the theater", "or hang out in city", 0.70263954007362261, 0.68799482640373721},
    {"the cat sat on the mat", "the cat sat on the mat", 1.0000000000000002, 1},
    {"the cat sat on the mat", "the cat is on the mat", 0.99933813790844117, 0.5499220961077117},
    {"a b c d e f g", "a b c d x f g", 0.99988278127245478, 0.96505797765957813},
    {"i love you", "i love you too", 0.99862647376000424, 0.86363488013474765},
    {"hello world", "hello", 0.99972393318294572, 0.98016685861932085},
    {"the cat", "the the the the", 0.99945265871882127, 0.94083447856841018},
    {"it is a guide to action that ensures that the military will forever heed party commands", "it is a guide to action which ensures that the military always obeys the commands of the party", 0.62721838105695504, 0.76727374005441962},
    {"let's go to the movie theater tonight", "go to the movie tonight", 0.79181838867301357, 0.75874305587068713},
    {"yes", "yes", 1, 1},
};

// Classic 10-subject, 5-category, 14-rater worked example; kappa 0.20993070442195522.
inline const std::vector<std::vector<int>> kFleissExample = {
    {0, 0, 0, 0, 14}, {0, 2, 6, 4, 2}, {0, 0, 3, 5, 6}, {0, 3, 9, 2, 0}, {2, 2, 8, 1, 1},
    {7, 7, 0, 0, 0},  {3, 2, 6, 3, 0}, {2, 5, 3, 2, 2}, {6, 5, 2, 1, 0}, {0, 2, 2, 3, 7},
};

}  // namespace oracles
