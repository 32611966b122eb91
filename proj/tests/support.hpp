#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "krn/frontend.hpp"

namespace krn::test {

struct CorpusEntry {
  std::string file;
  std::string fn;
  std::set<std::string> wrt;
};

// Every program under corpus/ with the function and parameters that the
// gradient checks use.
inline const std::vector<CorpusEntry>& corpus() {
  static const std::vector<CorpusEntry> entries = {
      {"laplacian.krn", "normRes1DLaplacianSQ", {"x", "b"}},
      {"sum_squares.krn", "sumSquares", {"x"}},
      {"copy_view.krn", "copyThenNorm", {"a", "w"}},
      {"fill_scalar.krn", "fillMix", {"x", "c"}},
      {"gather.krn", "gatherSq", {"x", "w"}},
      {"compound.krn", "compound", {"x", "y"}},
      {"stencil2d.krn", "stencil2d", {"u"}},
      {"ratio.krn", "ratio", {"x", "d", "c"}},
      {"scalar_chain.krn", "scalarChain", {"x", "c"}},
      {"matrix_sum.krn", "matrixSum", {"m"}},
  };
  return entries;
}

inline std::string corpus_path(const std::string& file) { return std::string(KRN_CORPUS_DIR) + "/" + file; }

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Program load_corpus(const std::string& file) { return parse(read_text(corpus_path(file))); }

inline const char* kLaplacianFn = "normRes1DLaplacianSQ";

}  // namespace krn::test
