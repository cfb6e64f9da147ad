#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnsgt {

struct BadLength : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadPermutation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// L x L binary matrix; at(i, j) == 1 means token i may attend to token j.
struct AdjacencyMatrix {
  int L = 0;
  std::vector<uint8_t> a;  // row-major, L*L

  uint8_t at(int i, int j) const { return a[(size_t)i * L + j]; }
  uint8_t& at(int i, int j) { return a[(size_t)i * L + j]; }
};

struct TopologySet {
  std::vector<AdjacencyMatrix> matrices;  // non-empty, same L
};

// Fully connected block over the first len real tokens; PAD tokens keep
// only their self-loop.
AdjacencyMatrix pad_aware_full(int len, int L);

// P A P^T: out[perm[i]][perm[j]] = a[i][j].
AdjacencyMatrix permute(const AdjacencyMatrix& A, const std::vector<int>& perm);

// Predicate-defined connectivity over the real-token block; self-loops
// forced everywhere and PAD rows/cols as in pad_aware_full.
AdjacencyMatrix custom_from_relation(
    int len, int L, const std::function<bool(int, int)>& related);

}  // namespace dnsgt
