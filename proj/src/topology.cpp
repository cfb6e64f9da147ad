#include "dnsgt/topology.hpp"

#include <algorithm>

namespace dnsgt {

AdjacencyMatrix pad_aware_full(int len, int L) {
  if (len < 1 || len > L) throw BadLength("pad_aware_full: need 1 <= len <= L");
  AdjacencyMatrix A;
  A.L = L;
  A.a.assign((size_t)L * L, 0);
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < len; ++j) A.at(i, j) = 1;
  for (int i = len; i < L; ++i) A.at(i, i) = 1;
  return A;
}

AdjacencyMatrix permute(const AdjacencyMatrix& A, const std::vector<int>& perm) {
  const int L = A.L;
  if ((int)perm.size() != L) throw BadPermutation("permute: wrong size");
  std::vector<uint8_t> seen(L, 0);
  for (int p : perm) {
    if (p < 0 || p >= L || seen[p]) throw BadPermutation("permute: not a bijection");
    seen[p] = 1;
  }
  AdjacencyMatrix out;
  out.L = L;
  out.a.assign((size_t)L * L, 0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) out.at(perm[i], perm[j]) = A.at(i, j);
  return out;
}

AdjacencyMatrix custom_from_relation(
    int len, int L, const std::function<bool(int, int)>& related) {
  if (len < 1 || len > L) throw BadLength("custom_from_relation: need 1 <= len <= L");
  AdjacencyMatrix A;
  A.L = L;
  A.a.assign((size_t)L * L, 0);
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < len; ++j) A.at(i, j) = related(i, j) ? 1 : 0;
  for (int i = 0; i < L; ++i) A.at(i, i) = 1;
  return A;
}

}  // namespace dnsgt
