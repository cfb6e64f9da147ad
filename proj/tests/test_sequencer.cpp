#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <deque>
#include <random>

#include "dnsgt/sequencer.hpp"

using namespace dnsgt;

namespace {

QueryStream stream_of(const std::vector<double>& ts) {
  QueryStream s;
  s.host = "10.0.0.1";
  for (size_t i = 0; i < ts.size(); ++i)
    s.queries.emplace_back(ts[i], "d" + std::to_string(i) + ".com");
  return s;
}

std::vector<std::vector<std::string>> names(const std::vector<RawSequence>& seqs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : seqs) {
    std::vector<std::string> row;
    for (const auto& [ts, d] : s.queries) row.push_back(d);
    out.push_back(row);
  }
  return out;
}

// Textbook DBSCAN with O(n^2) neighborhood computation, used as the
// oracle for the two-pointer implementation. Seeds are visited in index
// order; borders go to the first cluster that reaches them.
std::vector<int> dbscan_bruteforce(const std::vector<double>& pts, double eps,
                                   int min_pts) {
  const int n = (int)pts.size();
  std::vector<std::vector<int>> nbr(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (std::abs(pts[i] - pts[j]) <= eps) nbr[i].push_back(j);
  std::vector<int> label(n, -1);
  std::vector<char> visited(n, 0);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (visited[i]) continue;
    visited[i] = 1;
    if ((int)nbr[i].size() < min_pts) continue;  // noise unless claimed later
    const int cluster = next++;
    label[i] = cluster;
    std::deque<int> queue(nbr[i].begin(), nbr[i].end());
    while (!queue.empty()) {
      const int q = queue.front();
      queue.pop_front();
      if (label[q] == -1) label[q] = cluster;  // border claim
      if (visited[q]) continue;
      visited[q] = 1;
      if ((int)nbr[q].size() >= min_pts) {
        label[q] = cluster;
        queue.insert(queue.end(), nbr[q].begin(), nbr[q].end());
      }
    }
  }
  return label;
}

void check_partition_and_contiguity(const QueryStream& stream,
                                    const std::vector<RawSequence>& seqs,
                                    int L) {
  std::vector<int> count(stream.queries.size(), 0);
  for (const auto& s : seqs) {
    REQUIRE(s.queries.size() >= 1);
    REQUIRE((int)s.queries.size() <= L);
    // locate the contiguous index range
    auto it = std::find(stream.queries.begin(), stream.queries.end(),
                        s.queries.front());
    REQUIRE(it != stream.queries.end());
    size_t start = it - stream.queries.begin();
    for (size_t k = 0; k < s.queries.size(); ++k) {
      REQUIRE(start + k < stream.queries.size());
      CHECK(stream.queries[start + k] == s.queries[k]);
      ++count[start + k];
    }
  }
  for (int c : count) CHECK(c == 1);
}

}  // namespace

TEST_CASE("fixed length windows") {
  QueryStream s6 = stream_of({0, 1, 2, 3, 4, 5});
  auto w = names(fixed_length(s6, 4, 2));
  REQUIRE(w.size() == 2);
  CHECK(w[0] == std::vector<std::string>{"d0.com", "d1.com", "d2.com", "d3.com"});
  CHECK(w[1] == std::vector<std::string>{"d2.com", "d3.com", "d4.com", "d5.com"});

  QueryStream s3 = stream_of({0, 1, 2});
  auto w2 = fixed_length(s3, 4, 2);
  REQUIRE(w2.size() == 1);
  CHECK(w2[0].queries.size() == 3);

  std::vector<double> hundred(100);
  for (int i = 0; i < 100; ++i) hundred[i] = i;
  auto w3 = fixed_length(stream_of(hundred), 32, 32);
  REQUIRE(w3.size() == 4);
  CHECK(w3[0].queries.size() == 32);
  CHECK(w3[1].queries.size() == 32);
  CHECK(w3[2].queries.size() == 32);
  CHECK(w3[3].queries.size() == 4);
}

TEST_CASE("greedy time based hand traces") {
  SequencingConfig cfg;
  cfg.L = 32;
  cfg.delta_intra = 10;
  cfg.delta_base = 100;
  cfg.delta_inter = 1;
  auto a = greedy_time_based(stream_of({0, 1, 2}), cfg);
  REQUIRE(a.size() == 1);
  CHECK(a[0].queries.size() == 3);

  auto b = greedy_time_based(stream_of({0, 1, 50}), cfg);
  REQUIRE(b.size() == 2);
  CHECK(b[0].queries.size() == 2);
  CHECK(b[1].queries.size() == 1);

  SequencingConfig cfg2;
  cfg2.L = 32;
  cfg2.delta_intra = 100;
  cfg2.delta_base = 30;
  cfg2.delta_inter = 1;
  auto c = greedy_time_based(stream_of({0, 40, 40.5, 41}), cfg2);
  REQUIRE(c.size() == 2);
  CHECK(c[0].queries.size() == 1);
  CHECK(c[1].queries.size() == 3);
}

TEST_CASE("greedy respects the length cap") {
  SequencingConfig cfg;
  cfg.L = 3;
  cfg.delta_intra = 10;
  cfg.delta_base = 1000;
  cfg.delta_inter = 1;
  auto seqs = greedy_time_based(stream_of({0, 1, 2, 3, 4, 5, 6}), cfg);
  REQUIRE(seqs.size() == 3);
  CHECK(seqs[0].queries.size() == 3);
  CHECK(seqs[1].queries.size() == 3);
  CHECK(seqs[2].queries.size() == 1);
}

TEST_CASE("dbscan hand cases") {
  CHECK(dbscan_1d({0, 1, 5}, 1, 2) == std::vector<int>{0, 0, -1});
  CHECK(dbscan_1d({}, 1, 1).empty());
  CHECK(dbscan_1d({3}, 1, 1) == std::vector<int>{0});
  CHECK(dbscan_1d({0, 0, 0}, 0, 1) == std::vector<int>{0, 0, 0});
}

TEST_CASE("dbscan matches the brute-force oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> pt(0.0, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = (int)(rng() % 51);
    std::vector<double> pts(n);
    for (auto& p : pts) p = pt(rng);
    if (trial % 5 == 0)  // duplicate-heavy instances
      for (auto& p : pts) p = std::floor(p / 10.0);
    std::sort(pts.begin(), pts.end());
    const double eps = trial % 7 == 0 ? 0.0 : pt(rng) * 0.05;
    const int min_pts = 1 + (int)(rng() % 5);
    CHECK(dbscan_1d(pts, eps, min_pts) == dbscan_bruteforce(pts, eps, min_pts));
  }
}

TEST_CASE("cluster time based hand cases") {
  SequencingConfig cfg;
  cfg.L = 32;
  cfg.min_pts = 1;
  auto a = cluster_time_based(stream_of({0, 1, 2, 100, 101}), cfg);
  REQUIRE(a.size() == 2);
  CHECK(a[0].queries.size() == 3);
  CHECK(a[1].queries.size() == 2);

  auto b = cluster_time_based(stream_of({0, 10}), cfg);
  REQUIRE(b.size() == 1);
  CHECK(b[0].queries.size() == 2);

  auto c = cluster_time_based(stream_of({5, 5, 5, 5}), cfg);
  REQUIRE(c.size() == 1);
  CHECK(c[0].queries.size() == 4);

  auto d = cluster_time_based(stream_of({7}), cfg);  // no deltas: single emit
  REQUIRE(d.size() == 1);
  CHECK(d[0].queries.size() == 1);
}

TEST_CASE("cluster time based chops oversized clusters") {
  SequencingConfig cfg;
  cfg.L = 4;
  cfg.min_pts = 1;
  std::vector<double> ts(10);
  for (int i = 0; i < 10; ++i) ts[i] = i;
  auto seqs = cluster_time_based(stream_of(ts), cfg);
  REQUIRE(seqs.size() == 3);
  CHECK(seqs[0].queries.size() == 4);
  CHECK(seqs[1].queries.size() == 4);
  CHECK(seqs[2].queries.size() == 2);
}

TEST_CASE("strategy names parse") {
  CHECK(parse_strategy("fixed") == SequencingStrategy::Fixed);
  CHECK(parse_strategy("time") == SequencingStrategy::GreedyTime);
  CHECK(parse_strategy("density") == SequencingStrategy::DensityCluster);
  CHECK_THROWS(parse_strategy("nope"));
}

TEST_CASE("random stream invariants per strategy") {
  std::mt19937_64 rng(17);
  std::exponential_distribution<double> gap(0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + (int)(rng() % 60);
    std::vector<double> ts(n);
    double t = 0.0;
    for (auto& v : ts) v = t += gap(rng);
    QueryStream stream = stream_of(ts);

    SequencingConfig cfg;
    cfg.L = 1 + (int)(rng() % 8);
    cfg.stride_s = cfg.L;  // non-overlapping: partition applies
    cfg.delta_intra = 0.5 + gap(rng);
    cfg.delta_base = cfg.delta_intra * 4;
    cfg.delta_inter = cfg.delta_intra / 4;
    cfg.min_pts = 1 + (int)(rng() % 3);

    for (auto strategy : {SequencingStrategy::Fixed, SequencingStrategy::GreedyTime,
                          SequencingStrategy::DensityCluster}) {
      cfg.strategy = strategy;
      auto seqs = sequence_stream(stream, cfg);
      check_partition_and_contiguity(stream, seqs, cfg.L);
      // determinism
      auto again = sequence_stream(stream, cfg);
      REQUIRE(seqs.size() == again.size());
      for (size_t i = 0; i < seqs.size(); ++i)
        CHECK(seqs[i].queries == again[i].queries);
    }
  }
}
