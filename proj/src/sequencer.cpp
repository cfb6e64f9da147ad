#include "dnsgt/sequencer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace dnsgt {

SequencingStrategy parse_strategy(const std::string& name) {
  if (name == "fixed") return SequencingStrategy::Fixed;
  if (name == "time") return SequencingStrategy::GreedyTime;
  if (name == "density") return SequencingStrategy::DensityCluster;
  throw std::invalid_argument("unknown sequencing strategy: " + name);
}

std::vector<RawSequence> fixed_length(const QueryStream& stream, int L, int s) {
  if (L < 1 || s < 1)
    throw std::invalid_argument("fixed_length: L and s must be >= 1");
  std::vector<RawSequence> out;
  const int n = (int)stream.queries.size();
  int prev_end = -1;
  for (int start = 0; start < n; start += s) {
    const int end = std::min(start + L, n);
    if (end <= prev_end) continue;  // wholly contained in the previous window
    RawSequence seq;
    seq.host = stream.host;
    seq.queries.assign(stream.queries.begin() + start,
                       stream.queries.begin() + end);
    out.push_back(std::move(seq));
    prev_end = end;
  }
  return out;
}

std::vector<RawSequence> greedy_time_based(const QueryStream& stream,
                                           const SequencingConfig& cfg) {
  std::vector<RawSequence> out;
  const auto& q = stream.queries;
  const int n = (int)q.size();
  int i = 0;
  while (i < n) {
    RawSequence seq;
    seq.host = stream.host;
    seq.queries.push_back(q[i]);
    const double t0 = q[i].first;
    double t_prev = q[i].first;
    ++i;
    while (i < n) {
      const double t = q[i].first;
      const bool a = (t - t_prev) < cfg.delta_intra;
      const bool b = (t - t0) < cfg.delta_base || (t - t_prev) < cfg.delta_inter;
      const bool c = (int)seq.queries.size() < cfg.L;
      if (!(a && b && c)) break;
      seq.queries.push_back(q[i]);
      t_prev = t;
      ++i;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<int> dbscan_1d(const std::vector<double>& points, double eps,
                           int min_pts) {
  const int n = (int)points.size();
  std::vector<int> labels(n, -2);  // -2 undefined, -1 noise
  if (n == 0) return labels;

  // Neighborhood of i is the index range [lo[i], hi[i]] (|t_i - t_j| <= eps).
  std::vector<int> lo(n), hi(n);
  {
    int l = 0;
    for (int i = 0; i < n; ++i) {
      while (points[i] - points[l] > eps) ++l;
      lo[i] = l;
    }
    int h = n - 1;
    for (int i = n - 1; i >= 0; --i) {
      while (points[h] - points[i] > eps) --h;
      hi[i] = h;
    }
  }
  std::vector<uint8_t> core(n);
  for (int i = 0; i < n; ++i) core[i] = (hi[i] - lo[i] + 1) >= min_pts;

  int cid = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] != -2) continue;
    if (!core[i]) {
      labels[i] = -1;
      continue;
    }
    const int c = cid++;
    labels[i] = c;
    std::deque<int> seeds;
    for (int j = lo[i]; j <= hi[i]; ++j)
      if (j != i) seeds.push_back(j);
    while (!seeds.empty()) {
      const int q = seeds.front();
      seeds.pop_front();
      if (labels[q] == -1) labels[q] = c;  // border point
      if (labels[q] != -2) continue;
      labels[q] = c;
      if (core[q])
        for (int j = lo[q]; j <= hi[q]; ++j)
          if (labels[j] == -2 || labels[j] == -1) seeds.push_back(j);
    }
  }
  return labels;
}

std::vector<RawSequence> cluster_time_based(const QueryStream& stream,
                                            const SequencingConfig& cfg) {
  std::vector<RawSequence> out;
  const auto& q = stream.queries;
  const int n = (int)q.size();
  if (n == 0) return out;
  if (n == 1) {
    out.push_back({stream.host, {q[0]}});
    return out;
  }

  std::vector<double> deltas(n - 1);
  for (int i = 0; i + 1 < n; ++i) deltas[i] = q[i + 1].first - q[i].first;
  std::sort(deltas.begin(), deltas.end());
  const int m = (int)deltas.size();
  const double eps = (m % 2 == 1) ? deltas[m / 2]
                                  : 0.5 * (deltas[m / 2 - 1] + deltas[m / 2]);

  std::vector<double> ts(n);
  for (int i = 0; i < n; ++i) ts[i] = q[i].first;
  std::vector<int> labels = dbscan_1d(ts, eps, cfg.min_pts);

  // Clusters in chronological order, each chopped into chunks of <= L;
  // noise points (possible only with min_pts > 1) become singletons.
  int i = 0;
  while (i < n) {
    const int label = labels[i];
    int j = i;
    if (label == -1) {
      j = i + 1;
    } else {
      while (j < n && labels[j] == label) ++j;
    }
    for (int start = i; start < j; start += cfg.L) {
      const int end = std::min(start + cfg.L, j);
      RawSequence seq;
      seq.host = stream.host;
      seq.queries.assign(q.begin() + start, q.begin() + end);
      out.push_back(std::move(seq));
    }
    i = j;
  }
  return out;
}

std::vector<RawSequence> sequence_stream(const QueryStream& stream,
                                         const SequencingConfig& cfg) {
  switch (cfg.strategy) {
    case SequencingStrategy::Fixed:
      return fixed_length(stream, cfg.L, cfg.stride_s);
    case SequencingStrategy::GreedyTime:
      return greedy_time_based(stream, cfg);
    case SequencingStrategy::DensityCluster:
      return cluster_time_based(stream, cfg);
  }
  return {};
}

}  // namespace dnsgt
