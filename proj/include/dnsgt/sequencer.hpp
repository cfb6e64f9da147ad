#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dnsgt {

struct DegenerateStream : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct QueryStream {
  std::string host;
  std::vector<std::pair<double, std::string>> queries;  // (timestamp, domain)
};

enum class SequencingStrategy { Fixed, GreedyTime, DensityCluster };

struct SequencingConfig {
  SequencingStrategy strategy = SequencingStrategy::Fixed;
  int L = 32;
  int stride_s = 32;          // Fixed only
  double delta_intra = 30.0;  // seconds
  double delta_base = 300.0;
  double delta_inter = 2.0;
  int min_pts = 1;  // DensityCluster
};

struct RawSequence {
  std::string host;
  std::vector<std::pair<double, std::string>> queries;  // 1 <= size <= L
};

SequencingStrategy parse_strategy(const std::string& name);

std::vector<RawSequence> fixed_length(const QueryStream& stream, int L, int s);
std::vector<RawSequence> greedy_time_based(const QueryStream& stream,
                                           const SequencingConfig& cfg);
std::vector<RawSequence> cluster_time_based(const QueryStream& stream,
                                            const SequencingConfig& cfg);
std::vector<RawSequence> sequence_stream(const QueryStream& stream,
                                         const SequencingConfig& cfg);

// Labels per point, -1 = noise; clusters numbered by first member index.
// Points must be sorted ascending.
std::vector<int> dbscan_1d(const std::vector<double>& points, double eps,
                           int min_pts);

}  // namespace dnsgt
