#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dnsgt/ingest.hpp"
#include "dnsgt/tensor.hpp"

namespace dnsgt {

struct BadConfig : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SynthConfig {
  int n_hosts = 8;
  int n_domains = 20;
  int n_topics = 2;
  // Row t = categorical over domain indices for topic t. Empty = derived
  // by partitioning domains round-robin over topics, uniform within, with
  // ambiguous domains shared across every topic.
  std::vector<std::vector<double>> topic_domain_dist;
  std::set<int> malicious_topics;        // sessions of these topics emit label 1
  std::vector<int> ambiguous_domains;    // shared across topics, label follows topic
  std::vector<std::pair<int, int>> planted_pairs;  // a emitted -> b follows

  int sessions_per_host = 10;
  int session_len = 12;  // queries per session
  double intra_gap = 0.1;
  double inter_gap = 120.0;
  double base_time = 1700000000.0;

  // Bot hosts beacon to a dedicated per-class domain set at a fixed
  // period; class 0 is clean.
  int n_bot_classes = 0;
  int bot_hosts_per_class = 0;
  int bot_domains_per_class = 3;
  double beacon_period = 30.0;
  double beacon_jitter = 0.5;
  int beacons_per_host = 120;

  uint64_t seed = 0;
};

struct SynthQuery {
  double ts = 0.0;
  std::string domain;
  int label = 0;  // per-occurrence malicious flag
};

struct SynthSession {
  std::string host;
  int topic = 0;
  std::vector<SynthQuery> queries;
};

struct SynthOutput {
  std::vector<RawDnsRecord> records;        // requests + matching responses
  std::vector<SynthSession> sessions;       // ground truth partition
  std::map<std::string, int> domain_labels; // predominant label per domain
  std::map<std::string, int> host_labels;   // 0 clean, 1.. bot class
};

std::string synth_domain_name(int index);

SynthOutput generate(const SynthConfig& cfg);

// queries.jsonl, domain_labels.jsonl, host_labels.jsonl, sessions.jsonl
void write_synth(const SynthOutput& out, const std::string& dir);

std::map<std::string, int> read_domain_labels(const std::string& path);
std::map<std::string, int> read_host_labels(const std::string& path);

}  // namespace dnsgt
