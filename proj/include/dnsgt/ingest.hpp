#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnsgt/sequencer.hpp"

namespace dnsgt {

struct FileNotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagic : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncatedHeader : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RawDnsRecord {
  double timestamp = 0.0;  // seconds since epoch, microsecond precision
  std::string src_host;    // IPv4 dotted quad
  int dst_port = 0;
  int qtype = 0;
  bool is_request = false;  // QR bit == 0
  std::string domain;       // lowercase, no trailing dot
  int txn_id = 0;
};

struct HostStats {
  std::string host;
  int64_t request_count = 0;
  int64_t response_count = 0;
};

struct ParseResult {
  std::vector<RawDnsRecord> records;
  int64_t skipped = 0;  // malformed / non-DNS packets or bad lines
};

// Classic libpcap format, either endianness, Ethernet link type;
// IPv4/UDP DNS packets only, anything else is counted and skipped.
ParseResult parse_pcap(const std::string& path);

// Canonical JSONL query log: one record per line with fields
// ts, host, dst_port, qtype, is_request, domain, txn_id.
ParseResult parse_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<RawDnsRecord>& records);

struct HostFilterResult {
  std::set<std::string> kept;
  std::vector<HostStats> stats;
};

HostFilterResult filter_hosts(const std::vector<RawDnsRecord>& records,
                              int64_t min_requests = 100,
                              double ratio_low = 0.985,
                              double ratio_high = 1.015);

// Keeps requests to port 53 with qtype A from kept hosts, drops
// retransmissions (same host, txn_id, domain within dedup_window_s), and
// returns per-host chronologically sorted streams.
std::map<std::string, QueryStream> clean_pipeline(
    const std::vector<RawDnsRecord>& records,
    const std::set<std::string>& kept_hosts, double dedup_window_s = 5.0);

// Lowercases, strips one trailing dot; empty result or length > 253 is invalid.
bool normalize_domain(std::string& domain);

}  // namespace dnsgt
