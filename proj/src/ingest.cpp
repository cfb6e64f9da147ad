#include "dnsgt/ingest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <tuple>

namespace dnsgt {

using nlohmann::json;

bool normalize_domain(std::string& domain) {
  for (auto& c : domain) c = (char)std::tolower((unsigned char)c);
  if (!domain.empty() && domain.back() == '.') domain.pop_back();
  return !domain.empty() && domain.size() <= 253;
}

namespace {

uint16_t rd16(const uint8_t* p, bool swap) {
  uint16_t v = (uint16_t)(p[0] | (p[1] << 8));
  return swap ? (uint16_t)((v >> 8) | (v << 8)) : v;
}
uint32_t rd32(const uint8_t* p, bool swap) {
  uint32_t v = (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) |
               ((uint32_t)p[3] << 24);
  if (swap)
    v = ((v >> 24) & 0xff) | ((v >> 8) & 0xff00) | ((v << 8) & 0xff0000) |
        (v << 24);
  return v;
}
uint16_t be16(const uint8_t* p) { return (uint16_t)((p[0] << 8) | p[1]); }

std::string ipv4_str(const uint8_t* p) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u", p[0], p[1], p[2], p[3]);
  return buf;
}

// Decodes a DNS name starting at offset, honoring compression pointers.
// Returns false on malformed input.
bool decode_dns_name(const uint8_t* msg, size_t msg_len, size_t offset,
                     std::string& name, size_t& end_offset) {
  name.clear();
  size_t pos = offset;
  bool jumped = false;
  end_offset = offset;
  int jumps = 0;
  while (true) {
    if (pos >= msg_len) return false;
    const uint8_t len = msg[pos];
    if ((len & 0xc0) == 0xc0) {
      if (pos + 1 >= msg_len) return false;
      if (++jumps > 64) return false;  // pointer loop guard
      const size_t target = ((len & 0x3f) << 8) | msg[pos + 1];
      if (!jumped) end_offset = pos + 2;
      jumped = true;
      if (target >= msg_len) return false;
      pos = target;
      continue;
    }
    if (len & 0xc0) return false;  // reserved label types
    if (len == 0) {
      if (!jumped) end_offset = pos + 1;
      return true;
    }
    if (pos + 1 + len > msg_len) return false;
    if (!name.empty()) name += '.';
    name.append((const char*)msg + pos + 1, len);
    if (name.size() > 255) return false;
    pos += 1 + len;
  }
}

}  // namespace

ParseResult parse_pcap(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileNotFound("parse_pcap: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 24) {
    if (buf.size() >= 4) {
      const uint32_t magic = rd32(buf.data(), false);
      if (magic != 0xa1b2c3d4u && magic != 0xd4c3b2a1u)
        throw BadMagic("parse_pcap: not a pcap file");
    }
    throw TruncatedHeader("parse_pcap: file shorter than global header");
  }

  const uint32_t magic = rd32(buf.data(), false);
  bool swap;
  if (magic == 0xa1b2c3d4u)
    swap = false;
  else if (magic == 0xd4c3b2a1u)
    swap = true;
  else
    throw BadMagic("parse_pcap: not a pcap file");

  ParseResult out;
  size_t pos = 24;
  while (pos + 16 <= buf.size()) {
    const uint32_t ts_sec = rd32(buf.data() + pos, swap);
    const uint32_t ts_usec = rd32(buf.data() + pos + 4, swap);
    const uint32_t incl = rd32(buf.data() + pos + 8, swap);
    pos += 16;
    if (incl > buf.size() - pos) {
      ++out.skipped;  // truncated final record
      pos = buf.size();
      break;
    }
    const uint8_t* pkt = buf.data() + pos;
    pos += incl;

    // Ethernet -> IPv4 -> UDP -> DNS; anything else counts as skipped.
    if (incl < 14 + 20 + 8 + 12) {
      ++out.skipped;
      continue;
    }
    if (be16(pkt + 12) != 0x0800) {
      ++out.skipped;
      continue;
    }
    const uint8_t* ip = pkt + 14;
    const size_t ip_avail = incl - 14;
    if ((ip[0] >> 4) != 4) {
      ++out.skipped;
      continue;
    }
    const size_t ihl = (size_t)(ip[0] & 0x0f) * 4;
    const size_t ip_total = be16(ip + 2);
    if (ihl < 20 || ip_total < ihl || ip_total > ip_avail) {
      ++out.skipped;
      continue;
    }
    if (ip[9] != 17) {  // UDP only
      ++out.skipped;
      continue;
    }
    const uint8_t* udp = ip + ihl;
    const size_t udp_avail = ip_total - ihl;
    if (udp_avail < 8) {
      ++out.skipped;
      continue;
    }
    const uint16_t src_port = be16(udp);
    const uint16_t dst_port = be16(udp + 2);
    const size_t udp_len = be16(udp + 4);
    if (udp_len < 8 || udp_len > udp_avail) {
      ++out.skipped;
      continue;
    }
    if (src_port != 53 && dst_port != 53) {
      ++out.skipped;
      continue;
    }
    const uint8_t* dns = udp + 8;
    const size_t dns_len = udp_len - 8;
    if (dns_len < 12) {
      ++out.skipped;
      continue;
    }
    const uint16_t txn_id = be16(dns);
    const uint16_t flags = be16(dns + 2);
    const uint16_t qdcount = be16(dns + 4);
    const bool is_request = (flags & 0x8000) == 0;

    std::string qname;
    int qtype = 0;
    if (qdcount > 0) {
      size_t end = 0;
      if (!decode_dns_name(dns, dns_len, 12, qname, end) ||
          end + 4 > dns_len) {
        ++out.skipped;
        continue;
      }
      qtype = be16(dns + end);
    }
    if (is_request && !normalize_domain(qname)) {
      ++out.skipped;
      continue;
    }
    if (!is_request) normalize_domain(qname);

    RawDnsRecord rec;
    rec.timestamp = (double)ts_sec + (double)ts_usec * 1e-6;
    // Responses are attributed to the host that receives them, so that
    // per-host request/response counts line up.
    rec.src_host = is_request ? ipv4_str(ip + 12) : ipv4_str(ip + 16);
    rec.dst_port = dst_port;
    rec.qtype = qtype;
    rec.is_request = is_request;
    rec.domain = qname;
    rec.txn_id = txn_id;
    out.records.push_back(std::move(rec));
  }
  if (pos < buf.size()) ++out.skipped;  // trailing partial record header
  return out;
}

ParseResult parse_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileNotFound("parse_jsonl: cannot open " + path);
  ParseResult out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      RawDnsRecord rec;
      rec.timestamp = j.at("ts").get<double>();
      rec.src_host = j.at("host").get<std::string>();
      rec.dst_port = j.at("dst_port").get<int>();
      rec.qtype = j.at("qtype").get<int>();
      rec.is_request = j.at("is_request").get<bool>();
      rec.domain = j.at("domain").get<std::string>();
      rec.txn_id = j.at("txn_id").get<int>();
      if (rec.timestamp < 0 || rec.dst_port < 0 || rec.dst_port > 65535)
        throw std::runtime_error("out of range");
      if (rec.is_request && rec.domain.empty())
        throw std::runtime_error("empty domain");
      out.records.push_back(std::move(rec));
    } catch (const std::exception&) {
      ++out.skipped;
    }
  }
  return out;
}

void write_jsonl(const std::string& path,
                 const std::vector<RawDnsRecord>& records) {
  std::ofstream f(path);
  if (!f) throw FileNotFound("write_jsonl: cannot open " + path);
  for (const auto& r : records) {
    json j;
    j["ts"] = r.timestamp;
    j["host"] = r.src_host;
    j["dst_port"] = r.dst_port;
    j["qtype"] = r.qtype;
    j["is_request"] = r.is_request;
    j["domain"] = r.domain;
    j["txn_id"] = r.txn_id;
    f << j.dump() << '\n';
  }
}

HostFilterResult filter_hosts(const std::vector<RawDnsRecord>& records,
                              int64_t min_requests, double ratio_low,
                              double ratio_high) {
  if (ratio_low > ratio_high)
    throw std::invalid_argument("filter_hosts: ratio_low > ratio_high");
  std::map<std::string, HostStats> stats;
  for (const auto& r : records) {
    auto& s = stats[r.src_host];
    s.host = r.src_host;
    if (r.is_request)
      ++s.request_count;
    else
      ++s.response_count;
  }
  HostFilterResult out;
  for (const auto& [host, s] : stats) {
    out.stats.push_back(s);
    if (s.request_count < min_requests) continue;
    if (s.response_count == 0) continue;  // ratio undefined, not an end user
    const double ratio = (double)s.request_count / (double)s.response_count;
    if (ratio < ratio_low || ratio > ratio_high) continue;
    out.kept.insert(host);
  }
  return out;
}

std::map<std::string, QueryStream> clean_pipeline(
    const std::vector<RawDnsRecord>& records,
    const std::set<std::string>& kept_hosts, double dedup_window_s) {
  std::vector<const RawDnsRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RawDnsRecord* a, const RawDnsRecord* b) {
                     return a->timestamp < b->timestamp;
                   });

  std::map<std::tuple<std::string, int, std::string>, double> last_kept;
  std::map<std::string, QueryStream> out;
  for (const auto* r : sorted) {
    if (!r->is_request || r->dst_port != 53 || r->qtype != 1) continue;
    if (!kept_hosts.count(r->src_host)) continue;
    auto key = std::make_tuple(r->src_host, r->txn_id, r->domain);
    auto it = last_kept.find(key);
    if (it != last_kept.end() && r->timestamp - it->second <= dedup_window_s)
      continue;  // retransmission
    last_kept[key] = r->timestamp;
    auto& stream = out[r->src_host];
    stream.host = r->src_host;
    stream.queries.emplace_back(r->timestamp, r->domain);
  }
  return out;
}

}  // namespace dnsgt
