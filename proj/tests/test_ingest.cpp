#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "dnsgt/ingest.hpp"

using namespace dnsgt;

namespace {

using Bytes = std::vector<uint8_t>;

void put16(Bytes& b, uint16_t v) {  // network order
  b.push_back(v >> 8);
  b.push_back(v & 0xff);
}
void put32le(Bytes& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put32be(Bytes& b, uint32_t v) {
  for (int i = 3; i >= 0; --i) b.push_back((v >> (8 * i)) & 0xff);
}

Bytes dns_message(bool request, uint16_t txn, const std::string& qname,
                  uint16_t qtype) {
  Bytes m;
  put16(m, txn);
  put16(m, request ? 0x0100 : 0x8180);
  put16(m, 1);  // qdcount
  put16(m, 0);
  put16(m, 0);
  put16(m, 0);
  size_t start = 0;
  while (start <= qname.size()) {
    size_t dot = qname.find('.', start);
    if (dot == std::string::npos) dot = qname.size();
    m.push_back((uint8_t)(dot - start));
    for (size_t i = start; i < dot; ++i) m.push_back(qname[i]);
    start = dot + 1;
  }
  m.push_back(0);
  put16(m, qtype);
  put16(m, 1);  // IN
  return m;
}

uint32_t ip_of(const std::string& dotted) {
  uint32_t out = 0;
  size_t start = 0;
  for (int i = 0; i < 4; ++i) {
    size_t dot = dotted.find('.', start);
    out = (out << 8) | (uint32_t)std::stoi(dotted.substr(start, dot - start));
    start = dot + 1;
  }
  return out;
}

Bytes udp_frame(const std::string& src_ip, const std::string& dst_ip,
                uint16_t src_port, uint16_t dst_port, const Bytes& payload,
                uint8_t proto = 17) {
  Bytes f;
  for (int i = 0; i < 12; ++i) f.push_back(0xaa);  // macs
  put16(f, 0x0800);                                // ipv4
  f.push_back(0x45);
  f.push_back(0);
  put16(f, (uint16_t)(20 + 8 + payload.size()));
  put16(f, 0x1234);
  put16(f, 0);
  f.push_back(64);
  f.push_back(proto);
  put16(f, 0);  // checksum unchecked
  put32be(f, ip_of(src_ip));
  put32be(f, ip_of(dst_ip));
  put16(f, src_port);
  put16(f, dst_port);
  put16(f, (uint16_t)(8 + payload.size()));
  put16(f, 0);
  f.insert(f.end(), payload.begin(), payload.end());
  return f;
}

void append_packet(Bytes& file, double ts, const Bytes& frame, bool le = true) {
  auto put = le ? put32le : put32be;
  put(file, (uint32_t)ts);
  put(file, (uint32_t)((ts - (uint32_t)ts) * 1e6 + 0.5));
  put(file, (uint32_t)frame.size());
  put(file, (uint32_t)frame.size());
  file.insert(file.end(), frame.begin(), frame.end());
}

Bytes pcap_header(bool le = true) {
  Bytes f;
  auto put = le ? put32le : put32be;
  put(f, 0xa1b2c3d4);
  if (le) {
    f[0] = 0xd4; f[1] = 0xc3; f[2] = 0xb2; f[3] = 0xa1;  // LE on disk
  }
  put16(f, 0);  // placeholder, fixed below
  f.resize(4);
  auto put16x = [&](uint16_t v) {
    if (le) { f.push_back(v & 0xff); f.push_back(v >> 8); }
    else { f.push_back(v >> 8); f.push_back(v & 0xff); }
  };
  put16x(2);
  put16x(4);
  put(f, 0);
  put(f, 0);
  put(f, 65535);
  put(f, 1);  // Ethernet
  return f;
}

std::string write_tmp(const Bytes& bytes, const std::string& name) {
  std::string path =
      (std::filesystem::temp_directory_path() / name).string();
  std::ofstream f(path, std::ios::binary);
  f.write((const char*)bytes.data(), bytes.size());
  return path;
}

RawDnsRecord rec(double ts, const std::string& host, int port, int qtype,
                 bool req, const std::string& domain, int txn) {
  RawDnsRecord r;
  r.timestamp = ts;
  r.src_host = host;
  r.dst_port = port;
  r.qtype = qtype;
  r.is_request = req;
  r.domain = domain;
  r.txn_id = txn;
  return r;
}

}  // namespace

TEST_CASE("single request packet") {
  Bytes file = pcap_header();
  append_packet(file, 100.5,
                udp_frame("10.0.0.1", "8.8.8.8", 4242, 53,
                          dns_message(true, 7, "example.com", 1)));
  auto res = parse_pcap(write_tmp(file, "one.pcap"));
  CHECK(res.skipped == 0);
  REQUIRE(res.records.size() == 1);
  const auto& r = res.records[0];
  CHECK(r.is_request);
  CHECK(r.qtype == 1);
  CHECK(r.domain == "example.com");
  CHECK(r.src_host == "10.0.0.1");
  CHECK(r.dst_port == 53);
  CHECK(r.txn_id == 7);
  CHECK(r.timestamp == doctest::Approx(100.5));
}

TEST_CASE("empty pcap") {
  auto res = parse_pcap(write_tmp(pcap_header(), "empty.pcap"));
  CHECK(res.records.empty());
  CHECK(res.skipped == 0);
}

TEST_CASE("tcp packet skipped, dns packet kept") {
  Bytes file = pcap_header();
  append_packet(file, 1.0,
                udp_frame("10.0.0.1", "8.8.8.8", 999, 53,
                          dns_message(true, 1, "a.com", 1), 6));  // TCP
  append_packet(file, 2.0,
                udp_frame("10.0.0.1", "8.8.8.8", 999, 53,
                          dns_message(true, 2, "b.com", 1)));
  auto res = parse_pcap(write_tmp(file, "mixed.pcap"));
  CHECK(res.skipped == 1);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].domain == "b.com");
}

TEST_CASE("response attributed to the querying host") {
  Bytes file = pcap_header();
  append_packet(file, 3.0,
                udp_frame("8.8.8.8", "10.0.0.1", 53, 4242,
                          dns_message(false, 7, "example.com", 1)));
  auto res = parse_pcap(write_tmp(file, "resp.pcap"));
  REQUIRE(res.records.size() == 1);
  CHECK_FALSE(res.records[0].is_request);
  CHECK(res.records[0].src_host == "10.0.0.1");
}

TEST_CASE("big endian pcap") {
  Bytes file = pcap_header(false);
  append_packet(file, 5.0,
                udp_frame("10.0.0.2", "8.8.8.8", 1111, 53,
                          dns_message(true, 3, "be.example.com", 1)),
                false);
  auto res = parse_pcap(write_tmp(file, "be.pcap"));
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].domain == "be.example.com");
}

TEST_CASE("pcap error taxonomy") {
  CHECK_THROWS_AS(parse_pcap("/nonexistent/zzz.pcap"), FileNotFound);
  CHECK_THROWS_AS(parse_pcap(write_tmp({'n', 'o', 'p', 'e', 1, 2, 3, 4, 5, 6,
                                        7, 8, 9, 10, 11, 12, 13, 14, 15, 16,
                                        17, 18, 19, 20},
                                       "bad.pcap")),
                  BadMagic);
  CHECK_THROWS_AS(parse_pcap(write_tmp({0xd4, 0xc3, 0xb2, 0xa1, 1, 2},
                                       "short.pcap")),
                  TruncatedHeader);
}

TEST_CASE("fuzzing never crashes the parser") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    Bytes junk((size_t)(rng() % 400));
    for (auto& b : junk) b = (uint8_t)rng();
    if (trial % 3 == 0) {
      // valid header followed by garbage
      Bytes h = pcap_header();
      junk.insert(junk.begin(), h.begin(), h.end());
    }
    try {
      auto res = parse_pcap(write_tmp(junk, "fuzz.pcap"));
      CHECK(res.skipped >= 0);
    } catch (const BadMagic&) {
    } catch (const TruncatedHeader&) {
    }
  }
}

TEST_CASE("jsonl parse and skip") {
  std::string path =
      (std::filesystem::temp_directory_path() / "log.jsonl").string();
  {
    std::ofstream f(path);
    f << R"({"ts":1.5,"host":"10.0.0.1","dst_port":53,"qtype":1,"is_request":true,"domain":"a.com","txn_id":7})"
      << "\n";
    f << R"({"ts":2.0,"host":"10.0.0.1","dst_port":53,"qtype":1,"is_request":true,"txn_id":8})"
      << "\n";  // missing domain
    f << "not json at all\n";
  }
  auto res = parse_jsonl(path);
  CHECK(res.skipped == 2);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].domain == "a.com");
  CHECK(res.records[0].timestamp == doctest::Approx(1.5));
  CHECK_THROWS_AS(parse_jsonl("/nonexistent/x.jsonl"), FileNotFound);
}

TEST_CASE("pcap to jsonl round trip on a ten packet fixture") {
  Bytes file = pcap_header();
  for (int i = 0; i < 10; ++i) {
    const bool req = i % 2 == 0;
    const std::string host = "10.0.0." + std::to_string(1 + i % 3);
    const std::string domain = "site" + std::to_string(i) + ".example.com";
    if (req)
      append_packet(file, 10.0 + i,
                    udp_frame(host, "8.8.8.8", 4000 + i, 53,
                              dns_message(true, i, domain, i % 3 ? 28 : 1)));
    else
      append_packet(file, 10.0 + i,
                    udp_frame("8.8.8.8", host, 53, 4000 + i,
                              dns_message(false, i, domain, 1)));
  }
  auto parsed = parse_pcap(write_tmp(file, "ten.pcap"));
  CHECK(parsed.skipped == 0);
  REQUIRE(parsed.records.size() == 10);

  std::string jpath =
      (std::filesystem::temp_directory_path() / "ten.jsonl").string();
  write_jsonl(jpath, parsed.records);
  auto reparsed = parse_jsonl(jpath);
  CHECK(reparsed.skipped == 0);
  REQUIRE(reparsed.records.size() == 10);
  for (size_t i = 0; i < 10; ++i) {
    const auto& a = parsed.records[i];
    const auto& b = reparsed.records[i];
    CHECK(a.timestamp == doctest::Approx(b.timestamp).epsilon(1e-9));
    CHECK(a.src_host == b.src_host);
    CHECK(a.dst_port == b.dst_port);
    CHECK(a.qtype == b.qtype);
    CHECK(a.is_request == b.is_request);
    CHECK(a.domain == b.domain);
    CHECK(a.txn_id == b.txn_id);
  }
}

TEST_CASE("host filter thresholds") {
  std::vector<RawDnsRecord> records;
  auto add_host = [&](const std::string& h, int reqs, int resps) {
    for (int i = 0; i < reqs; ++i)
      records.push_back(rec(i, h, 53, 1, true, "a.com", i));
    for (int i = 0; i < resps; ++i)
      records.push_back(rec(i + 0.5, h, 53, 1, false, "a.com", i));
  };
  add_host("10.0.0.1", 100, 100);  // kept, ratio 1.0
  add_host("10.0.0.2", 102, 100);  // ratio 1.02 > 1.015
  add_host("10.0.0.3", 99, 99);    // below min requests
  add_host("10.0.0.4", 200, 0);    // no responses

  auto res = filter_hosts(records);
  CHECK(res.kept == std::set<std::string>{"10.0.0.1"});

  std::mt19937_64 rng(5);
  std::shuffle(records.begin(), records.end(), rng);
  CHECK(filter_hosts(records).kept == res.kept);

  CHECK(filter_hosts({}).kept.empty());
}

TEST_CASE("clean pipeline hand trace") {
  const std::string h = "10.0.0.1";
  std::vector<RawDnsRecord> records = {
      rec(1.0, h, 53, 1, false, "a.com", 1),   // response
      rec(2.0, h, 53, 28, true, "b.com", 2),   // AAAA
      rec(3.0, h, 53, 1, true, "c.com", 3),    // valid
      rec(3.2, h, 53, 1, true, "c.com", 3),    // retransmission
      rec(4.0, h, 53, 1, false, "c.com", 3),   // response
      rec(5.0, h, 53, 1, true, "d.com", 4),    // valid
  };
  auto streams = clean_pipeline(records, {h});
  REQUIRE(streams.count(h));
  const auto& q = streams[h].queries;
  REQUIRE(q.size() == 2);
  CHECK(q[0].second == "c.com");
  CHECK(q[1].second == "d.com");

  // duplicate outside the window is retained
  std::vector<RawDnsRecord> later = {
      rec(1.0, h, 53, 1, true, "x.com", 9),
      rec(7.0, h, 53, 1, true, "x.com", 9),
  };
  CHECK(clean_pipeline(later, {h})[h].queries.size() == 2);

  // non-kept host drops everything
  CHECK(clean_pipeline(records, {}).empty());

  // unsorted input comes out chronological
  std::vector<RawDnsRecord> unsorted = {
      rec(9.0, h, 53, 1, true, "z.com", 1),
      rec(1.0, h, 53, 1, true, "y.com", 2),
  };
  auto out = clean_pipeline(unsorted, {h});
  CHECK(out[h].queries[0].second == "y.com");
  CHECK(out[h].queries[1].second == "z.com");
}

TEST_CASE("domain normalization") {
  std::string d = "WWW.Example.COM.";
  CHECK(normalize_domain(d));
  CHECK(d == "www.example.com");
  std::string empty = ".";
  CHECK_FALSE(normalize_domain(empty));
  std::string huge(300, 'a');
  CHECK_FALSE(normalize_domain(huge));
}
