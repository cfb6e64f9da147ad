#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dnsgt/sequencer.hpp"
#include "dnsgt/synth.hpp"

using namespace dnsgt;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

SynthConfig two_topic_cfg() {
  SynthConfig cfg;
  cfg.n_hosts = 4;
  cfg.n_domains = 10;
  cfg.n_topics = 2;
  cfg.malicious_topics = {1};
  cfg.ambiguous_domains = {0};
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("same seed produces byte-identical corpora") {
  SynthConfig cfg = two_topic_cfg();
  auto base = std::filesystem::temp_directory_path() / "synth_det";
  write_synth(generate(cfg), (base / "a").string());
  write_synth(generate(cfg), (base / "b").string());
  for (const char* name : {"queries.jsonl", "domain_labels.jsonl",
                           "host_labels.jsonl", "sessions.jsonl"}) {
    CHECK(slurp((base / "a" / name).string()) ==
          slurp((base / "b" / name).string()));
  }
  // a different seed must actually change the traffic
  cfg.seed = 8;
  write_synth(generate(cfg), (base / "c").string());
  CHECK(slurp((base / "a" / "queries.jsonl").string()) !=
        slurp((base / "c" / "queries.jsonl").string()));
  std::filesystem::remove_all(base);
}

TEST_CASE("every generated host survives the ingest filters") {
  SynthConfig cfg = two_topic_cfg();
  cfg.n_bot_classes = 2;
  cfg.bot_hosts_per_class = 2;
  SynthOutput out = generate(cfg);
  HostFilterResult f = filter_hosts(out.records);
  CHECK(f.kept.size() == out.host_labels.size());
  for (const auto& [host, cls] : out.host_labels)
    CHECK(f.kept.count(host) == 1);
  for (const auto& s : f.stats) {
    CHECK(s.request_count >= 100);
    CHECK(s.response_count == s.request_count);  // one response per request
  }
}

TEST_CASE("domain labels follow topic ownership") {
  SynthConfig cfg = two_topic_cfg();
  SynthOutput out = generate(cfg);
  // even domains belong to topic 0 (benign), odd to topic 1 (malicious);
  // the shared domain 0 is benign because malicious topics are not a majority
  for (int d = 0; d < cfg.n_domains; ++d) {
    const int expect = (d != 0 && d % 2 == 1) ? 1 : 0;
    CHECK(out.domain_labels.at(synth_domain_name(d)) == expect);
  }

  // the shared domain's occurrence label follows the session topic
  int seen_benign = 0, seen_malicious = 0;
  for (const auto& s : out.sessions)
    for (const auto& q : s.queries)
      if (q.domain == synth_domain_name(0)) {
        CHECK(q.label == (s.topic == 1 ? 1 : 0));
        (s.topic == 1 ? seen_malicious : seen_benign)++;
      }
  CHECK(seen_benign > 0);
  CHECK(seen_malicious > 0);
}

TEST_CASE("planted pairs appear back to back") {
  SynthConfig cfg;
  cfg.n_hosts = 4;
  cfg.n_domains = 8;
  cfg.n_topics = 1;
  cfg.planted_pairs = {{0, 1}};
  cfg.seed = 11;
  SynthOutput out = generate(cfg);
  int pairs_seen = 0;
  for (const auto& s : out.sessions)
    for (size_t i = 0; i + 1 < s.queries.size(); ++i)
      if (s.queries[i].domain == synth_domain_name(0)) {
        CHECK(s.queries[i + 1].domain == synth_domain_name(1));
        ++pairs_seen;
      }
  CHECK(pairs_seen > 0);
}

TEST_CASE("sequencing recovers the planted sessions") {
  SynthConfig cfg = two_topic_cfg();
  cfg.n_hosts = 2;
  SynthOutput out = generate(cfg);

  for (const auto& [host, cls] : out.host_labels) {
    QueryStream stream;
    stream.host = host;
    for (const auto& r : out.records)
      if (r.is_request && r.src_host == host)
        stream.queries.emplace_back(r.timestamp, r.domain);

    // session boundaries per ground truth, keyed by start timestamp
    std::map<double, const SynthSession*> truth;
    for (const auto& s : out.sessions)
      if (s.host == host) truth[s.queries.front().ts] = &s;

    SequencingConfig sc;
    sc.L = 32;
    // any gap below a second is in-session; the inter-session pause is
    // around two minutes
    sc.delta_intra = 1.0;
    sc.delta_base = 1e9;
    sc.delta_inter = 0.0;
    auto greedy = greedy_time_based(stream, sc);
    REQUIRE(greedy.size() == (size_t)cfg.sessions_per_host);
    size_t k = 0;
    for (const auto& [t0, s] : truth) {
      REQUIRE(greedy[k].queries.size() == s->queries.size());
      for (size_t i = 0; i < s->queries.size(); ++i) {
        CHECK(greedy[k].queries[i].first == s->queries[i].ts);
        CHECK(greedy[k].queries[i].second == s->queries[i].domain);
      }
      ++k;
    }

    // the density strategy derives eps from the median gap, so it may
    // split a jittered session further, but it must never merge two
    // sessions whose pause dwarfs eps
    sc.min_pts = 1;
    auto dense = cluster_time_based(stream, sc);
    CHECK(dense.size() >= (size_t)cfg.sessions_per_host);
    for (const auto& seq : dense) {
      auto it = truth.upper_bound(seq.queries.front().first);
      REQUIRE(it != truth.begin());
      const SynthSession* home = std::prev(it)->second;
      CHECK(seq.queries.back().first <= home->queries.back().ts);
    }
  }
}

TEST_CASE("bot hosts beacon at the configured period") {
  SynthConfig cfg = two_topic_cfg();
  cfg.n_bot_classes = 2;
  cfg.bot_hosts_per_class = 2;
  SynthOutput out = generate(cfg);

  int bot_hosts = 0;
  for (const auto& [host, cls] : out.host_labels) {
    if (cls == 0) continue;
    ++bot_hosts;
    std::vector<double> ts;
    std::set<std::string> domains;
    for (const auto& r : out.records)
      if (r.is_request && r.src_host == host) {
        ts.push_back(r.timestamp);
        domains.insert(r.domain);
      }
    CHECK((int)ts.size() == cfg.beacons_per_host);
    CHECK((int)domains.size() <= cfg.bot_domains_per_class);
    for (const auto& d : domains) CHECK(out.domain_labels.at(d) == 1);
    for (size_t i = 1; i < ts.size(); ++i) {
      const double gap = ts[i] - ts[i - 1];
      CHECK(gap >= cfg.beacon_period - cfg.beacon_jitter - 1e-9);
      CHECK(gap <= cfg.beacon_period + cfg.beacon_jitter + 1e-9);
    }
  }
  CHECK(bot_hosts == 4);

  // beacon ground-truth sessions are chunked to the session length
  for (const auto& s : out.sessions)
    if (s.topic < 0) CHECK((int)s.queries.size() <= cfg.session_len);
}

TEST_CASE("single topic traffic is uniformly benign") {
  SynthConfig cfg;
  cfg.n_hosts = 2;
  cfg.n_domains = 5;
  cfg.n_topics = 1;
  cfg.seed = 3;
  SynthOutput out = generate(cfg);
  for (const auto& s : out.sessions) {
    CHECK(s.topic == 0);
    for (const auto& q : s.queries) CHECK(q.label == 0);
  }
  for (const auto& [d, l] : out.domain_labels) CHECK(l == 0);
}

TEST_CASE("invalid configurations are rejected") {
  SynthConfig cfg = two_topic_cfg();
  SynthConfig bad;

  bad = cfg;
  bad.n_hosts = 0;
  CHECK_THROWS_AS(generate(bad), BadConfig);

  bad = cfg;
  bad.ambiguous_domains = {99};
  CHECK_THROWS_AS(generate(bad), BadConfig);

  bad = cfg;
  bad.planted_pairs = {{0, 99}};
  CHECK_THROWS_AS(generate(bad), BadConfig);

  bad = cfg;
  bad.malicious_topics = {5};
  CHECK_THROWS_AS(generate(bad), BadConfig);

  bad = cfg;
  bad.topic_domain_dist.assign(1, std::vector<double>(bad.n_domains, 0.1));
  CHECK_THROWS_AS(generate(bad), BadConfig);  // row count != topics

  bad = cfg;
  bad.topic_domain_dist.assign(2, std::vector<double>(bad.n_domains, 0.2));
  CHECK_THROWS_AS(generate(bad), BadConfig);  // rows not normalized
}

TEST_CASE("label files round trip") {
  SynthConfig cfg = two_topic_cfg();
  cfg.n_bot_classes = 1;
  cfg.bot_hosts_per_class = 1;
  SynthOutput out = generate(cfg);
  auto dir = (std::filesystem::temp_directory_path() / "synth_rt").string();
  write_synth(out, dir);
  CHECK(read_domain_labels(dir + "/domain_labels.jsonl") == out.domain_labels);
  CHECK(read_host_labels(dir + "/host_labels.jsonl") == out.host_labels);
  CHECK_THROWS_AS(read_domain_labels(dir + "/missing.jsonl"), FileNotFound);
  std::filesystem::remove_all(dir);
}
