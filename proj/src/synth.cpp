#include "dnsgt/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace dnsgt {

using nlohmann::json;

std::string synth_domain_name(int index) {
  return "d" + std::to_string(index) + ".example";
}

namespace {

// Implementation-defined stdlib distributions would break the
// byte-identical-output contract across toolchains, so draws come
// straight from the raw engine.
double rand01(Rng& rng) { return (rng() >> 11) * 0x1.0p-53; }

int draw_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = rand01(rng);
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return (int)i;
  }
  for (int i = (int)probs.size() - 1; i >= 0; --i)
    if (probs[i] > 0.0) return i;
  return 0;
}

void validate(const SynthConfig& cfg) {
  if (cfg.n_hosts < 1 || cfg.n_domains < 1 || cfg.n_topics < 1)
    throw BadConfig("synth: hosts, domains, topics must be positive");
  if (cfg.sessions_per_host < 1 || cfg.session_len < 1)
    throw BadConfig("synth: session parameters must be positive");
  for (int d : cfg.ambiguous_domains)
    if (d < 0 || d >= cfg.n_domains) throw BadConfig("synth: ambiguous domain out of range");
  for (auto [a, b] : cfg.planted_pairs)
    if (a < 0 || a >= cfg.n_domains || b < 0 || b >= cfg.n_domains)
      throw BadConfig("synth: planted pair out of range");
  if (!cfg.topic_domain_dist.empty()) {
    if ((int)cfg.topic_domain_dist.size() != cfg.n_topics)
      throw BadConfig("synth: topic_domain_dist row count != n_topics");
    for (const auto& row : cfg.topic_domain_dist) {
      if ((int)row.size() != cfg.n_domains)
        throw BadConfig("synth: topic_domain_dist row width != n_domains");
      double s = 0.0;
      for (double p : row) {
        if (p < 0.0) throw BadConfig("synth: negative probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9)
        throw BadConfig("synth: topic distribution not normalized");
    }
  }
  for (int t : cfg.malicious_topics)
    if (t < 0 || t >= cfg.n_topics) throw BadConfig("synth: malicious topic out of range");
}

std::vector<std::vector<double>> derive_dist(const SynthConfig& cfg) {
  if (!cfg.topic_domain_dist.empty()) return cfg.topic_domain_dist;
  std::set<int> ambiguous(cfg.ambiguous_domains.begin(),
                          cfg.ambiguous_domains.end());
  std::vector<std::vector<double>> dist(cfg.n_topics,
                                        std::vector<double>(cfg.n_domains, 0.0));
  for (int t = 0; t < cfg.n_topics; ++t) {
    std::vector<int> members;
    for (int d = 0; d < cfg.n_domains; ++d)
      if (ambiguous.count(d) || d % cfg.n_topics == t) members.push_back(d);
    for (int d : members) dist[t][d] = 1.0 / members.size();
  }
  return dist;
}

void emit_request(SynthOutput& out, const std::string& host, double ts,
                  const std::string& domain, int& txn) {
  RawDnsRecord req;
  req.timestamp = ts;
  req.src_host = host;
  req.dst_port = 53;
  req.qtype = 1;
  req.is_request = true;
  req.domain = domain;
  req.txn_id = txn;
  out.records.push_back(req);
  RawDnsRecord resp = req;
  resp.timestamp = ts + 0.001;
  resp.is_request = false;
  out.records.push_back(resp);
  txn = (txn + 1) & 0xffff;
}

}  // namespace

SynthOutput generate(const SynthConfig& cfg) {
  validate(cfg);
  SynthOutput out;
  Rng rng(cfg.seed);
  const auto dist = derive_dist(cfg);
  const std::set<int> ambiguous(cfg.ambiguous_domains.begin(),
                                cfg.ambiguous_domains.end());
  std::map<int, int> pair_of(cfg.planted_pairs.begin(), cfg.planted_pairs.end());

  // Ground-truth domain labels: owner topic decides; ambiguous domains
  // are shared by all topics, majority-malicious wins, ties benign.
  for (int d = 0; d < cfg.n_domains; ++d) {
    int label;
    if (ambiguous.count(d)) {
      label = 2 * (int)cfg.malicious_topics.size() > cfg.n_topics ? 1 : 0;
    } else {
      label = cfg.malicious_topics.count(d % cfg.n_topics) ? 1 : 0;
    }
    out.domain_labels[synth_domain_name(d)] = label;
  }

  for (int h = 0; h < cfg.n_hosts; ++h) {
    const std::string host =
        "10.0." + std::to_string(h / 250) + "." + std::to_string(1 + h % 250);
    out.host_labels[host] = 0;
    int txn = 0;
    double t = cfg.base_time + h;  // desynchronize hosts
    for (int s = 0; s < cfg.sessions_per_host; ++s) {
      SynthSession session;
      session.host = host;
      session.topic = (int)(rand01(rng) * cfg.n_topics);
      if (session.topic >= cfg.n_topics) session.topic = cfg.n_topics - 1;
      const int occ_label = cfg.malicious_topics.count(session.topic) ? 1 : 0;
      int pending_partner = -1;
      for (int q = 0; q < cfg.session_len; ++q) {
        int d;
        if (pending_partner >= 0) {
          d = pending_partner;
          pending_partner = -1;
        } else {
          d = draw_categorical(dist[session.topic], rng);
          auto it = pair_of.find(d);
          if (it != pair_of.end()) pending_partner = it->second;
        }
        const std::string name = synth_domain_name(d);
        int label = ambiguous.count(d) ? occ_label : out.domain_labels.at(name);
        session.queries.push_back({t, name, label});
        emit_request(out, host, t, name, txn);
        t += cfg.intra_gap * (0.5 + rand01(rng));
      }
      out.sessions.push_back(std::move(session));
      t += cfg.inter_gap * (0.75 + 0.5 * rand01(rng));
    }
  }

  // Bot hosts: per-class beacon domains live past the clean domain range.
  for (int c = 1; c <= cfg.n_bot_classes; ++c) {
    std::vector<std::string> bot_domains;
    for (int j = 0; j < cfg.bot_domains_per_class; ++j) {
      const int idx = cfg.n_domains + (c - 1) * cfg.bot_domains_per_class + j;
      bot_domains.push_back(synth_domain_name(idx));
      out.domain_labels[bot_domains.back()] = 1;
    }
    for (int k = 0; k < cfg.bot_hosts_per_class; ++k) {
      const std::string host =
          "10.1." + std::to_string(c) + "." + std::to_string(1 + k);
      out.host_labels[host] = c;
      int txn = 0;
      double t = cfg.base_time + 500.0 * c + k;
      SynthSession session;
      session.host = host;
      session.topic = -c;  // marks beacon traffic
      for (int q = 0; q < cfg.beacons_per_host; ++q) {
        const std::string& name =
            bot_domains[(size_t)(rand01(rng) * bot_domains.size()) %
                        bot_domains.size()];
        session.queries.push_back({t, name, 1});
        emit_request(out, host, t, name, txn);
        t += cfg.beacon_period + cfg.beacon_jitter * (2.0 * rand01(rng) - 1.0);
        if ((int)session.queries.size() == cfg.session_len) {
          out.sessions.push_back(session);
          session.queries.clear();
        }
      }
      if (!session.queries.empty()) out.sessions.push_back(session);
    }
  }
  return out;
}

void write_synth(const SynthOutput& out, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir + "/queries.jsonl", out.records);

  std::ofstream dl(dir + "/domain_labels.jsonl");
  for (const auto& [domain, label] : out.domain_labels)
    dl << json{{"domain", domain}, {"label", label}}.dump() << "\n";

  std::ofstream hl(dir + "/host_labels.jsonl");
  for (const auto& [host, cls] : out.host_labels)
    hl << json{{"host", host}, {"class", cls}}.dump() << "\n";

  std::ofstream sl(dir + "/sessions.jsonl");
  for (const auto& s : out.sessions) {
    json q = json::array();
    for (const auto& query : s.queries)
      q.push_back({{"ts", query.ts}, {"domain", query.domain},
                   {"label", query.label}});
    sl << json{{"host", s.host}, {"topic", s.topic}, {"queries", q}}.dump()
       << "\n";
  }
}

std::map<std::string, int> read_domain_labels(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileNotFound("cannot open " + path);
  std::map<std::string, int> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out[j.at("domain").get<std::string>()] = j.at("label").get<int>();
  }
  return out;
}

std::map<std::string, int> read_host_labels(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileNotFound("cannot open " + path);
  std::map<std::string, int> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out[j.at("host").get<std::string>()] = j.at("class").get<int>();
  }
  return out;
}

}  // namespace dnsgt
