#include "dnsgt/vocab.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace dnsgt {

using nlohmann::json;

Vocabulary build_vocab(const std::vector<RawSequence>& corpus, int max_domains) {
  if (corpus.empty()) throw EmptyCorpus("build_vocab: empty corpus");
  if (max_domains < 1)
    throw std::invalid_argument("build_vocab: max_domains must be >= 1");

  std::map<std::string, int64_t> counts;  // ordered map fixes tie order
  std::map<std::string, int> hosts;
  for (const auto& seq : corpus) {
    hosts.emplace(seq.host, 0);
    for (const auto& [ts, domain] : seq.queries) ++counts[domain];
  }

  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(),
                                                      counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if ((int)ranked.size() > max_domains) ranked.resize(max_domains);

  Vocabulary v;
  v.id_to_domain = {"<PAD>", "<MASK>", "<UNK>"};
  for (const auto& [d, c] : ranked) {
    v.domain_to_id[d] = (int)v.id_to_domain.size();
    v.id_to_domain.push_back(d);
  }
  v.id_to_host = {"<UNK_HOST>"};
  for (const auto& [h, _] : hosts) {
    v.host_to_id[h] = (int)v.id_to_host.size();
    v.id_to_host.push_back(h);
  }
  return v;
}

TokenSequence tokenize(const RawSequence& seq, const Vocabulary& vocab, int L) {
  if ((int)seq.queries.size() > L)
    throw SequenceTooLong("tokenize: sequence longer than L");
  if (seq.queries.empty())
    throw SequenceTooLong("tokenize: empty sequence (len >= 1 required)");
  TokenSequence t;
  t.len = (int)seq.queries.size();
  t.host = seq.host;
  t.host_ids.assign(L, vocab.host_id(seq.host));
  t.domain_ids.assign(L, Vocabulary::kPad);
  for (int i = 0; i < t.len; ++i)
    t.domain_ids[i] = vocab.domain_id(seq.queries[i].second);
  return t;
}

MaskingOutcome apply_mlm_mask(const TokenSequence& seq, const MaskingRates& rates,
                              const Vocabulary& vocab, Rng& rng) {
  if (rates.p < 0.0 || rates.p > 1.0 ||
      std::abs(rates.p_mask + rates.p_random + rates.p_same - 1.0) > 1e-9)
    throw BadProbabilities("apply_mlm_mask: invalid rates");

  const int L = (int)seq.domain_ids.size();
  MaskingOutcome out;
  out.input_ids = seq.domain_ids;
  out.target_ids = seq.domain_ids;
  out.masked.assign(L, 0);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int real = vocab.num_real_domains();

  auto corrupt = [&](int i) {
    out.masked[i] = 1;
    const double r = u(rng);
    if (r < rates.p_mask) {
      out.input_ids[i] = Vocabulary::kMask;
    } else if (r < rates.p_mask + rates.p_random && real > 0) {
      std::uniform_int_distribution<int> pick(0, real - 1);
      out.input_ids[i] = Vocabulary::kNumSpecials + pick(rng);
    }
    // else: left unchanged
  };

  bool any = false;
  for (int i = 0; i < seq.len; ++i) {
    if (u(rng) >= rates.p) continue;
    any = true;
    corrupt(i);
  }
  // Guarantee at least one supervised position per sequence.
  if (!any) corrupt(0);
  return out;
}

std::string Vocabulary::to_json() const {
  json j;
  j["version"] = 1;
  j["specials"] = {{"PAD", kPad}, {"MASK", kMask}, {"UNK", kUnk},
                   {"UNK_HOST", kUnkHost}};
  j["domains"] = std::vector<std::string>(id_to_domain.begin() + kNumSpecials,
                                          id_to_domain.end());
  j["hosts"] =
      std::vector<std::string>(id_to_host.begin() + 1, id_to_host.end());
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::runtime_error("Vocabulary::from_json: unsupported version");
  Vocabulary v;
  v.id_to_domain = {"<PAD>", "<MASK>", "<UNK>"};
  for (const auto& d : j["domains"]) {
    v.domain_to_id[d.get<std::string>()] = (int)v.id_to_domain.size();
    v.id_to_domain.push_back(d.get<std::string>());
  }
  v.id_to_host = {"<UNK_HOST>"};
  for (const auto& h : j["hosts"]) {
    v.host_to_id[h.get<std::string>()] = (int)v.id_to_host.size();
    v.id_to_host.push_back(h.get<std::string>());
  }
  return v;
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  for (const auto& d : id_to_domain) feed(d);
  for (const auto& t : id_to_host) feed(t);
  return h;
}

}  // namespace dnsgt
