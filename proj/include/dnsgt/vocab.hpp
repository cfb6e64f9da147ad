#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dnsgt/sequencer.hpp"
#include "dnsgt/tensor.hpp"

namespace dnsgt {

struct EmptyCorpus : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SequenceTooLong : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadProbabilities : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;
  static constexpr int kNumSpecials = 3;
  static constexpr int kUnkHost = 0;

  std::unordered_map<std::string, int> domain_to_id;
  std::vector<std::string> id_to_domain;  // specials at the front
  std::unordered_map<std::string, int> host_to_id;
  std::vector<std::string> id_to_host;  // "<UNK_HOST>" at the front

  int domain_vocab_size() const { return (int)id_to_domain.size(); }
  int host_vocab_size() const { return (int)id_to_host.size(); }
  int num_real_domains() const { return domain_vocab_size() - kNumSpecials; }

  int domain_id(const std::string& d) const {
    auto it = domain_to_id.find(d);
    return it == domain_to_id.end() ? kUnk : it->second;
  }
  int host_id(const std::string& h) const {
    auto it = host_to_id.find(h);
    return it == host_to_id.end() ? kUnkHost : it->second;
  }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  // FNV-1a over the serialized entry lists; pinned into checkpoints.
  uint64_t hash() const;
};

struct TokenSequence {
  std::vector<int> host_ids;    // length L
  std::vector<int> domain_ids;  // length L, PAD-filled past len
  int len = 0;
  // optional labels: per-token binary payload or a per-sequence class
  std::vector<int> token_labels;  // -1 = unlabeled/ignored, else 0/1
  int host_label = -1;
  std::string host;  // provenance for host-level aggregation
};

struct MaskingOutcome {
  std::vector<int> input_ids;   // post-corruption domain ids
  std::vector<int> target_ids;  // original domain ids
  std::vector<uint8_t> masked;  // true where loss applies
};

struct MaskingRates {
  double p = 0.10;
  double p_mask = 0.80;
  double p_random = 0.10;
  double p_same = 0.10;
};

Vocabulary build_vocab(const std::vector<RawSequence>& corpus, int max_domains);

TokenSequence tokenize(const RawSequence& seq, const Vocabulary& vocab, int L);

MaskingOutcome apply_mlm_mask(const TokenSequence& seq, const MaskingRates& rates,
                              const Vocabulary& vocab, Rng& rng);

}  // namespace dnsgt
