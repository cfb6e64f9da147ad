#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dnsgt/tensor.hpp"
#include "dnsgt/topology.hpp"
#include "dnsgt/vocab.hpp"

namespace dnsgt {

struct IdOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingLabels : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoMaskPresent : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VocabMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int embed_dim = 256;  // N
  int seq_len = 32;     // L
  int blocks = 8;
  int heads = 8;
  double omega = 1.0;
  double dropout_embed = 0.15;
  double dropout_finetune = 0.2;
  int domain_vocab = 0;  // specials included
  int host_vocab = 0;    // <UNK_HOST> included
  std::vector<std::string> topologies = {"pad_full"};
  bool use_attention = true;  // ablation: zero attention, residual path only
  std::string head = "mlm";   // mlm | binary | hostclass
  int num_classes = 0;        // hostclass only

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Named builders for per-sequence adjacency construction from (len, L).
using TopologyBuilder = std::function<AdjacencyMatrix(int len, int L)>;
void register_topology(const std::string& name, TopologyBuilder builder);
TopologyBuilder topology_builder(const std::string& name);

// One (B,L,L) constant tensor per topology name.
std::vector<Tensor> build_batch_topologies(const std::vector<std::string>& names,
                                           const std::vector<int>& lens, int L);
Tensor adjacency_to_tensor(const std::vector<AdjacencyMatrix>& per_sequence);

struct ForwardOutput {
  Tensor token_states;  // (B,L,N)
  Tensor logits;        // head-dependent
  Tensor loss;          // scalar, defined when labels were supplied
};

// Generic versioned checkpoint container shared by DNS-GT and the
// Word2Vec baselines: config JSON + vocabulary hash + named f32 arrays.
struct Checkpoint {
  std::string config_json;
  uint64_t vocab_hash = 0;
  std::vector<std::pair<std::string, Tensor>> arrays;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

class DnsGtModel {
 public:
  ModelConfig cfg;
  std::map<std::string, Tensor> params;
  BatchNormState bn;
  uint64_t vocab_hash = 0;

  static DnsGtModel init(const ModelConfig& cfg, uint64_t seed);

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  int64_t parameter_count() const;
  std::vector<Tensor*> parameters();
  void zero_grads();

  // omega * E_D[d] + (1 - omega) * E_H[h], then dropout + batch-norm.
  Tensor merge_embeddings(const std::vector<int>& host_ids,
                          const std::vector<int>& domain_ids,
                          const std::vector<int>& lens, bool train, Rng& rng);

  Tensor encode(const std::vector<int>& host_ids,
                const std::vector<int>& domain_ids, const std::vector<int>& lens,
                const std::vector<Tensor>& topologies, bool train, Rng& rng);

  ForwardOutput forward_mlm(const std::vector<TokenSequence>& batch,
                            const std::vector<MaskingOutcome>& masks, bool train,
                            Rng& rng);
  ForwardOutput forward_binary(const std::vector<TokenSequence>& batch,
                               bool train, Rng& rng);
  ForwardOutput forward_hostclass(const std::vector<TokenSequence>& batch,
                                  bool train, Rng& rng);

  struct MaskedPrediction {
    int position = 0;
    std::vector<std::pair<int, double>> top;  // (domain id, probability)
  };
  std::vector<MaskedPrediction> predict_masked(const TokenSequence& seq, int k);

  std::map<std::string, std::vector<double>> export_embeddings(
      const Vocabulary& vocab) const;

  // Head swaps for fine-tuning; fresh head parameters, MLM head dropped.
  void swap_to_binary_head(uint64_t seed);
  void swap_to_hostclass_head(int num_classes, uint64_t seed);

  Checkpoint to_checkpoint() const;
  static DnsGtModel from_checkpoint(const Checkpoint& ck);

 private:
  Tensor gat_block(int block, const Tensor& x,
                   const std::vector<Tensor>& topologies);
  std::vector<Tensor> default_topologies(const std::vector<int>& lens) const;
};

}  // namespace dnsgt
