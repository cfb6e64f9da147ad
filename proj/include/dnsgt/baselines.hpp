#pragma once

#include <map>
#include <string>
#include <vector>

#include "dnsgt/model.hpp"
#include "dnsgt/tensor.hpp"
#include "dnsgt/vocab.hpp"

namespace dnsgt {

enum class W2VVariant { CBOW, SkipGram };

struct W2VConfig {
  W2VVariant variant = W2VVariant::CBOW;
  int embed_dim = 256;  // N, shared with the DNS-GT config
  int seq_len = 32;     // L
  int context_r = 32;   // band-matrix bandwidth, defaults to L
  int domain_vocab = 0;
  std::string head = "softmax";  // softmax | binary

  std::string to_json() const;
  static W2VConfig from_json(const std::string& text);
};

// C = (B_r - I_L) * E_seq with PAD rows zeroed beforehand; E_seq (B,L,N).
Tensor cbow_context(const Tensor& embeddings, const std::vector<int>& lens,
                    int r);

class W2VModel {
 public:
  W2VConfig cfg;
  std::map<std::string, Tensor> params;
  uint64_t vocab_hash = 0;

  static W2VModel init(const W2VConfig& cfg, uint64_t seed);

  Tensor& param(const std::string& name);
  int64_t parameter_count() const;
  std::vector<Tensor*> parameters();
  void zero_grads();

  // Hidden projection H per variant: CBOW projects the band-matrix
  // context, SkipGram projects the token's own embedding.
  Tensor hidden(const std::vector<TokenSequence>& batch);

  // MLM-style full-softmax pre-training loss for one batch.
  Tensor pretrain_loss(const std::vector<TokenSequence>& batch);

  // Per-token sigmoid probabilities plus masked BCE; labels as in the
  // DNS-GT binary head.
  ForwardOutput classify(const std::vector<TokenSequence>& batch, Rng& rng,
                         bool train, double dropout_rate = 0.0);

  void swap_to_binary_head(uint64_t seed);

  std::map<std::string, std::vector<double>> export_embeddings(
      const Vocabulary& vocab) const;

  Checkpoint to_checkpoint() const;
  static W2VModel from_checkpoint(const Checkpoint& ck);
};

}  // namespace dnsgt
