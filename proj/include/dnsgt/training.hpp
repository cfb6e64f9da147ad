#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dnsgt/baselines.hpp"
#include "dnsgt/model.hpp"
#include "dnsgt/vocab.hpp"

namespace dnsgt {

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 256;
  int max_steps = 0;
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_every = 0;  // 0 = no periodic checkpoints
  std::string checkpoint_path;
  double grad_clip = 0.0;  // 0 = off
  MaskingRates masking;
};

/// Adam over a fixed parameter list; per-parameter moment buffers.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grads();
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct LossCurve {
  std::vector<std::pair<int, double>> points;  // (step, loss)
  void write_csv(const std::string& path) const;
};

struct SplitPlan {
  double time_boundary = 0.0;           // train: ts < boundary
  std::vector<std::vector<int>> folds;  // real-domain ids per fold
  int active_fold = 0;

  const std::vector<int>& eval_domains() const { return folds[active_fold]; }
  bool is_eval_domain(int domain_id) const;
};

SplitPlan make_splits(const std::vector<RawSequence>& corpus,
                      const Vocabulary& vocab, int folds, uint64_t seed,
                      double time_fraction = 0.7);

// MLM pre-training with dynamic masking re-drawn per batch.
LossCurve pretrain(DnsGtModel& model, const std::vector<TokenSequence>& corpus,
                   const Vocabulary& vocab, const TrainConfig& cfg);
LossCurve pretrain_w2v(W2VModel& model, const std::vector<TokenSequence>& corpus,
                       const TrainConfig& cfg);

// Fine-tuning on a labeled corpus; trains every parameter. For the
// binary task, labels of evaluation-fold domains are excluded from the
// loss via the plan.
LossCurve finetune_binary(DnsGtModel& model,
                          const std::vector<TokenSequence>& corpus,
                          const SplitPlan* plan, const TrainConfig& cfg);
LossCurve finetune_binary_w2v(W2VModel& model,
                              const std::vector<TokenSequence>& corpus,
                              const SplitPlan* plan, const TrainConfig& cfg);
LossCurve finetune_hostclass(DnsGtModel& model,
                             const std::vector<TokenSequence>& corpus,
                             const TrainConfig& cfg);

}  // namespace dnsgt
