#include "dnsgt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace dnsgt {

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> params, double lr,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (Tensor* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, (double)t_);
  const double bc2 = 1.0 - std::pow(beta2_, (double)t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor* p = params_[i];
    auto& g = p->grad();
    auto& d = p->data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < d.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      d[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grads() {
  for (Tensor* p : params_) p->zero_grad();
}

void LossCurve::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "step,loss\n";
  for (const auto& [step, loss] : points) f << step << "," << loss << "\n";
}

bool SplitPlan::is_eval_domain(int domain_id) const {
  const auto& fold = folds[active_fold];
  return std::binary_search(fold.begin(), fold.end(), domain_id);
}

SplitPlan make_splits(const std::vector<RawSequence>& corpus,
                      const Vocabulary& vocab, int folds, uint64_t seed,
                      double time_fraction) {
  if (folds < 2) throw std::invalid_argument("make_splits: folds must be >= 2");
  SplitPlan plan;

  double tmin = std::numeric_limits<double>::infinity();
  double tmax = -std::numeric_limits<double>::infinity();
  for (const auto& s : corpus)
    for (const auto& [ts, d] : s.queries) {
      tmin = std::min(tmin, ts);
      tmax = std::max(tmax, ts);
    }
  plan.time_boundary =
      corpus.empty() ? 0.0 : tmin + time_fraction * (tmax - tmin);

  std::vector<int> ids;
  for (int id = Vocabulary::kNumSpecials; id < vocab.domain_vocab_size(); ++id)
    ids.push_back(id);
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  plan.folds.assign(folds, {});
  for (size_t i = 0; i < ids.size(); ++i)
    plan.folds[i % folds].push_back(ids[i]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

namespace {

// Shuffled-deck batch sampler: every pass visits every index once.
class BatchSampler {
 public:
  BatchSampler(size_t n, int batch_size, Rng& rng)
      : n_(n), batch_size_(batch_size), rng_(rng) {
    deck_.resize(n);
    std::iota(deck_.begin(), deck_.end(), 0);
    pos_ = n;  // force reshuffle on first draw
  }
  std::vector<size_t> next() {
    std::vector<size_t> out;
    for (int i = 0; i < batch_size_ && i < (int)n_; ++i) {
      if (pos_ >= n_) {
        std::shuffle(deck_.begin(), deck_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(deck_[pos_++]);
    }
    return out;
  }

 private:
  size_t n_;
  int batch_size_;
  Rng& rng_;
  std::vector<size_t> deck_;
  size_t pos_ = 0;
};

void clip_grads(std::vector<Tensor*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (Tensor* p : params)
    for (double g : p->grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for (Tensor* p : params)
    for (double& g : p->grad()) g *= s;
}

template <typename Model, typename StepFn>
LossCurve run_loop(Model& model, size_t corpus_size, const TrainConfig& cfg,
                   StepFn make_loss) {
  if (corpus_size == 0) throw EmptyCorpus("training: empty corpus");
  Rng rng(cfg.seed);
  auto params = model.parameters();
  AdamOptimizer opt(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  BatchSampler sampler(corpus_size, cfg.batch_size, rng);
  LossCurve curve;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    auto idx = sampler.next();
    double loss_value;
    try {
      opt.zero_grads();
      Tensor loss = make_loss(idx, rng);
      loss_value = loss.item();
      backward(loss);
      clip_grads(params, cfg.grad_clip);
      opt.step();
    } catch (const NonFiniteDetected& e) {
      // Last periodic checkpoint (if any) stays on disk as last-good.
      throw NonFiniteLoss(std::string("training aborted at step ") +
                          std::to_string(step) + ": " + e.what());
    }
    curve.points.emplace_back(step, loss_value);
    if (cfg.eval_every > 0 && !cfg.checkpoint_path.empty() &&
        step % cfg.eval_every == 0)
      model.to_checkpoint().save(cfg.checkpoint_path);
  }
  if (!cfg.checkpoint_path.empty()) model.to_checkpoint().save(cfg.checkpoint_path);
  return curve;
}

}  // namespace

LossCurve pretrain(DnsGtModel& model, const std::vector<TokenSequence>& corpus,
                   const Vocabulary& vocab, const TrainConfig& cfg) {
  return run_loop(model, corpus.size(), cfg,
                  [&](const std::vector<size_t>& idx, Rng& rng) {
                    std::vector<TokenSequence> batch;
                    std::vector<MaskingOutcome> masks;
                    for (size_t i : idx) {
                      batch.push_back(corpus[i]);
                      masks.push_back(
                          apply_mlm_mask(corpus[i], cfg.masking, vocab, rng));
                    }
                    return model.forward_mlm(batch, masks, true, rng).loss;
                  });
}

LossCurve pretrain_w2v(W2VModel& model, const std::vector<TokenSequence>& corpus,
                       const TrainConfig& cfg) {
  return run_loop(model, corpus.size(), cfg,
                  [&](const std::vector<size_t>& idx, Rng&) {
                    std::vector<TokenSequence> batch;
                    for (size_t i : idx) batch.push_back(corpus[i]);
                    return model.pretrain_loss(batch);
                  });
}

namespace {

// Evaluation-fold domains never contribute a supervised label.
TokenSequence strip_eval_labels(const TokenSequence& seq, const SplitPlan* plan) {
  if (!plan) return seq;
  TokenSequence out = seq;
  for (int i = 0; i < out.len; ++i)
    if (plan->is_eval_domain(out.domain_ids[i])) out.token_labels[i] = -1;
  return out;
}

}  // namespace

LossCurve finetune_binary(DnsGtModel& model,
                          const std::vector<TokenSequence>& corpus,
                          const SplitPlan* plan, const TrainConfig& cfg) {
  return run_loop(model, corpus.size(), cfg,
                  [&](const std::vector<size_t>& idx, Rng& rng) {
                    std::vector<TokenSequence> batch;
                    for (size_t i : idx)
                      batch.push_back(strip_eval_labels(corpus[i], plan));
                    return model.forward_binary(batch, true, rng).loss;
                  });
}

LossCurve finetune_binary_w2v(W2VModel& model,
                              const std::vector<TokenSequence>& corpus,
                              const SplitPlan* plan, const TrainConfig& cfg) {
  return run_loop(model, corpus.size(), cfg,
                  [&](const std::vector<size_t>& idx, Rng& rng) {
                    std::vector<TokenSequence> batch;
                    for (size_t i : idx)
                      batch.push_back(strip_eval_labels(corpus[i], plan));
                    return model.classify(batch, rng, true, 0.0).loss;
                  });
}

LossCurve finetune_hostclass(DnsGtModel& model,
                             const std::vector<TokenSequence>& corpus,
                             const TrainConfig& cfg) {
  return run_loop(model, corpus.size(), cfg,
                  [&](const std::vector<size_t>& idx, Rng& rng) {
                    std::vector<TokenSequence> batch;
                    for (size_t i : idx) batch.push_back(corpus[i]);
                    return model.forward_hostclass(batch, true, rng).loss;
                  });
}

}  // namespace dnsgt
