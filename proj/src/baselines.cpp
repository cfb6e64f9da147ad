#include "dnsgt/baselines.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace dnsgt {

using nlohmann::json;

std::string W2VConfig::to_json() const {
  json j;
  j["model_type"] = "w2v";
  j["variant"] = variant == W2VVariant::CBOW ? "cbow" : "skipgram";
  j["embed_dim"] = embed_dim;
  j["seq_len"] = seq_len;
  j["context_r"] = context_r;
  j["domain_vocab"] = domain_vocab;
  j["head"] = head;
  return j.dump();
}

W2VConfig W2VConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  W2VConfig c;
  c.variant = j.at("variant").get<std::string>() == "cbow" ? W2VVariant::CBOW
                                                           : W2VVariant::SkipGram;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.context_r = j.at("context_r").get<int>();
  c.domain_vocab = j.at("domain_vocab").get<int>();
  c.head = j.at("head").get<std::string>();
  return c;
}

Tensor cbow_context(const Tensor& embeddings, const std::vector<int>& lens,
                    int r) {
  if (r < 1) throw std::invalid_argument("cbow_context: r must be >= 1");
  const auto& s = embeddings.shape();
  if (s.size() != 3) throw ShapeMismatch("cbow_context expects (B,L,N)");
  const int B = s[0], L = s[1], N = s[2];
  if ((int)lens.size() != B) throw ShapeMismatch("cbow_context: lens mismatch");

  // PAD rows contribute nothing to anyone's context.
  std::vector<double> keep((size_t)B * L * N, 0.0);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < lens[b]; ++i)
      std::fill_n(keep.begin() + ((size_t)b * L + i) * N, N, 1.0);
  Tensor masked = mul(embeddings, Tensor::from({B, L, N}, std::move(keep)));

  std::vector<double> band((size_t)B * L * L, 0.0);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j)
        if (i != j && std::abs(i - j) <= r)
          band[((size_t)b * L + i) * L + j] = 1.0;
  return matmul(Tensor::from({B, L, L}, std::move(band)), masked);
}

W2VModel W2VModel::init(const W2VConfig& cfg, uint64_t seed) {
  W2VModel m;
  m.cfg = cfg;
  Rng rng(seed);
  const int N = cfg.embed_dim;
  const int V = cfg.domain_vocab;
  m.params["embed"] = randn({V, N}, 0.02, rng);
  m.params["wh"] = xavier_uniform(N, N, rng);
  m.params["bh"] = Tensor::zeros({N}, true);
  if (cfg.head == "softmax") {
    m.params["ws"] = xavier_uniform(N, V, rng);
    m.params["bs"] = Tensor::zeros({V}, true);
  } else {
    m.params["wc"] = xavier_uniform(N, 1, rng);
    m.params["bc"] = Tensor::zeros({1}, true);
  }
  return m;
}

Tensor& W2VModel::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

int64_t W2VModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

std::vector<Tensor*> W2VModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params) out.push_back(&t);
  return out;
}

void W2VModel::zero_grads() {
  for (auto& [name, t] : params) t.zero_grad();
}

namespace {

struct Flat {
  std::vector<int> ids, lens;
};

Flat flatten(const std::vector<TokenSequence>& batch, int L) {
  Flat f;
  for (const auto& s : batch) {
    if ((int)s.domain_ids.size() != L)
      throw ShapeMismatch("w2v: batch sequence length != model L");
    f.ids.insert(f.ids.end(), s.domain_ids.begin(), s.domain_ids.end());
    f.lens.push_back(s.len);
  }
  return f;
}

}  // namespace

Tensor W2VModel::hidden(const std::vector<TokenSequence>& batch) {
  const int L = cfg.seq_len;
  Flat f = flatten(batch, L);
  const int B = (int)batch.size();
  Tensor e = embedding_gather(param("embed"), f.ids, {B, L});
  Tensor base = cfg.variant == W2VVariant::CBOW
                    ? cbow_context(e, f.lens, cfg.context_r)
                    : e;
  return add(matmul(base, param("wh")), param("bh"));
}

Tensor W2VModel::pretrain_loss(const std::vector<TokenSequence>& batch) {
  const int L = cfg.seq_len;
  const int V = cfg.domain_vocab;
  Flat f = flatten(batch, L);
  Tensor h = hidden(batch);
  Tensor logits = add(matmul(h, param("ws")), param("bs"));

  if (cfg.variant == W2VVariant::CBOW) {
    // Predict each token from its context.
    std::vector<double> weights;
    for (const auto& s : batch)
      for (int i = 0; i < L; ++i) weights.push_back(i < s.len ? 1.0 : 0.0);
    return cross_entropy_masked(logits, f.ids, weights);
  }

  // SkipGram: each token predicts every other non-PAD token in the
  // sequence within the context window.
  const int64_t rows = (int64_t)batch.size() * L;
  std::vector<double> targets(rows * V, 0.0);
  std::vector<double> weights(rows, 0.0);
  for (size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    for (int i = 0; i < s.len; ++i) {
      const int64_t row = (int64_t)b * L + i;
      int count = 0;
      for (int j = 0; j < s.len; ++j)
        if (j != i && std::abs(i - j) <= cfg.context_r) ++count;
      if (count == 0) continue;  // single-token sequence: skipped
      weights[row] = 1.0;
      for (int j = 0; j < s.len; ++j)
        if (j != i && std::abs(i - j) <= cfg.context_r)
          targets[row * V + s.domain_ids[j]] += 1.0 / count;
    }
  }
  return cross_entropy_soft(logits, targets, weights);
}

ForwardOutput W2VModel::classify(const std::vector<TokenSequence>& batch,
                                 Rng& rng, bool train, double dropout_rate) {
  const int L = cfg.seq_len;
  std::vector<double> labels, weights;
  for (const auto& s : batch) {
    if ((int)s.token_labels.size() != L)
      throw MissingLabels("w2v classify: per-token labels required");
    for (int i = 0; i < L; ++i) {
      const bool use = i < s.len && s.token_labels[i] >= 0;
      labels.push_back(use ? (double)s.token_labels[i] : 0.0);
      weights.push_back(use ? 1.0 : 0.0);
    }
  }
  Tensor h = hidden(batch);
  Tensor d = dropout(h, dropout_rate, rng, train);
  Tensor logits = add(matmul(d, param("wc")), param("bc"));
  ForwardOutput out;
  out.token_states = h;
  out.logits = sigmoid(logits);
  out.loss = binary_cross_entropy_logits(logits, labels, weights);
  return out;
}

void W2VModel::swap_to_binary_head(uint64_t seed) {
  params.erase("ws");
  params.erase("bs");
  Rng rng(seed);
  params["wc"] = xavier_uniform(cfg.embed_dim, 1, rng);
  params["bc"] = Tensor::zeros({1}, true);
  cfg.head = "binary";
}

std::map<std::string, std::vector<double>> W2VModel::export_embeddings(
    const Vocabulary& vocab) const {
  if (vocab.domain_vocab_size() != cfg.domain_vocab)
    throw VocabMismatch("export_embeddings: vocabulary does not match model");
  const Tensor& table = params.at("embed");
  const int N = cfg.embed_dim;
  std::map<std::string, std::vector<double>> out;
  for (int id = Vocabulary::kNumSpecials; id < cfg.domain_vocab; ++id) {
    std::vector<double> row(table.data().begin() + (size_t)id * N,
                            table.data().begin() + (size_t)(id + 1) * N);
    out[vocab.id_to_domain[id]] = std::move(row);
  }
  return out;
}

Checkpoint W2VModel::to_checkpoint() const {
  Checkpoint ck;
  ck.config_json = cfg.to_json();
  ck.vocab_hash = vocab_hash;
  for (const auto& [name, t] : params) ck.arrays.emplace_back(name, t);
  return ck;
}

W2VModel W2VModel::from_checkpoint(const Checkpoint& ck) {
  W2VConfig cfg = W2VConfig::from_json(ck.config_json);
  W2VModel fresh = W2VModel::init(cfg, 0);
  W2VModel m;
  m.cfg = cfg;
  m.vocab_hash = ck.vocab_hash;
  std::map<std::string, Tensor> loaded;
  for (const auto& [name, t] : ck.arrays) loaded.emplace(name, t);
  for (const auto& [name, expect] : fresh.params) {
    auto it = loaded.find(name);
    if (it == loaded.end())
      throw std::runtime_error("checkpoint: missing parameter " + name);
    if (it->second.shape() != expect.shape())
      throw ShapeMismatch("checkpoint: shape mismatch for " + name);
    m.params[name] = it->second;
    m.params[name].set_requires_grad(true);
  }
  return m;
}

}  // namespace dnsgt
