#include "dnsgt/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dnsgt {

using nlohmann::json;

// --- config -----------------------------------------------------------------

std::string ModelConfig::to_json() const {
  json j;
  j["embed_dim"] = embed_dim;
  j["seq_len"] = seq_len;
  j["blocks"] = blocks;
  j["heads"] = heads;
  j["omega"] = omega;
  j["dropout_embed"] = dropout_embed;
  j["dropout_finetune"] = dropout_finetune;
  j["domain_vocab"] = domain_vocab;
  j["host_vocab"] = host_vocab;
  j["topologies"] = topologies;
  j["use_attention"] = use_attention;
  j["head"] = head;
  j["num_classes"] = num_classes;
  j["model_type"] = "dnsgt";
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.omega = j.at("omega").get<double>();
  c.dropout_embed = j.at("dropout_embed").get<double>();
  c.dropout_finetune = j.at("dropout_finetune").get<double>();
  c.domain_vocab = j.at("domain_vocab").get<int>();
  c.host_vocab = j.at("host_vocab").get<int>();
  c.topologies = j.at("topologies").get<std::vector<std::string>>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.head = j.at("head").get<std::string>();
  c.num_classes = j.at("num_classes").get<int>();
  return c;
}

// --- topology registry ------------------------------------------------------

namespace {
std::map<std::string, TopologyBuilder>& registry() {
  static std::map<std::string, TopologyBuilder> r = {
      {"pad_full", [](int len, int L) { return pad_aware_full(len, L); }},
  };
  return r;
}
}  // namespace

void register_topology(const std::string& name, TopologyBuilder builder) {
  registry()[name] = std::move(builder);
}

TopologyBuilder topology_builder(const std::string& name) {
  auto it = registry().find(name);
  if (it == registry().end())
    throw std::invalid_argument("unknown topology: " + name);
  return it->second;
}

Tensor adjacency_to_tensor(const std::vector<AdjacencyMatrix>& per_sequence) {
  const int B = (int)per_sequence.size();
  const int L = per_sequence.front().L;
  std::vector<double> data((size_t)B * L * L);
  for (int b = 0; b < B; ++b) {
    if (per_sequence[b].L != L)
      throw ShapeMismatch("adjacency_to_tensor: inconsistent L");
    for (int i = 0; i < L * L; ++i)
      data[(size_t)b * L * L + i] = per_sequence[b].a[i];
  }
  return Tensor::from({B, L, L}, std::move(data));
}

std::vector<Tensor> build_batch_topologies(const std::vector<std::string>& names,
                                           const std::vector<int>& lens, int L) {
  std::vector<Tensor> out;
  for (const auto& name : names) {
    auto builder = topology_builder(name);
    std::vector<AdjacencyMatrix> mats;
    mats.reserve(lens.size());
    for (int len : lens) mats.push_back(builder(len, L));
    out.push_back(adjacency_to_tensor(mats));
  }
  return out;
}

// --- model ------------------------------------------------------------------

DnsGtModel DnsGtModel::init(const ModelConfig& cfg, uint64_t seed) {
  if (cfg.embed_dim % cfg.heads != 0)
    throw std::invalid_argument("embed_dim must be divisible by heads");
  if (cfg.omega < 0.0 || cfg.omega > 1.0)
    throw std::invalid_argument("omega must lie in [0,1]");
  DnsGtModel m;
  m.cfg = cfg;
  Rng rng(seed);
  const int N = cfg.embed_dim;
  const int K = N / cfg.heads;

  m.params["embed.domain"] = randn({cfg.domain_vocab, N}, 0.02, rng);
  m.params["embed.host"] = randn({cfg.host_vocab, N}, 0.02, rng);
  m.params["bn.gamma"] = Tensor::full({N}, 1.0);
  m.params["bn.gamma"].set_requires_grad(true);
  m.params["bn.beta"] = Tensor::zeros({N}, true);

  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string hp = p + "head" + std::to_string(h) + ".";
      m.params[hp + "wq"] = xavier_uniform(N, K, rng);
      m.params[hp + "wk"] = xavier_uniform(N, K, rng);
      m.params[hp + "wv"] = xavier_uniform(N, K, rng);
    }
    m.params[p + "wo"] = xavier_uniform(N, N, rng);
    m.params[p + "ffn.w1"] = xavier_uniform(N, N, rng);
    m.params[p + "ffn.b1"] = Tensor::zeros({N}, true);
    m.params[p + "ffn.w2"] = xavier_uniform(N, 4 * N, rng);
    m.params[p + "ffn.b2"] = Tensor::zeros({4 * N}, true);
    m.params[p + "ffn.w3"] = xavier_uniform(4 * N, N, rng);
    m.params[p + "ffn.b3"] = Tensor::zeros({N}, true);
    m.params[p + "ln1.g"] = Tensor::full({N}, 1.0);
    m.params[p + "ln1.g"].set_requires_grad(true);
    m.params[p + "ln1.b"] = Tensor::zeros({N}, true);
    m.params[p + "ln2.g"] = Tensor::full({N}, 1.0);
    m.params[p + "ln2.g"].set_requires_grad(true);
    m.params[p + "ln2.b"] = Tensor::zeros({N}, true);
  }

  if (cfg.head == "mlm") {
    m.params["head.mlm.w"] = xavier_uniform(N, cfg.domain_vocab, rng);
    m.params["head.mlm.b"] = Tensor::zeros({cfg.domain_vocab}, true);
  } else if (cfg.head == "binary") {
    m.params["head.bin.w"] = xavier_uniform(N, 1, rng);
    m.params["head.bin.b"] = Tensor::zeros({1}, true);
  } else if (cfg.head == "hostclass") {
    m.params["head.cls.w"] = xavier_uniform(N, cfg.num_classes, rng);
    m.params["head.cls.b"] = Tensor::zeros({cfg.num_classes}, true);
  } else {
    throw std::invalid_argument("unknown head: " + cfg.head);
  }
  return m;
}

Tensor& DnsGtModel::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

const Tensor& DnsGtModel::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end())
    throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

int64_t DnsGtModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

std::vector<Tensor*> DnsGtModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params) out.push_back(&t);
  return out;
}

void DnsGtModel::zero_grads() {
  for (auto& [name, t] : params) t.zero_grad();
}

static std::vector<uint8_t> valid_mask(const std::vector<int>& lens, int L) {
  std::vector<uint8_t> valid(lens.size() * L, 0);
  for (size_t b = 0; b < lens.size(); ++b)
    for (int i = 0; i < lens[b]; ++i) valid[b * L + i] = 1;
  return valid;
}

Tensor DnsGtModel::merge_embeddings(const std::vector<int>& host_ids,
                                    const std::vector<int>& domain_ids,
                                    const std::vector<int>& lens, bool train,
                                    Rng& rng) {
  const int L = cfg.seq_len;
  const int B = (int)lens.size();
  if ((int)host_ids.size() != B * L || (int)domain_ids.size() != B * L)
    throw ShapeMismatch("merge_embeddings: batch id layout mismatch");
  for (int id : domain_ids)
    if (id < 0 || id >= cfg.domain_vocab)
      throw IdOutOfRange("domain id out of range");
  for (int id : host_ids)
    if (id < 0 || id >= cfg.host_vocab)
      throw IdOutOfRange("host id out of range");

  Tensor ed = embedding_gather(param("embed.domain"), domain_ids, {B, L});
  Tensor eh = embedding_gather(param("embed.host"), host_ids, {B, L});
  Tensor merged = add(scale(ed, cfg.omega), scale(eh, 1.0 - cfg.omega));
  merged = dropout(merged, cfg.dropout_embed, rng, train);
  return batch_norm(merged, param("bn.gamma"), param("bn.beta"),
                    valid_mask(lens, L), bn, train);
}

Tensor DnsGtModel::gat_block(int block, const Tensor& x,
                             const std::vector<Tensor>& topologies) {
  const std::string p = "block" + std::to_string(block) + ".";
  const int N = cfg.embed_dim;
  const int K = N / cfg.heads;

  Tensor attn;
  if (cfg.use_attention) {
    for (const auto& A : topologies) {
      std::vector<Tensor> heads;
      for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = p + "head" + std::to_string(h) + ".";
        Tensor q = matmul(x, param(hp + "wq"));
        Tensor k = matmul(x, param(hp + "wk"));
        Tensor v = matmul(x, param(hp + "wv"));
        Tensor s = scale(matmul(q, k, /*transpose_b=*/true),
                         1.0 / std::sqrt((double)K));
        Tensor w = masked_softmax_rows(s, A);
        heads.push_back(matmul(w, v));
      }
      Tensor a = matmul(concat_last_axis(heads), param(p + "wo"));
      attn = attn.defined() ? add(attn, a) : a;  // sum aggregator over A in 𝒜
    }
  } else {
    attn = Tensor::zeros(x.shape());
  }

  Tensor y1 = layer_norm_rows(add(x, attn), param(p + "ln1.g"), param(p + "ln1.b"));
  Tensor h1 = add(matmul(y1, param(p + "ffn.w1")), param(p + "ffn.b1"));
  Tensor h2 = relu(add(matmul(h1, param(p + "ffn.w2")), param(p + "ffn.b2")));
  Tensor f = add(matmul(h2, param(p + "ffn.w3")), param(p + "ffn.b3"));
  return layer_norm_rows(add(y1, f), param(p + "ln2.g"), param(p + "ln2.b"));
}

Tensor DnsGtModel::encode(const std::vector<int>& host_ids,
                          const std::vector<int>& domain_ids,
                          const std::vector<int>& lens,
                          const std::vector<Tensor>& topologies, bool train,
                          Rng& rng) {
  Tensor x = merge_embeddings(host_ids, domain_ids, lens, train, rng);
  for (int b = 0; b < cfg.blocks; ++b) x = gat_block(b, x, topologies);
  return x;
}

std::vector<Tensor> DnsGtModel::default_topologies(
    const std::vector<int>& lens) const {
  return build_batch_topologies(cfg.topologies, lens, cfg.seq_len);
}

namespace {

struct FlatBatch {
  std::vector<int> host_ids, domain_ids, lens;
};

FlatBatch flatten(const std::vector<TokenSequence>& batch, int L) {
  FlatBatch f;
  for (const auto& s : batch) {
    if ((int)s.domain_ids.size() != L)
      throw ShapeMismatch("batch sequence length != model L");
    f.host_ids.insert(f.host_ids.end(), s.host_ids.begin(), s.host_ids.end());
    f.domain_ids.insert(f.domain_ids.end(), s.domain_ids.begin(),
                        s.domain_ids.end());
    f.lens.push_back(s.len);
  }
  return f;
}

}  // namespace

ForwardOutput DnsGtModel::forward_mlm(const std::vector<TokenSequence>& batch,
                                      const std::vector<MaskingOutcome>& masks,
                                      bool train, Rng& rng) {
  if (batch.size() != masks.size())
    throw ShapeMismatch("forward_mlm: batch/mask size mismatch");
  const int L = cfg.seq_len;
  FlatBatch f = flatten(batch, L);
  std::vector<int> input_ids, targets;
  std::vector<double> weights;
  bool any_masked = false;
  for (const auto& m : masks) {
    input_ids.insert(input_ids.end(), m.input_ids.begin(), m.input_ids.end());
    targets.insert(targets.end(), m.target_ids.begin(), m.target_ids.end());
    for (uint8_t flag : m.masked) {
      weights.push_back(flag ? 1.0 : 0.0);
      any_masked = any_masked || flag;
    }
  }
  if (!any_masked)
    throw NoMaskPresent("forward_mlm: no masked positions in batch");

  auto topos = default_topologies(f.lens);
  Tensor states = encode(f.host_ids, input_ids, f.lens, topos, train, rng);
  Tensor logits = add(matmul(states, param("head.mlm.w")), param("head.mlm.b"));
  ForwardOutput out;
  out.token_states = states;
  out.logits = logits;
  out.loss = cross_entropy_masked(logits, targets, weights);
  return out;
}

ForwardOutput DnsGtModel::forward_binary(const std::vector<TokenSequence>& batch,
                                         bool train, Rng& rng) {
  const int L = cfg.seq_len;
  FlatBatch f = flatten(batch, L);
  std::vector<double> labels, weights;
  for (const auto& s : batch) {
    if ((int)s.token_labels.size() != L)
      throw MissingLabels("forward_binary: per-token labels required");
    for (int i = 0; i < L; ++i) {
      const bool use = i < s.len && s.token_labels[i] >= 0;
      labels.push_back(use ? (double)s.token_labels[i] : 0.0);
      weights.push_back(use ? 1.0 : 0.0);
    }
  }

  auto topos = default_topologies(f.lens);
  Tensor states = encode(f.host_ids, f.domain_ids, f.lens, topos, train, rng);
  Tensor d = dropout(states, cfg.dropout_finetune, rng, train);
  Tensor logits = add(matmul(d, param("head.bin.w")), param("head.bin.b"));
  ForwardOutput out;
  out.token_states = states;
  out.logits = sigmoid(logits);  // (B,L,1) per-token probabilities
  out.loss = binary_cross_entropy_logits(logits, labels, weights);
  return out;
}

ForwardOutput DnsGtModel::forward_hostclass(
    const std::vector<TokenSequence>& batch, bool train, Rng& rng) {
  if (cfg.num_classes < 1)
    throw MissingLabels("forward_hostclass: model has no class head");
  const int L = cfg.seq_len;
  FlatBatch f = flatten(batch, L);
  std::vector<int> labels;
  std::vector<double> weights;
  for (const auto& s : batch) {
    if (s.host_label < 0)
      throw MissingLabels("forward_hostclass: per-sequence host label required");
    labels.push_back(s.host_label);
    weights.push_back(1.0);
  }

  auto topos = default_topologies(f.lens);
  Tensor states = encode(f.host_ids, f.domain_ids, f.lens, topos, train, rng);
  Tensor pooled = mean_pool_rows(states, valid_mask(f.lens, L));
  Tensor d = dropout(pooled, cfg.dropout_finetune, rng, train);
  Tensor logits = add(matmul(d, param("head.cls.w")), param("head.cls.b"));
  ForwardOutput out;
  out.token_states = states;
  out.logits = softmax_rows(logits);  // (B,C) class probabilities
  out.loss = cross_entropy_masked(logits, labels, weights);
  return out;
}

std::vector<DnsGtModel::MaskedPrediction> DnsGtModel::predict_masked(
    const TokenSequence& seq, int k) {
  std::vector<int> positions;
  for (int i = 0; i < seq.len; ++i)
    if (seq.domain_ids[i] == Vocabulary::kMask) positions.push_back(i);
  if (positions.empty())
    throw NoMaskPresent("predict_masked: sequence has no <MASK> token");

  Rng rng(0);  // eval mode, no stochastic layers
  auto topos = default_topologies({seq.len});
  Tensor states =
      encode(seq.host_ids, seq.domain_ids, {seq.len}, topos, false, rng);
  Tensor logits = add(matmul(states, param("head.mlm.w")), param("head.mlm.b"));
  Tensor probs = softmax_rows(logits);

  const int V = cfg.domain_vocab;
  std::vector<MaskedPrediction> out;
  for (int pos : positions) {
    const double* p = probs.data().data() + (size_t)pos * V;
    std::vector<std::pair<int, double>> cand;
    for (int id = Vocabulary::kNumSpecials; id < V; ++id)
      cand.emplace_back(id, p[id]);
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      return a.second > b.second;
    });
    if ((int)cand.size() > k) cand.resize(k);
    out.push_back({pos, std::move(cand)});
  }
  return out;
}

std::map<std::string, std::vector<double>> DnsGtModel::export_embeddings(
    const Vocabulary& vocab) const {
  if (vocab.domain_vocab_size() != cfg.domain_vocab)
    throw VocabMismatch("export_embeddings: vocabulary does not match model");
  const Tensor& table = param("embed.domain");
  const int N = cfg.embed_dim;
  std::map<std::string, std::vector<double>> out;
  for (int id = Vocabulary::kNumSpecials; id < cfg.domain_vocab; ++id) {
    std::vector<double> row(table.data().begin() + (size_t)id * N,
                            table.data().begin() + (size_t)(id + 1) * N);
    out[vocab.id_to_domain[id]] = std::move(row);
  }
  return out;
}

void DnsGtModel::swap_to_binary_head(uint64_t seed) {
  params.erase("head.mlm.w");
  params.erase("head.mlm.b");
  params.erase("head.cls.w");
  params.erase("head.cls.b");
  Rng rng(seed);
  params["head.bin.w"] = xavier_uniform(cfg.embed_dim, 1, rng);
  params["head.bin.b"] = Tensor::zeros({1}, true);
  cfg.head = "binary";
}

void DnsGtModel::swap_to_hostclass_head(int num_classes, uint64_t seed) {
  params.erase("head.mlm.w");
  params.erase("head.mlm.b");
  params.erase("head.bin.w");
  params.erase("head.bin.b");
  Rng rng(seed);
  params["head.cls.w"] = xavier_uniform(cfg.embed_dim, num_classes, rng);
  params["head.cls.b"] = Tensor::zeros({num_classes}, true);
  cfg.head = "hostclass";
  cfg.num_classes = num_classes;
}

// --- checkpoint -------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8),
                        (unsigned char)(v >> 16), (unsigned char)(v >> 24)};
  os.write((const char*)b, 4);
}
void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, (uint32_t)v);
  put_u32(os, (uint32_t)(v >> 32));
}
uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read((char*)b, 4);
  if (!is) throw std::runtime_error("checkpoint: truncated");
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) |
         ((uint32_t)b[3] << 24);
}
uint64_t get_u64(std::istream& is) {
  uint64_t lo = get_u32(is);
  uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  f.write("DNSGT", 5);
  put_u32(f, 1);  // format version
  put_u64(f, config_json.size());
  f.write(config_json.data(), (std::streamsize)config_json.size());
  put_u64(f, vocab_hash);
  put_u32(f, (uint32_t)arrays.size());
  for (const auto& [name, t] : arrays) {
    put_u32(f, (uint32_t)name.size());
    f.write(name.data(), (std::streamsize)name.size());
    put_u32(f, (uint32_t)t.shape().size());
    for (int d : t.shape()) put_u32(f, (uint32_t)d);
    std::vector<float> payload(t.size());
    for (int64_t i = 0; i < t.size(); ++i) payload[i] = (float)t.data()[i];
    f.write((const char*)payload.data(),
            (std::streamsize)(payload.size() * sizeof(float)));
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::strncmp(magic, "DNSGT", 5) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const uint32_t version = get_u32(f);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ck;
  const uint64_t clen = get_u64(f);
  ck.config_json.resize(clen);
  f.read(ck.config_json.data(), (std::streamsize)clen);
  ck.vocab_hash = get_u64(f);
  const uint32_t count = get_u32(f);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = get_u32(f);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    const uint32_t ndim = get_u32(f);
    std::vector<int> shape(ndim);
    int64_t size = 1;
    for (auto& d : shape) {
      d = (int)get_u32(f);
      size *= d;
    }
    std::vector<float> payload(size);
    f.read((char*)payload.data(), (std::streamsize)(size * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint: truncated payload");
    std::vector<double> data(size);
    for (int64_t j = 0; j < size; ++j) data[j] = (double)payload[j];
    ck.arrays.emplace_back(std::move(name),
                           Tensor::from(shape, std::move(data)));
  }
  return ck;
}

Checkpoint DnsGtModel::to_checkpoint() const {
  Checkpoint ck;
  ck.config_json = cfg.to_json();
  ck.vocab_hash = vocab_hash;
  for (const auto& [name, t] : params) ck.arrays.emplace_back(name, t);
  if (bn.initialized) {
    ck.arrays.emplace_back(
        "bnstate.mean",
        Tensor::from({(int)bn.running_mean.size()}, bn.running_mean));
    ck.arrays.emplace_back(
        "bnstate.var",
        Tensor::from({(int)bn.running_var.size()}, bn.running_var));
  }
  return ck;
}

DnsGtModel DnsGtModel::from_checkpoint(const Checkpoint& ck) {
  ModelConfig cfg = ModelConfig::from_json(ck.config_json);
  DnsGtModel fresh = DnsGtModel::init(cfg, /*seed=*/0);
  DnsGtModel m;
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
  if (loaded.count("bnstate.mean")) {
    m.bn.running_mean = loaded.at("bnstate.mean").data();
    m.bn.running_var = loaded.at("bnstate.var").data();
    m.bn.initialized = true;
  }
  return m;
}

}  // namespace dnsgt
