// dnsgt: end-to-end pipeline driver. Subcommands cover preprocessing,
// sequencing, vocabulary building, training, evaluation, inference,
// embedding export, embedding-space analysis, synthetic data generation,
// and a latency/throughput benchmark.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dnsgt/baselines.hpp"
#include "dnsgt/evalx.hpp"
#include "dnsgt/ingest.hpp"
#include "dnsgt/model.hpp"
#include "dnsgt/sequencer.hpp"
#include "dnsgt/synth.hpp"
#include "dnsgt/training.hpp"
#include "dnsgt/vocab.hpp"

using namespace dnsgt;
using nlohmann::json;

namespace {

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileNotFound("cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (f.read(buf, sizeof buf) || f.gcount())
    for (std::streamsize i = 0; i < f.gcount(); ++i)
      h = (h ^ (uint8_t)buf[i]) * 1099511628211ull;
  return h;
}

// Every run leaves a manifest beside its outputs: the exact config, the
// content hashes of its inputs, and the seed.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& config, const std::vector<std::string>& inputs,
                    uint64_t seed) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  json hashes = json::object();
  for (const auto& p : inputs) hashes[p] = fnv1a_file(p);
  m["input_hashes"] = hashes;
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir + "/manifest." + command + ".json");
  f << m.dump(2) << "\n";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileNotFound("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << text;
}

std::vector<RawSequence> read_sequences(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileNotFound("cannot open " + path);
  std::vector<RawSequence> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    RawSequence s;
    s.host = j.at("host").get<std::string>();
    for (const auto& q : j.at("queries"))
      s.queries.emplace_back(q.at(0).get<double>(), q.at(1).get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

void write_sequences(const std::string& path,
                     const std::vector<RawSequence>& seqs) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  for (const auto& s : seqs) {
    json q = json::array();
    for (const auto& [ts, d] : s.queries) q.push_back({ts, d});
    f << json{{"host", s.host}, {"queries", q}}.dump() << "\n";
  }
}

struct Preset {
  int embed_dim, seq_len, blocks, heads, vocab_cap;
};

Preset named_preset(const std::string& name) {
  if (name == "tiny") return {32, 8, 2, 2, 50};
  if (name == "paper") return {256, 32, 8, 8, 30000};
  throw CLI::ValidationError("unknown preset: " + name);
}

std::vector<TokenSequence> tokenize_corpus(const std::vector<RawSequence>& raw,
                                           const Vocabulary& vocab, int L) {
  std::vector<TokenSequence> out;
  out.reserve(raw.size());
  for (const auto& s : raw) out.push_back(tokenize(s, vocab, L));
  return out;
}

void attach_domain_labels(std::vector<TokenSequence>& corpus,
                          const Vocabulary& vocab,
                          const std::map<std::string, int>& labels) {
  std::map<int, int> by_id;
  for (const auto& [d, l] : labels) {
    auto it = vocab.domain_to_id.find(d);
    if (it != vocab.domain_to_id.end()) by_id[it->second] = l;
  }
  for (auto& seq : corpus)
    for (int i = 0; i < seq.len; ++i) {
      auto it = by_id.find(seq.domain_ids[i]);
      seq.token_labels[i] = it == by_id.end() ? -1 : it->second;
    }
}

int attach_host_labels(std::vector<TokenSequence>& corpus,
                       const std::map<std::string, int>& labels) {
  int num_classes = 0;
  for (const auto& [h, c] : labels) num_classes = std::max(num_classes, c + 1);
  for (auto& seq : corpus) {
    auto it = labels.find(seq.host);
    seq.host_label = it == labels.end() ? -1 : it->second;
  }
  return num_classes;
}

bool is_w2v_checkpoint(const Checkpoint& ck) {
  return json::parse(ck.config_json).value("model_type", "") == "w2v";
}

void require_vocab_match(uint64_t ck_hash, const Vocabulary& vocab) {
  if (ck_hash != 0 && ck_hash != vocab.hash())
    throw VocabMismatch("checkpoint was trained against a different vocabulary");
}

// Scores one tokenized sequence with the binary head, eval mode.
std::vector<double> binary_scores(DnsGtModel& model, const TokenSequence& seq) {
  Rng rng(0);
  TokenSequence s = seq;
  std::fill(s.token_labels.begin(), s.token_labels.end(), 0);
  auto out = model.forward_binary({s}, false, rng);
  const int L = model.cfg.seq_len;
  std::vector<double> scores(L);
  for (int i = 0; i < L; ++i) scores[i] = out.logits.data()[i];
  return scores;
}

std::vector<double> binary_scores_w2v(W2VModel& model,
                                      const TokenSequence& seq) {
  Rng rng(0);
  TokenSequence s = seq;
  std::fill(s.token_labels.begin(), s.token_labels.end(), 0);
  auto out = model.classify({s}, rng, false);
  const int L = model.cfg.seq_len;
  std::vector<double> scores(L);
  for (int i = 0; i < L; ++i) scores[i] = out.logits.data()[i];
  return scores;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"DNS query-sequence embedding pipeline"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic query log");
  std::string synth_out = "synth";
  std::string synth_profile = "two-topic";
  uint64_t synth_seed = 7;
  int synth_hosts = 8, synth_domains = 20, synth_topics = 2;
  c_synth->add_option("--out", synth_out, "output directory")->capture_default_str();
  c_synth->add_option("--profile", synth_profile,
                      "two-topic | planted-pair | botnet | uniform")
      ->capture_default_str();
  c_synth->add_option("--seed", synth_seed)->capture_default_str();
  c_synth->add_option("--hosts", synth_hosts)->capture_default_str();
  c_synth->add_option("--domains", synth_domains)->capture_default_str();
  c_synth->add_option("--topics", synth_topics)->capture_default_str();

  // ---- preprocess ----
  auto* c_pre = app.add_subcommand("preprocess",
                                   "parse a pcap or jsonl log, filter hosts, "
                                   "dedup, emit a clean query log");
  std::string pre_in, pre_out = "clean.jsonl";
  int64_t pre_min_requests = 100;
  double pre_ratio_low = 0.985, pre_ratio_high = 1.015, pre_dedup = 5.0;
  c_pre->add_option("--in", pre_in, "input .pcap or .jsonl")->required();
  c_pre->add_option("--out", pre_out)->capture_default_str();
  c_pre->add_option("--min-requests", pre_min_requests)->capture_default_str();
  c_pre->add_option("--ratio-low", pre_ratio_low)->capture_default_str();
  c_pre->add_option("--ratio-high", pre_ratio_high)->capture_default_str();
  c_pre->add_option("--dedup-window", pre_dedup)->capture_default_str();

  // ---- sequence ----
  auto* c_seq = app.add_subcommand("sequence", "split clean logs into sequences");
  std::string seq_in, seq_out = "sequences.jsonl", seq_strategy = "fixed";
  SequencingConfig seq_cfg;
  c_seq->add_option("--in", seq_in, "clean query log")->required();
  c_seq->add_option("--out", seq_out)->capture_default_str();
  c_seq->add_option("--strategy", seq_strategy, "fixed | time | density")
      ->capture_default_str();
  c_seq->add_option("--seq-len", seq_cfg.L, "sequence capacity L")
      ->capture_default_str();
  c_seq->add_option("--stride", seq_cfg.stride_s)->capture_default_str();
  c_seq->add_option("--delta-intra", seq_cfg.delta_intra)->capture_default_str();
  c_seq->add_option("--delta-base", seq_cfg.delta_base)->capture_default_str();
  c_seq->add_option("--delta-inter", seq_cfg.delta_inter)->capture_default_str();
  c_seq->add_option("--min-pts", seq_cfg.min_pts)->capture_default_str();

  // ---- build-vocab ----
  auto* c_vocab = app.add_subcommand("build-vocab", "frequency-ranked vocabulary");
  std::string vocab_in, vocab_out = "vocab.json";
  int vocab_max = 30000;
  c_vocab->add_option("--in", vocab_in, "sequences file")->required();
  c_vocab->add_option("--out", vocab_out)->capture_default_str();
  c_vocab->add_option("--max-domains", vocab_max)->capture_default_str();

  // ---- pretrain ----
  auto* c_pre_train = app.add_subcommand("pretrain", "masked-token pre-training");
  std::string pt_seqs, pt_vocab, pt_out = "run";
  std::string pt_model = "dnsgt", pt_preset = "tiny";
  TrainConfig pt_cfg;
  pt_cfg.batch_size = 32;
  pt_cfg.max_steps = 200;
  double pt_omega = 1.0;
  bool pt_no_attention = false;
  c_pre_train->add_option("--seqs", pt_seqs)->required();
  c_pre_train->add_option("--vocab", pt_vocab)->required();
  c_pre_train->add_option("--out", pt_out)->capture_default_str();
  c_pre_train->add_option("--model", pt_model, "dnsgt | cbow | skipgram")
      ->capture_default_str();
  c_pre_train->add_option("--preset", pt_preset, "tiny | paper")
      ->capture_default_str();
  c_pre_train->add_option("--steps", pt_cfg.max_steps)->capture_default_str();
  c_pre_train->add_option("--batch", pt_cfg.batch_size)->capture_default_str();
  c_pre_train->add_option("--lr", pt_cfg.lr)->capture_default_str();
  c_pre_train->add_option("--seed", pt_cfg.seed)->capture_default_str();
  c_pre_train->add_option("--omega", pt_omega, "host/domain mixing, 1 = domains only")
      ->capture_default_str();
  c_pre_train->add_flag("--no-attention", pt_no_attention,
                        "ablation: residual path only");
  c_pre_train->add_option("--eval-every", pt_cfg.eval_every)->capture_default_str();
  c_pre_train->add_option("--grad-clip", pt_cfg.grad_clip)->capture_default_str();

  // ---- finetune ----
  auto* c_ft = app.add_subcommand("finetune", "task head fine-tuning");
  std::string ft_ck, ft_seqs, ft_vocab, ft_labels, ft_out = "run";
  std::string ft_task = "binary";
  int ft_folds = 5, ft_fold = 0;
  TrainConfig ft_cfg;
  ft_cfg.batch_size = 32;
  ft_cfg.max_steps = 200;
  c_ft->add_option("--checkpoint", ft_ck)->required();
  c_ft->add_option("--seqs", ft_seqs)->required();
  c_ft->add_option("--vocab", ft_vocab)->required();
  c_ft->add_option("--labels", ft_labels, "domain or host label jsonl")->required();
  c_ft->add_option("--task", ft_task, "binary | hostclass")->capture_default_str();
  c_ft->add_option("--folds", ft_folds)->capture_default_str();
  c_ft->add_option("--fold", ft_fold, "held-out domain fold")->capture_default_str();
  c_ft->add_option("--out", ft_out)->capture_default_str();
  c_ft->add_option("--steps", ft_cfg.max_steps)->capture_default_str();
  c_ft->add_option("--batch", ft_cfg.batch_size)->capture_default_str();
  c_ft->add_option("--lr", ft_cfg.lr)->capture_default_str();
  c_ft->add_option("--seed", ft_cfg.seed)->capture_default_str();

  // ---- eval ----
  auto* c_eval = app.add_subcommand("eval", "metrics on a labeled corpus");
  std::string ev_ck, ev_seqs, ev_vocab, ev_labels, ev_report = "report.json";
  std::string ev_task = "binary", ev_roc;
  int ev_folds = 5, ev_fold = -1;
  c_eval->add_option("--checkpoint", ev_ck)->required();
  c_eval->add_option("--seqs", ev_seqs)->required();
  c_eval->add_option("--vocab", ev_vocab)->required();
  c_eval->add_option("--labels", ev_labels)->required();
  c_eval->add_option("--task", ev_task, "binary | hostclass")->capture_default_str();
  c_eval->add_option("--folds", ev_folds)->capture_default_str();
  c_eval->add_option("--fold", ev_fold, "-1 = evaluate on all domains")
      ->capture_default_str();
  c_eval->add_option("--report", ev_report)->capture_default_str();
  c_eval->add_option("--roc", ev_roc, "optional ROC curve csv");

  // ---- infer ----
  auto* c_infer = app.add_subcommand("infer", "masked-position prediction");
  std::string in_ck, in_vocab, in_sequence;
  int in_topk = 5;
  c_infer->add_option("--checkpoint", in_ck)->required();
  c_infer->add_option("--vocab", in_vocab)->required();
  c_infer->add_option("--sequence", in_sequence,
                      "'host d1 <MASK> d2 ...' space separated")
      ->required();
  c_infer->add_option("--topk", in_topk)->capture_default_str();

  // ---- embed ----
  auto* c_embed = app.add_subcommand("embed", "export domain embeddings");
  std::string em_ck, em_vocab, em_out = "embeddings.json";
  c_embed->add_option("--checkpoint", em_ck)->required();
  c_embed->add_option("--vocab", em_vocab)->required();
  c_embed->add_option("--out", em_out)->capture_default_str();

  // ---- analyze ----
  auto* c_an = app.add_subcommand("analyze", "embedding-space and context analyses");
  std::string an_ck, an_vocab, an_seqs, an_report = "analysis.json";
  std::string an_mode = "distance";
  int an_n = 200, an_min_occ = 5;
  uint64_t an_seed = 0;
  c_an->add_option("--checkpoint", an_ck)->required();
  c_an->add_option("--vocab", an_vocab)->required();
  c_an->add_option("--seqs", an_seqs)->required();
  c_an->add_option("--mode", an_mode, "distance | context")->capture_default_str();
  c_an->add_option("--n-sequences", an_n)->capture_default_str();
  c_an->add_option("--min-occurrences", an_min_occ)->capture_default_str();
  c_an->add_option("--seed", an_seed)->capture_default_str();
  c_an->add_option("--report", an_report)->capture_default_str();

  // ---- bench ----
  auto* c_bench = app.add_subcommand("bench", "latency and throughput");
  std::string bn_ck, bn_report = "bench.json";
  std::string bn_batches = "1,8,32";
  int bn_runs = 50, bn_skip = 5;
  uint64_t bn_seed = 0;
  c_bench->add_option("--checkpoint", bn_ck)->required();
  c_bench->add_option("--batch-sizes", bn_batches)->capture_default_str();
  c_bench->add_option("--runs", bn_runs)->capture_default_str();
  c_bench->add_option("--skip", bn_skip, "batches excluded from throughput")
      ->capture_default_str();
  c_bench->add_option("--seed", bn_seed)->capture_default_str();
  c_bench->add_option("--report", bn_report)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (*c_synth) {
    SynthConfig cfg;
    cfg.seed = synth_seed;
    cfg.n_hosts = synth_hosts;
    cfg.n_domains = synth_domains;
    cfg.n_topics = synth_topics;
    if (synth_profile == "two-topic") {
      cfg.n_topics = 2;
      cfg.malicious_topics = {1};
      cfg.ambiguous_domains = {0, 1};
    } else if (synth_profile == "planted-pair") {
      cfg.n_topics = 1;
      cfg.planted_pairs = {{0, 1}, {2, 3}};
    } else if (synth_profile == "botnet") {
      cfg.n_topics = 1;
      cfg.n_bot_classes = 3;
      cfg.bot_hosts_per_class = 3;
    } else if (synth_profile != "uniform") {
      throw CLI::ValidationError("unknown profile: " + synth_profile);
    }
    SynthOutput out = generate(cfg);
    write_synth(out, synth_out);
    write_manifest(synth_out, "synth",
                   json{{"profile", synth_profile},
                        {"hosts", cfg.n_hosts},
                        {"domains", cfg.n_domains},
                        {"topics", cfg.n_topics}},
                   {}, synth_seed);
    std::cout << "wrote " << out.records.size() << " records, "
              << out.sessions.size() << " sessions to " << synth_out << "\n";
    return 0;
  }

  if (*c_pre) {
    ParseResult parsed = pre_in.size() > 5 &&
                                 pre_in.substr(pre_in.size() - 5) == ".pcap"
                             ? parse_pcap(pre_in)
                             : parse_jsonl(pre_in);
    auto filt = filter_hosts(parsed.records, pre_min_requests, pre_ratio_low,
                             pre_ratio_high);
    auto streams = clean_pipeline(parsed.records, filt.kept, pre_dedup);
    std::vector<RawDnsRecord> clean;
    for (const auto& [host, stream] : streams)
      for (const auto& [ts, domain] : stream.queries) {
        RawDnsRecord r;
        r.timestamp = ts;
        r.src_host = host;
        r.dst_port = 53;
        r.qtype = 1;
        r.is_request = true;
        r.domain = domain;
        clean.push_back(r);
      }
    write_jsonl(pre_out, clean);
    write_manifest(std::filesystem::path(pre_out).parent_path().string().empty()
                       ? "."
                       : std::filesystem::path(pre_out).parent_path().string(),
                   "preprocess",
                   json{{"in", pre_in},
                        {"min_requests", pre_min_requests},
                        {"ratio_low", pre_ratio_low},
                        {"ratio_high", pre_ratio_high},
                        {"dedup_window", pre_dedup}},
                   {pre_in}, 0);
    std::cout << "kept " << filt.kept.size() << " hosts, " << clean.size()
              << " queries (skipped " << parsed.skipped << " inputs)\n";
    return 0;
  }

  if (*c_seq) {
    seq_cfg.strategy = parse_strategy(seq_strategy);
    ParseResult parsed = parse_jsonl(seq_in);
    std::set<std::string> all_hosts;
    for (const auto& r : parsed.records) all_hosts.insert(r.src_host);
    auto streams = clean_pipeline(parsed.records, all_hosts);
    std::vector<RawSequence> seqs;
    for (const auto& [host, stream] : streams) {
      auto part = sequence_stream(stream, seq_cfg);
      seqs.insert(seqs.end(), part.begin(), part.end());
    }
    write_sequences(seq_out, seqs);
    write_manifest(std::filesystem::path(seq_out).parent_path().string().empty()
                       ? "."
                       : std::filesystem::path(seq_out).parent_path().string(),
                   "sequence",
                   json{{"strategy", seq_strategy}, {"L", seq_cfg.L},
                        {"stride", seq_cfg.stride_s}},
                   {seq_in}, 0);
    std::cout << "wrote " << seqs.size() << " sequences\n";
    return 0;
  }

  if (*c_vocab) {
    auto seqs = read_sequences(vocab_in);
    Vocabulary v = build_vocab(seqs, vocab_max);
    spit(vocab_out, v.to_json());
    std::cout << "vocab: " << v.num_real_domains() << " domains, "
              << v.host_vocab_size() - 1 << " hosts\n";
    return 0;
  }

  if (*c_pre_train) {
    auto raw = read_sequences(pt_seqs);
    Vocabulary vocab = Vocabulary::from_json(slurp(pt_vocab));
    Preset p = named_preset(pt_preset);
    auto corpus = tokenize_corpus(raw, vocab, p.seq_len);
    std::filesystem::create_directories(pt_out);
    pt_cfg.checkpoint_path = pt_out + "/pretrained.ckpt";
    LossCurve curve;
    if (pt_model == "dnsgt") {
      ModelConfig mc;
      mc.embed_dim = p.embed_dim;
      mc.seq_len = p.seq_len;
      mc.blocks = p.blocks;
      mc.heads = p.heads;
      mc.omega = pt_omega;
      mc.use_attention = !pt_no_attention;
      mc.domain_vocab = vocab.domain_vocab_size();
      mc.host_vocab = vocab.host_vocab_size();
      DnsGtModel model = DnsGtModel::init(mc, pt_cfg.seed);
      model.vocab_hash = vocab.hash();
      curve = pretrain(model, corpus, vocab, pt_cfg);
    } else {
      W2VConfig wc;
      wc.variant = pt_model == "cbow" ? W2VVariant::CBOW : W2VVariant::SkipGram;
      wc.embed_dim = p.embed_dim;
      wc.seq_len = p.seq_len;
      wc.context_r = p.seq_len;
      wc.domain_vocab = vocab.domain_vocab_size();
      W2VModel model = W2VModel::init(wc, pt_cfg.seed);
      model.vocab_hash = vocab.hash();
      curve = pretrain_w2v(model, corpus, pt_cfg);
    }
    curve.write_csv(pt_out + "/loss.csv");
    write_manifest(pt_out, "pretrain",
                   json{{"model", pt_model}, {"preset", pt_preset},
                        {"steps", pt_cfg.max_steps}, {"batch", pt_cfg.batch_size},
                        {"lr", pt_cfg.lr}, {"omega", pt_omega},
                        {"no_attention", pt_no_attention}},
                   {pt_seqs, pt_vocab}, pt_cfg.seed);
    std::cout << "final loss " << curve.points.back().second << ", checkpoint "
              << pt_cfg.checkpoint_path << "\n";
    return 0;
  }

  if (*c_ft) {
    auto raw = read_sequences(ft_seqs);
    Vocabulary vocab = Vocabulary::from_json(slurp(ft_vocab));
    Checkpoint ck = Checkpoint::load(ft_ck);
    require_vocab_match(ck.vocab_hash, vocab);
    std::filesystem::create_directories(ft_out);
    ft_cfg.checkpoint_path = ft_out + "/finetuned.ckpt";
    LossCurve curve;
    if (is_w2v_checkpoint(ck)) {
      if (ft_task != "binary")
        throw std::runtime_error("w2v checkpoints support only the binary task");
      W2VModel model = W2VModel::from_checkpoint(ck);
      auto corpus = tokenize_corpus(raw, vocab, model.cfg.seq_len);
      attach_domain_labels(corpus, vocab, read_domain_labels(ft_labels));
      SplitPlan plan = make_splits(raw, vocab, ft_folds, ft_cfg.seed);
      plan.active_fold = ft_fold;
      model.swap_to_binary_head(ft_cfg.seed);
      curve = finetune_binary_w2v(model, corpus, &plan, ft_cfg);
    } else {
      DnsGtModel model = DnsGtModel::from_checkpoint(ck);
      auto corpus = tokenize_corpus(raw, vocab, model.cfg.seq_len);
      if (ft_task == "binary") {
        attach_domain_labels(corpus, vocab, read_domain_labels(ft_labels));
        SplitPlan plan = make_splits(raw, vocab, ft_folds, ft_cfg.seed);
        plan.active_fold = ft_fold;
        model.swap_to_binary_head(ft_cfg.seed);
        curve = finetune_binary(model, corpus, &plan, ft_cfg);
      } else if (ft_task == "hostclass") {
        int classes = attach_host_labels(corpus, read_host_labels(ft_labels));
        model.swap_to_hostclass_head(classes, ft_cfg.seed);
        curve = finetune_hostclass(model, corpus, ft_cfg);
      } else {
        throw CLI::ValidationError("unknown task: " + ft_task);
      }
    }
    curve.write_csv(ft_out + "/loss.csv");
    write_manifest(ft_out, "finetune",
                   json{{"task", ft_task}, {"folds", ft_folds}, {"fold", ft_fold},
                        {"steps", ft_cfg.max_steps}, {"lr", ft_cfg.lr}},
                   {ft_ck, ft_seqs, ft_vocab, ft_labels}, ft_cfg.seed);
    std::cout << "final loss " << curve.points.back().second << ", checkpoint "
              << ft_cfg.checkpoint_path << "\n";
    return 0;
  }

  if (*c_eval) {
    auto raw = read_sequences(ev_seqs);
    Vocabulary vocab = Vocabulary::from_json(slurp(ev_vocab));
    Checkpoint ck = Checkpoint::load(ev_ck);
    require_vocab_match(ck.vocab_hash, vocab);
    json report;

    if (ev_task == "binary") {
      auto labels = read_domain_labels(ev_labels);
      std::function<std::vector<double>(const TokenSequence&)> scorer;
      int L;
      std::optional<DnsGtModel> gm;
      std::optional<W2VModel> wm;
      if (is_w2v_checkpoint(ck)) {
        wm = W2VModel::from_checkpoint(ck);
        L = wm->cfg.seq_len;
        scorer = [&](const TokenSequence& s) { return binary_scores_w2v(*wm, s); };
      } else {
        gm = DnsGtModel::from_checkpoint(ck);
        L = gm->cfg.seq_len;
        scorer = [&](const TokenSequence& s) { return binary_scores(*gm, s); };
      }
      auto corpus = tokenize_corpus(raw, vocab, L);
      std::vector<int> eval_ids;
      if (ev_fold >= 0) {
        SplitPlan plan = make_splits(raw, vocab, ev_folds, 0);
        plan.active_fold = ev_fold;
        eval_ids = plan.eval_domains();
      }
      auto domain_scores = aggregate_domain_scores(scorer, corpus, eval_ids);
      std::vector<double> scores;
      std::vector<int> y;
      for (const auto& [id, score] : domain_scores) {
        auto it = labels.find(vocab.id_to_domain[id]);
        if (it == labels.end()) continue;
        scores.push_back(score);
        y.push_back(it->second);
      }
      auto [best_t, best_f1] = f1_best(scores, y);
      report["auc"] = roc_auc(scores, y);
      report["f1_at_05"] = f1_at(scores, y, 0.5);
      report["f1_best"] = {{"threshold", best_t}, {"value", best_f1}};
      report["domains_scored"] = scores.size();
      if (!ev_roc.empty()) write_roc_csv(scores, y, ev_roc);
    } else if (ev_task == "hostclass") {
      DnsGtModel model = DnsGtModel::from_checkpoint(ck);
      auto corpus = tokenize_corpus(raw, vocab, model.cfg.seq_len);
      auto labels = read_host_labels(ev_labels);
      attach_host_labels(corpus, labels);
      // Host prediction: mean of per-sequence class probabilities.
      std::map<std::string, std::pair<std::vector<double>, int>> by_host;
      Rng rng(0);
      for (auto seq : corpus) {
        if (seq.host_label < 0) continue;
        const int lbl = seq.host_label;
        seq.host_label = 0;  // loss needs a valid label; logits are what we use
        auto out = model.forward_hostclass({seq}, false, rng);
        auto& [acc, n] = by_host[seq.host];
        if (acc.empty()) acc.assign(out.logits.dim(1), 0.0);
        for (int c = 0; c < (int)acc.size(); ++c)
          acc[c] += out.logits.data()[c];
        ++n;
        by_host[seq.host].second = n;
        corpus.front().host_label = lbl;
      }
      std::vector<std::vector<double>> probs;
      std::vector<int> y;
      for (const auto& [host, pn] : by_host) {
        std::vector<double> p = pn.first;
        for (double& v : p) v /= pn.second;
        probs.push_back(p);
        y.push_back(labels.at(host));
      }
      auto rep = accuracy_multiclass(probs, y);
      report["accuracy"] = rep.accuracy;
      report["auc"] = rep.macro_auc;
      report["f1"] = rep.macro_f1;
      report["hosts_scored"] = probs.size();
    } else {
      throw CLI::ValidationError("unknown task: " + ev_task);
    }
    spit(ev_report, report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
  }

  if (*c_infer) {
    Vocabulary vocab = Vocabulary::from_json(slurp(in_vocab));
    Checkpoint ck = Checkpoint::load(in_ck);
    require_vocab_match(ck.vocab_hash, vocab);
    DnsGtModel model = DnsGtModel::from_checkpoint(ck);
    std::istringstream ss(in_sequence);
    std::string host, tok;
    ss >> host;
    std::vector<std::string> tokens;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty()) throw std::runtime_error("infer: empty sequence");
    const int L = model.cfg.seq_len;
    if ((int)tokens.size() > L)
      throw std::runtime_error("infer: sequence longer than model capacity");
    TokenSequence seq;
    seq.len = (int)tokens.size();
    seq.host = host;
    seq.host_ids.assign(L, vocab.host_id(host));
    seq.domain_ids.assign(L, Vocabulary::kPad);
    seq.token_labels.assign(L, -1);
    for (int i = 0; i < seq.len; ++i)
      seq.domain_ids[i] = tokens[i] == "<MASK>" ? Vocabulary::kMask
                                                : vocab.domain_id(tokens[i]);
    auto preds = model.predict_masked(seq, in_topk);
    // Listing layout: input line, then per masked position the ranked
    // predictions on the right.
    std::cout << host;
    for (const auto& t : tokens) std::cout << " " << t;
    std::cout << "\n";
    for (const auto& p : preds) {
      std::cout << "  position " << p.position << ":";
      for (const auto& [id, prob] : p.top)
        std::cout << "  " << vocab.id_to_domain[id] << " ("
                  << std::fixed << std::setprecision(4) << prob << ")";
      std::cout << "\n";
    }
    return 0;
  }

  if (*c_embed) {
    Vocabulary vocab = Vocabulary::from_json(slurp(em_vocab));
    Checkpoint ck = Checkpoint::load(em_ck);
    require_vocab_match(ck.vocab_hash, vocab);
    std::map<std::string, std::vector<double>> emb =
        is_w2v_checkpoint(ck)
            ? W2VModel::from_checkpoint(ck).export_embeddings(vocab)
            : DnsGtModel::from_checkpoint(ck).export_embeddings(vocab);
    json j = json::object();
    for (const auto& [d, v] : emb) j[d] = v;
    spit(em_out, j.dump() + "\n");
    std::cout << "wrote " << emb.size() << " embeddings\n";
    return 0;
  }

  if (*c_an) {
    Vocabulary vocab = Vocabulary::from_json(slurp(an_vocab));
    Checkpoint ck = Checkpoint::load(an_ck);
    require_vocab_match(ck.vocab_hash, vocab);
    auto raw = read_sequences(an_seqs);
    json report;
    if (an_mode == "distance") {
      if (is_w2v_checkpoint(ck)) {
        W2VModel model = W2VModel::from_checkpoint(ck);
        auto corpus = tokenize_corpus(raw, vocab, model.cfg.seq_len);
        Rng rng(an_seed);
        auto rep = sequence_vs_random_distance(model.param("embed"), corpus,
                                               an_n, rng);
        report = {{"within_cosine", rep.within_cosine},
                  {"within_euclid", rep.within_euclid},
                  {"within_cosine_dedup", rep.within_cosine_dedup},
                  {"within_euclid_dedup", rep.within_euclid_dedup},
                  {"random_cosine", rep.random_cosine},
                  {"random_euclid", rep.random_euclid}};
      } else {
        DnsGtModel model = DnsGtModel::from_checkpoint(ck);
        auto corpus = tokenize_corpus(raw, vocab, model.cfg.seq_len);
        Rng rng(an_seed);
        auto rep = sequence_vs_random_distance(model.param("embed.domain"),
                                               corpus, an_n, rng);
        report = {{"within_cosine", rep.within_cosine},
                  {"within_euclid", rep.within_euclid},
                  {"within_cosine_dedup", rep.within_cosine_dedup},
                  {"within_euclid_dedup", rep.within_euclid_dedup},
                  {"random_cosine", rep.random_cosine},
                  {"random_euclid", rep.random_euclid}};
      }
    } else if (an_mode == "context") {
      std::function<std::vector<double>(const TokenSequence&)> scorer;
      int L;
      std::optional<DnsGtModel> gm;
      std::optional<W2VModel> wm;
      if (is_w2v_checkpoint(ck)) {
        wm = W2VModel::from_checkpoint(ck);
        L = wm->cfg.seq_len;
        scorer = [&](const TokenSequence& s) { return binary_scores_w2v(*wm, s); };
      } else {
        gm = DnsGtModel::from_checkpoint(ck);
        L = gm->cfg.seq_len;
        scorer = [&](const TokenSequence& s) { return binary_scores(*gm, s); };
      }
      auto corpus = tokenize_corpus(raw, vocab, L);
      CvReport rep = context_sensitivity(scorer, corpus, an_min_occ);
      json per = json::object();
      for (const auto& [id, cv] : rep.per_domain)
        per[vocab.id_to_domain[id]] = cv;
      report = {{"per_domain_cv", per},
                {"frac_over_0.01", rep.frac_over_001},
                {"frac_over_0.03", rep.frac_over_003},
                {"frac_over_0.05", rep.frac_over_005}};
    } else {
      throw CLI::ValidationError("unknown mode: " + an_mode);
    }
    spit(an_report, report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
  }

  if (*c_bench) {
    Checkpoint ck = Checkpoint::load(bn_ck);
    if (is_w2v_checkpoint(ck))
      throw std::runtime_error("bench expects a dnsgt checkpoint");
    std::vector<int> batch_sizes;
    {
      std::stringstream ss(bn_batches);
      std::string part;
      while (std::getline(ss, part, ',')) batch_sizes.push_back(std::stoi(part));
    }
    using clock = std::chrono::steady_clock;
    json rows = json::array();
    for (int bs : batch_sizes) {
      for (const std::string mode : {"inference", "training"}) {
        // Invocation time includes building the model from the checkpoint.
        auto t_start = clock::now();
        DnsGtModel model = DnsGtModel::from_checkpoint(ck);
        Rng rng(bn_seed);
        const int L = model.cfg.seq_len;
        const int V = model.cfg.domain_vocab;
        std::vector<TokenSequence> batch(bs);
        std::uniform_int_distribution<int> pick(Vocabulary::kNumSpecials, V - 1);
        for (auto& seq : batch) {
          seq.len = L;
          seq.host_ids.assign(L, 0);
          seq.domain_ids.resize(L);
          seq.token_labels.assign(L, -1);
          for (auto& id : seq.domain_ids) id = pick(rng);
          seq.domain_ids[0] = Vocabulary::kMask;
        }
        std::vector<MaskingOutcome> masks(bs);
        for (int b = 0; b < bs; ++b) {
          masks[b].input_ids = batch[b].domain_ids;
          masks[b].target_ids = batch[b].domain_ids;
          masks[b].target_ids[0] = Vocabulary::kNumSpecials;
          masks[b].masked.assign(L, 0);
          masks[b].masked[0] = 1;
        }
        std::optional<AdamOptimizer> opt;
        if (mode == "training")
          opt.emplace(model.parameters(), 1e-4);
        double first_batch_s = 0.0, total_s = 0.0, tail_s = 0.0;
        for (int run = 0; run < bn_runs; ++run) {
          auto t0 = clock::now();
          if (mode == "training") {
            opt->zero_grads();
            auto out = model.forward_mlm(batch, masks, true, rng);
            backward(out.loss);
            opt->step();
          } else {
            model.forward_mlm(batch, masks, false, rng);
          }
          auto t1 = clock::now();
          const double dt = std::chrono::duration<double>(t1 - t0).count();
          total_s += dt;
          if (run >= bn_skip) tail_s += dt;
          if (run == 0)
            first_batch_s = std::chrono::duration<double>(t1 - t_start).count();
        }
        rows.push_back({{"batch_size", bs},
                        {"mode", mode},
                        {"cold_start_s", first_batch_s},
                        {"mean_latency_s", total_s / bn_runs},
                        {"throughput_bps", (bn_runs - bn_skip) / tail_s}});
      }
    }
    json report = {{"runs", bn_runs}, {"skip", bn_skip}, {"rows", rows}};
    spit(bn_report, report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
  }

  return 0;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const NonFiniteDetected& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
