#include "dnsgt/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace dnsgt {

namespace {

void check_binary(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("scores/labels size mismatch or empty");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");
  int pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw DegenerateLabels("need at least one positive and one negative");
}

}  // namespace

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  check_binary(scores, labels);
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double wins = 0.0, ties = 0.0;
  int64_t neg_below = 0, pos_total = 0, neg_total = 0;
  for (int l : labels) (l ? pos_total : neg_total)++;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    int64_t pos_here = 0, neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos_here : neg_here)++;
      ++j;
    }
    wins += (double)pos_here * neg_below;
    ties += (double)pos_here * neg_here;
    neg_below += neg_here;
    i = j;
  }
  return (wins + 0.5 * ties) / ((double)pos_total * neg_total);
}

double f1_at(const std::vector<double>& scores, const std::vector<int>& labels,
             double threshold) {
  check_binary(scores, labels);
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i]) ++tp;
    else if (pred) ++fp;
    else if (labels[i]) ++fn;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

std::pair<double, double> f1_best(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
  check_binary(scores, labels);
  std::set<double> cand(scores.begin(), scores.end());
  cand.insert(0.0);
  cand.insert(1.0);
  double best_t = 0.0, best_f1 = -1.0;
  for (double t : cand) {
    const double f1 = f1_at(scores, labels, t);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return {best_t, best_f1};
}

void write_roc_csv(const std::vector<double>& scores,
                   const std::vector<int>& labels, const std::string& path) {
  check_binary(scores, labels);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  int64_t pos_total = 0, neg_total = 0;
  for (int l : labels) (l ? pos_total : neg_total)++;
  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  f << "fpr,tpr,threshold\n";
  f << "0,0,inf\n";
  for (double t : thresholds) {
    int64_t tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] ? tp : fp)++;
    f << (double)fp / neg_total << "," << (double)tp / pos_total << "," << t
      << "\n";
  }
}

MulticlassReport accuracy_multiclass(
    const std::vector<std::vector<double>>& probs,
    const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty())
    throw std::invalid_argument("probs/labels size mismatch or empty");
  const int C = (int)probs[0].size();
  MulticlassReport rep;

  int64_t correct = 0;
  std::vector<int> preds(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    int arg = 0;
    for (int c = 1; c < C; ++c)
      if (probs[i][c] > probs[i][arg]) arg = c;
    preds[i] = arg;
    if (arg == labels[i]) ++correct;
  }
  rep.accuracy = (double)correct / probs.size();

  double auc_sum = 0.0;
  int auc_classes = 0;
  double f1_sum = 0.0;
  for (int c = 0; c < C; ++c) {
    std::vector<double> s(probs.size());
    std::vector<int> l(probs.size());
    int64_t pos = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
      s[i] = probs[i][c];
      l[i] = labels[i] == c ? 1 : 0;
      pos += l[i];
    }
    if (pos > 0 && pos < (int64_t)probs.size()) {
      auc_sum += roc_auc(s, l);
      ++auc_classes;
    }
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
      const bool pred = preds[i] == c;
      const bool truth = labels[i] == c;
      if (pred && truth) ++tp;
      else if (pred) ++fp;
      else if (truth) ++fn;
    }
    const double denom = 2.0 * tp + fp + fn;
    f1_sum += denom == 0.0 ? 0.0 : 2.0 * tp / denom;
  }
  rep.macro_auc = auc_classes ? auc_sum / auc_classes : 0.0;
  rep.macro_f1 = f1_sum / C;
  return rep;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double sq = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

}  // namespace

DistanceReport embedding_distances(
    const std::map<std::string, std::vector<double>>& embeddings,
    const std::vector<std::string>& set_a,
    const std::vector<std::string>& set_b) {
  if (set_a.empty() || set_b.empty())
    throw std::invalid_argument("embedding_distances: empty set");
  auto vec = [&](const std::string& d) -> const std::vector<double>& {
    auto it = embeddings.find(d);
    if (it == embeddings.end()) throw MissingDomain("no embedding for " + d);
    return it->second;
  };
  DistanceReport rep;
  int64_t n_intra = 0;
  for (size_t i = 0; i < set_a.size(); ++i)
    for (size_t j = i + 1; j < set_a.size(); ++j) {
      rep.intra_cosine += cosine(vec(set_a[i]), vec(set_a[j]));
      rep.intra_euclid += euclid(vec(set_a[i]), vec(set_a[j]));
      ++n_intra;
    }
  if (n_intra) {
    rep.intra_cosine /= n_intra;
    rep.intra_euclid /= n_intra;
  }
  int64_t n_inter = 0;
  for (const auto& a : set_a)
    for (const auto& b : set_b) {
      rep.inter_cosine += cosine(vec(a), vec(b));
      rep.inter_euclid += euclid(vec(a), vec(b));
      ++n_inter;
    }
  rep.inter_cosine /= n_inter;
  rep.inter_euclid /= n_inter;
  return rep;
}

namespace {

std::vector<double> table_row(const Tensor& table, int id) {
  const int N = table.dim(1);
  return std::vector<double>(table.data().begin() + (size_t)id * N,
                             table.data().begin() + (size_t)(id + 1) * N);
}

struct PairStats {
  double cos = 0.0, euc = 0.0;
  int64_t n = 0;
  void add(const std::vector<double>& a, const std::vector<double>& b) {
    cos += cosine(a, b);
    euc += euclid(a, b);
    ++n;
  }
};

void pairwise(const std::vector<int>& ids, const Tensor& table, PairStats& s) {
  for (size_t i = 0; i < ids.size(); ++i)
    for (size_t j = i + 1; j < ids.size(); ++j)
      s.add(table_row(table, ids[i]), table_row(table, ids[j]));
}

}  // namespace

SequenceDistanceReport sequence_vs_random_distance(
    const Tensor& table, const std::vector<TokenSequence>& corpus,
    int n_sequences, Rng& rng) {
  if (corpus.empty()) throw EmptyCorpus("sequence_vs_random_distance");
  const int V = table.dim(0);
  std::uniform_int_distribution<size_t> pick_seq(0, corpus.size() - 1);
  std::uniform_int_distribution<int> pick_dom(Vocabulary::kNumSpecials, V - 1);

  PairStats within, within_dedup, random;
  for (int k = 0; k < n_sequences; ++k) {
    const TokenSequence& seq = corpus[pick_seq(rng)];
    std::vector<int> ids(seq.domain_ids.begin(),
                         seq.domain_ids.begin() + seq.len);
    pairwise(ids, table, within);
    std::vector<int> uniq = ids;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    pairwise(uniq, table, within_dedup);
    std::vector<int> rand_ids(ids.size());
    for (auto& id : rand_ids) id = pick_dom(rng);
    pairwise(rand_ids, table, random);
  }
  SequenceDistanceReport rep;
  if (within.n) {
    rep.within_cosine = within.cos / within.n;
    rep.within_euclid = within.euc / within.n;
  }
  if (within_dedup.n) {
    rep.within_cosine_dedup = within_dedup.cos / within_dedup.n;
    rep.within_euclid_dedup = within_dedup.euc / within_dedup.n;
  }
  if (random.n) {
    rep.random_cosine = random.cos / random.n;
    rep.random_euclid = random.euc / random.n;
  }
  return rep;
}

CvReport context_sensitivity(
    const std::function<std::vector<double>(const TokenSequence&)>& scorer,
    const std::vector<TokenSequence>& corpus, int min_occurrences) {
  // Per domain, one score per containing sequence (mean over its
  // occurrences within that sequence).
  std::map<int, std::vector<double>> per_domain_scores;
  for (const auto& seq : corpus) {
    std::vector<double> scores = scorer(seq);
    std::map<int, std::pair<double, int>> here;
    for (int i = 0; i < seq.len; ++i) {
      auto& [sum, cnt] = here[seq.domain_ids[i]];
      sum += scores[i];
      ++cnt;
    }
    for (const auto& [id, sc] : here)
      if (id >= Vocabulary::kNumSpecials)
        per_domain_scores[id].push_back(sc.first / sc.second);
  }

  CvReport rep;
  int total = 0;
  int over1 = 0, over3 = 0, over5 = 0;
  for (const auto& [id, scores] : per_domain_scores) {
    if ((int)scores.size() < min_occurrences) continue;
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= scores.size();
    if (mean == 0.0) continue;
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= scores.size();
    const double cv = std::sqrt(var) / mean;
    rep.per_domain[id] = cv;
    ++total;
    if (cv > 0.01) ++over1;
    if (cv > 0.03) ++over3;
    if (cv > 0.05) ++over5;
  }
  if (total) {
    rep.frac_over_001 = (double)over1 / total;
    rep.frac_over_003 = (double)over3 / total;
    rep.frac_over_005 = (double)over5 / total;
  }
  return rep;
}

std::map<int, double> aggregate_domain_scores(
    const std::function<std::vector<double>(const TokenSequence&)>& scorer,
    const std::vector<TokenSequence>& corpus,
    const std::vector<int>& eval_domains) {
  std::set<int> keep(eval_domains.begin(), eval_domains.end());
  std::map<int, std::pair<double, int64_t>> acc;
  for (const auto& seq : corpus) {
    std::vector<double> scores = scorer(seq);
    for (int i = 0; i < seq.len; ++i) {
      const int id = seq.domain_ids[i];
      if (id < Vocabulary::kNumSpecials) continue;
      if (!keep.empty() && !keep.count(id)) continue;
      auto& [sum, cnt] = acc[id];
      sum += scores[i];
      ++cnt;
    }
  }
  std::map<int, double> out;
  for (const auto& [id, sc] : acc) out[id] = sc.first / sc.second;
  return out;
}

}  // namespace dnsgt
