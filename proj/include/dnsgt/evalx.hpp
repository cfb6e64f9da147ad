#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dnsgt/tensor.hpp"
#include "dnsgt/vocab.hpp"

namespace dnsgt {

struct DegenerateLabels : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingDomain : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mann-Whitney rank statistic: P(score_pos > score_neg) + 1/2 P(tie).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

double f1_at(const std::vector<double>& scores, const std::vector<int>& labels,
             double threshold);

// Sweeps all distinct scores plus 0 and 1; lowest threshold on F1 ties.
std::pair<double, double> f1_best(const std::vector<double>& scores,
                                  const std::vector<int>& labels);

// (fpr, tpr, threshold) rows, thresholds descending through all distinct
// scores plus sentinels.
void write_roc_csv(const std::vector<double>& scores,
                   const std::vector<int>& labels, const std::string& path);

struct MulticlassReport {
  double accuracy = 0.0;
  double macro_auc = 0.0;  // one-vs-rest, averaged over scorable classes
  double macro_f1 = 0.0;
};

// probs is (n,C) row-major; argmax ties break toward the lowest class id.
MulticlassReport accuracy_multiclass(const std::vector<std::vector<double>>& probs,
                                     const std::vector<int>& labels);

struct DistanceReport {
  double intra_cosine = 0.0, intra_euclid = 0.0;
  double inter_cosine = 0.0, inter_euclid = 0.0;
};

// Intra over unordered distinct pairs of set_a; inter over the full
// a x b cross product. Cosine involving a zero vector is defined 0.
DistanceReport embedding_distances(
    const std::map<std::string, std::vector<double>>& embeddings,
    const std::vector<std::string>& set_a, const std::vector<std::string>& set_b);

struct SequenceDistanceReport {
  double within_cosine = 0.0, within_euclid = 0.0;
  double within_cosine_dedup = 0.0, within_euclid_dedup = 0.0;
  double random_cosine = 0.0, random_euclid = 0.0;
};

// Samples n_sequences sequences, compares within-sequence mean pairwise
// metrics (with and without duplicate domains) against size-matched
// uniform random domain draws. table is the (V,N) embedding matrix.
SequenceDistanceReport sequence_vs_random_distance(
    const Tensor& table, const std::vector<TokenSequence>& corpus,
    int n_sequences, Rng& rng);

struct CvReport {
  std::map<int, double> per_domain;  // domain id -> coefficient of variation
  double frac_over_001 = 0.0;
  double frac_over_003 = 0.0;
  double frac_over_005 = 0.0;
};

// scorer returns one score per position of a sequence. Domains occurring
// in >= min_occurrences sequences get CV = population std / mean of
// their per-occurrence scores; zero-mean domains are excluded.
CvReport context_sensitivity(
    const std::function<std::vector<double>(const TokenSequence&)>& scorer,
    const std::vector<TokenSequence>& corpus, int min_occurrences = 5);

// Per-domain score = mean of per-occurrence token scores, restricted to
// ids in eval_domains (empty = all real domains). Returns id -> score.
std::map<int, double> aggregate_domain_scores(
    const std::function<std::vector<double>(const TokenSequence&)>& scorer,
    const std::vector<TokenSequence>& corpus,
    const std::vector<int>& eval_domains);

}  // namespace dnsgt
