#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace famt::metrics {

enum class Metric { chrfpp, bleu };

std::string metric_name(Metric m);
Metric parse_metric(std::string_view name);

struct MetricConfig {
  Metric metric = Metric::chrfpp;
  // chrF
  int char_order = 6;
  int word_order = 2;
  double beta = 2.0;
  // BLEU
  int max_ngram_order = 4;
  bool effective_order = false;

  static MetricConfig chrfpp();
  static MetricConfig bleu();

  void validate() const;
  // e.g. "nrefs:1|case:mixed|eff:yes|nc:6|nw:2|space:no"
  std::string signature() const;
};

struct MetricReport {
  double score = 0.0;
  std::vector<double> sentence_scores;
  std::string signature;
};

// 13a-style tokenization (the mteval-v13a rules).
std::string tokenize_13a(std::string_view line);

MetricReport chrf_pp(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                     const MetricConfig& config = MetricConfig::chrfpp());
MetricReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                  const MetricConfig& config = MetricConfig::bleu());

// Dispatches on config.metric.
MetricReport score(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   const MetricConfig& config);

}  // namespace famt::metrics
