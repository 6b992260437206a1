#include "famt/metrics.hpp"

#include <cmath>
#include <map>
#include <unordered_map>

#include "famt/error.hpp"
#include "famt/text.hpp"

namespace famt::metrics {

std::string metric_name(Metric m) { return m == Metric::chrfpp ? "chrfpp" : "bleu"; }

Metric parse_metric(std::string_view name) {
  if (name == "chrfpp" || name == "chrf++") return Metric::chrfpp;
  if (name == "bleu") return Metric::bleu;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected chrfpp or bleu)");
}

MetricConfig MetricConfig::chrfpp() { return MetricConfig{}; }

MetricConfig MetricConfig::bleu() {
  MetricConfig c;
  c.metric = Metric::bleu;
  return c;
}

void MetricConfig::validate() const {
  if (metric == Metric::chrfpp) {
    if (char_order < 1 || word_order < 0) throw ConfigError("chrF orders must be char_order >= 1, word_order >= 0");
    if (!(beta > 0.0)) throw ConfigError("chrF beta must be positive");
  } else if (max_ngram_order < 1) {
    throw ConfigError("BLEU max_ngram_order must be >= 1");
  }
}

std::string MetricConfig::signature() const {
  if (metric == Metric::chrfpp) {
    std::string s = "nrefs:1|case:mixed|eff:yes|nc:" + std::to_string(char_order) + "|nw:" + std::to_string(word_order) +
                    "|space:no";
    if (beta != 2.0) s += "|beta:" + std::to_string(beta);
    return s;
  }
  std::string s = std::string("nrefs:1|case:mixed|eff:") + (effective_order ? "yes" : "no") + "|tok:13a|smooth:exp";
  if (max_ngram_order != 4) s += "|order:" + std::to_string(max_ngram_order);
  return s;
}

namespace {

void check_lengths(const std::vector<std::string>& h, const std::vector<std::string>& r) {
  if (h.size() != r.size())
    throw InputError("hypothesis/reference count mismatch: " + std::to_string(h.size()) + " vs " +
                     std::to_string(r.size()));
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// The first 13a rule: isolate symbols other than ' - . , and alphanumerics.
bool isolated_symbol(char c) {
  auto u = static_cast<unsigned char>(c);
  return (u >= '{' && u <= '~') || (u >= '[' && u <= '`') || (u >= ' ' && u <= '&') || (u >= '(' && u <= '+') ||
         (u >= ':' && u <= '@') || u == '/';
}

// ---- chrF ----

const std::u32string kPuncts = U"!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

bool is_punct(char32_t c) { return kPuncts.find(c) != std::u32string::npos; }

std::vector<std::u32string> remove_punctuation(const std::string& sent) {
  std::vector<std::u32string> out;
  for (const auto& piece : split_whitespace(sent)) {
    auto w = decode_utf8(piece);
    if (w.size() == 1) {
      out.push_back(w);
    } else if (is_punct(w.back())) {
      out.push_back(w.substr(0, w.size() - 1));
      out.push_back(w.substr(w.size() - 1));
    } else if (is_punct(w.front())) {
      out.push_back(w.substr(0, 1));
      out.push_back(w.substr(1));
    } else {
      out.push_back(w);
    }
  }
  return out;
}

using Counts = std::unordered_map<std::u32string, long>;

std::vector<Counts> chrf_ngrams(const std::string& line, const MetricConfig& cfg) {
  std::vector<Counts> all;
  std::u32string chars;
  for (const auto& piece : split_whitespace(line)) chars += decode_utf8(piece);
  for (int n = 1; n <= cfg.char_order; ++n) {
    Counts c;
    for (size_t i = 0; i + n <= chars.size(); ++i) ++c[chars.substr(i, n)];
    all.push_back(std::move(c));
  }
  auto words = remove_punctuation(line);
  for (int n = 1; n <= cfg.word_order; ++n) {
    Counts c;
    for (size_t i = 0; i + n <= words.size(); ++i) {
      std::u32string g = words[i];
      for (int j = 1; j < n; ++j) g += U' ' + words[i + j];
      ++c[g];
    }
    all.push_back(std::move(c));
  }
  return all;
}

double chrf_from_stats(const std::vector<long>& stats, double beta) {
  double factor = beta * beta;
  double avg_prec = 0.0, avg_rec = 0.0;
  int effective = 0;
  for (size_t i = 0; i + 2 < stats.size(); i += 3) {
    long n_hyp = stats[i], n_ref = stats[i + 1], n_match = stats[i + 2];
    if (n_hyp > 0 && n_ref > 0) {
      avg_prec += static_cast<double>(n_match) / n_hyp;
      avg_rec += static_cast<double>(n_match) / n_ref;
      ++effective;
    }
  }
  if (effective == 0) return 0.0;
  avg_prec /= effective;
  avg_rec /= effective;
  if (avg_prec + avg_rec == 0.0) return 0.0;
  return 100.0 * (1 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec);
}

// ---- BLEU ----

struct BleuStats {
  long sys_len = 0;
  long ref_len = 0;
  std::vector<long> correct;
  std::vector<long> total;
};

std::map<std::vector<std::string>, long> word_ngrams(const std::vector<std::string>& tokens, int max_order) {
  std::map<std::vector<std::string>, long> c;
  for (int n = 1; n <= max_order; ++n)
    for (size_t i = 0; i + n <= tokens.size(); ++i) ++c[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return c;
}

std::string rstrip(const std::string& s) {
  // Python's str.rstrip() strips Unicode whitespace; reuse the splitter's notion.
  auto pieces = split_whitespace(s);
  if (pieces.empty()) return {};
  const auto& last = pieces.back();
  size_t pos = s.rfind(last);
  return s.substr(0, pos + last.size());
}

BleuStats bleu_segment(const std::string& hyp, const std::string& ref, int order) {
  auto h = split_whitespace(tokenize_13a(rstrip(hyp)));
  auto r = split_whitespace(tokenize_13a(rstrip(ref)));
  BleuStats s;
  s.sys_len = static_cast<long>(h.size());
  s.ref_len = static_cast<long>(r.size());
  s.correct.assign(order, 0);
  s.total.assign(order, 0);
  auto hc = word_ngrams(h, order);
  auto rc = word_ngrams(r, order);
  for (const auto& [g, count] : hc) {
    auto n = g.size() - 1;
    s.total[n] += count;
    if (auto it = rc.find(g); it != rc.end()) s.correct[n] += std::min(count, it->second);
  }
  return s;
}

double my_log(double x) { return x == 0.0 ? -9999999999.0 : std::log(x); }

double bleu_from_stats(const BleuStats& s, const MetricConfig& cfg) {
  double bp = 1.0;
  if (s.sys_len < s.ref_len) bp = s.sys_len > 0 ? std::exp(1.0 - static_cast<double>(s.ref_len) / s.sys_len) : 0.0;
  bool any = false;
  for (long c : s.correct) any = any || c != 0;
  if (!any) return 0.0;
  int order = cfg.max_ngram_order;
  std::vector<double> precisions(order, 0.0);
  double smooth = 1.0;
  int eff_order = order;
  for (int n = 1; n <= order; ++n) {
    if (s.total[n - 1] == 0) break;
    if (cfg.effective_order) eff_order = n;
    if (s.correct[n - 1] == 0) {
      smooth *= 2;
      precisions[n - 1] = 100.0 / (smooth * s.total[n - 1]);
    } else {
      precisions[n - 1] = 100.0 * s.correct[n - 1] / s.total[n - 1];
    }
  }
  double sum = 0.0;
  for (int n = 0; n < eff_order; ++n) sum += my_log(precisions[n]);
  return bp * std::exp(sum / eff_order);
}

}  // namespace

std::string tokenize_13a(std::string_view input) {
  std::string line(input);
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  line = " " + line + " ";

  std::string a;
  for (char c : line) {
    if (isolated_symbol(c)) {
      a += ' ';
      a += c;
      a += ' ';
    } else {
      a += c;
    }
  }
  // Each remaining rule is a left-to-right, non-overlapping two-character match.
  auto pass = [](const std::string& s, auto match, auto emit) {
    std::string out;
    size_t i = 0;
    while (i < s.size()) {
      if (i + 1 < s.size() && match(s[i], s[i + 1])) {
        emit(out, s[i], s[i + 1]);
        i += 2;
      } else {
        out += s[i++];
      }
    }
    return out;
  };
  auto dot = [](char c) { return c == '.' || c == ','; };
  a = pass(
      a, [&](char x, char y) { return !is_digit(x) && dot(y); },
      [](std::string& o, char x, char y) { o += x, o += ' ', o += y, o += ' '; });
  a = pass(
      a, [&](char x, char y) { return dot(x) && !is_digit(y); },
      [](std::string& o, char x, char y) { o += ' ', o += x, o += ' ', o += y; });
  a = pass(
      a, [](char x, char y) { return is_digit(x) && y == '-'; },
      [](std::string& o, char x, char y) { o += x, o += ' ', o += y, o += ' '; });
  return join(split_whitespace(a), " ");
}

MetricReport chrf_pp(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                     const MetricConfig& config) {
  check_lengths(hypotheses, references);
  config.validate();
  MetricReport report;
  report.signature = config.signature();
  size_t orders = static_cast<size_t>(config.char_order + config.word_order);
  std::vector<long> corpus(3 * orders, 0);
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp = chrf_ngrams(hypotheses[s], config);
    auto ref = chrf_ngrams(references[s], config);
    std::vector<long> stats(3 * orders, 0);
    for (size_t o = 0; o < orders; ++o) {
      long hyp_count = 0, ref_count = 0, match = 0;
      for (const auto& [g, c] : hyp[o]) {
        hyp_count += c;
        if (auto it = ref[o].find(g); it != ref[o].end()) match += std::min(c, it->second);
      }
      for (const auto& [g, c] : ref[o]) ref_count += c;
      stats[3 * o] = ref[o].empty() ? 0 : hyp_count;
      stats[3 * o + 1] = ref_count;
      stats[3 * o + 2] = match;
    }
    report.sentence_scores.push_back(chrf_from_stats(stats, config.beta));
    for (size_t i = 0; i < stats.size(); ++i) corpus[i] += stats[i];
  }
  report.score = chrf_from_stats(corpus, config.beta);
  return report;
}

MetricReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                  const MetricConfig& config) {
  check_lengths(hypotheses, references);
  config.validate();
  MetricReport report;
  report.signature = config.signature();
  int order = config.max_ngram_order;
  BleuStats corpus;
  corpus.correct.assign(order, 0);
  corpus.total.assign(order, 0);
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    auto st = bleu_segment(hypotheses[s], references[s], order);
    report.sentence_scores.push_back(bleu_from_stats(st, config));
    corpus.sys_len += st.sys_len;
    corpus.ref_len += st.ref_len;
    for (int n = 0; n < order; ++n) {
      corpus.correct[n] += st.correct[n];
      corpus.total[n] += st.total[n];
    }
  }
  report.score = bleu_from_stats(corpus, config);
  return report;
}

MetricReport score(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                   const MetricConfig& config) {
  return config.metric == Metric::chrfpp ? chrf_pp(hypotheses, references, config)
                                         : bleu(hypotheses, references, config);
}

}  // namespace famt::metrics
