#include "famt/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "famt/error.hpp"
#include "famt/hash.hpp"
#include "famt/metrics.hpp"
#include "json.hpp"

namespace famt::pipeline {

using model::Transformer;

void BtPlan::validate() const {
  vocab::validate_language_id(new_language);
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (steps_per_iteration < 1) throw ConfigError("steps_per_iteration must be >= 1");
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (partners.empty()) throw ConfigError("back-translation needs at least one partner language");
  auto need = [&](const std::string& lang) {
    auto it = monolingual.find(lang);
    if (it == monolingual.end() || it->second.empty())
      throw ConfigError("no monolingual corpus for '" + lang + "'");
  };
  need(new_language);
  for (const auto& p : partners) {
    if (p == new_language) throw ConfigError("partner list contains the new language");
    need(p);
  }
}

std::string frozen_group(int iteration) {
  if (iteration < 1) throw ConfigError("iterations are numbered from 1");
  return iteration % 2 == 1 ? model::kEncoder : model::kDecoder;
}

synth::ParallelCorpus generate_synthetic(const Transformer& model, const Corpus& monolingual,
                                         const std::string& language_a, const std::string& language_b,
                                         const translate::DecodeOptions& options, SyntheticReport* report) {
  const auto& v = model.vocab();
  if (!v.has_language(language_a)) throw ConfigError("model has no vocabulary for '" + language_a + "'");
  if (!v.has_tag(language_b)) throw ConfigError("model cannot decode into '" + language_b + "'");
  SyntheticReport r;
  r.input = monolingual.size();
  translate::TranslationRequest req{language_a, language_b, monolingual, options};
  const auto out = translate::translate(model, req);
  synth::ParallelCorpus pairs;
  for (size_t i = 0; i < out.size(); ++i) {
    const auto& t = out[i];
    if (t.skipped || t.hypothesis.tokens.empty()) {
      ++r.empty;
      continue;
    }
    const bool all_unk = std::all_of(t.hypothesis.tokens.begin(), t.hypothesis.tokens.end(),
                                     [](size_t x) { return x == vocab::kUnk; });
    if (all_unk) {
      ++r.all_unknown;
      continue;
    }
    pairs.emplace_back(t.words, monolingual[i]);
  }
  r.kept = pairs.size();
  if (report) *report = r;
  return pairs;
}

MetricRow evaluate_direction(const Transformer& model, const DevSet& dev, int iteration,
                             const translate::DecodeOptions& options) {
  Corpus sources;
  std::vector<std::string> refs;
  for (const auto& [s, t] : dev.pairs) {
    sources.push_back(s);
    refs.push_back(join(t));
  }
  const auto out = translate::translate(model, {dev.source_language, dev.target_language, sources, options});
  std::vector<std::string> hyps;
  for (const auto& t : out) hyps.push_back(join(t.words));
  MetricRow row;
  row.iteration = iteration;
  row.direction = dev.source_language + "-" + dev.target_language;
  row.test_set = dev.name;
  row.chrfpp = metrics::chrf_pp(hyps, refs).score;
  row.bleu = metrics::bleu(hyps, refs).score;
  return row;
}

namespace {

std::vector<Matrix> snapshot(const Transformer& m) {
  std::vector<Matrix> values;
  for (const auto& p : m.params()) values.push_back(p.value);
  return values;
}

void restore(Transformer& m, const std::vector<Matrix>& values) {
  auto& params = m.params();
  for (size_t i = 0; i < params.size(); ++i) params[i].value = values[i];
}

std::vector<train::ParallelSet> encode_dev(const vocab::MultiVocab& v, const std::vector<DevSet>& dev) {
  std::vector<train::ParallelSet> sets;
  for (const auto& d : dev) {
    auto s = train::encode_pairs(v, d.source_language, d.target_language, d.pairs);
    if (!s.pairs.empty()) sets.push_back(std::move(s));
  }
  return sets;
}

Corpus head(const Corpus& c, size_t n) {
  if (n == 0 || n >= c.size()) return c;
  return Corpus(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
}

}  // namespace

IterationResult run_iteration(Transformer& model, const BtPlan& plan, int iteration, const Transformer* base) {
  plan.validate();
  IterationResult result;
  result.iteration = iteration;
  result.frozen = frozen_group(iteration);
  if (plan.restart_from_base && base) model = *base;

  translate::DecodeOptions gen;
  gen.beam_size = plan.beam_size;

  // Synthetic data always comes from the model as it stood before this round.
  const Transformer generator = model;
  std::vector<train::ParallelSet> sets;
  for (const auto& p : plan.partners) {
    for (const auto& [src, tgt] : {std::pair{plan.new_language, p}, std::pair{p, plan.new_language}}) {
      // To train src -> tgt, translate real tgt text into src.
      SyntheticReport rep;
      const auto pairs = generate_synthetic(generator, head(plan.monolingual.at(tgt), plan.synthetic_per_direction),
                                            tgt, src, gen, &rep);
      result.synthetic[src + "-" + tgt] = rep;
      auto set = train::encode_pairs(model.vocab(), src, tgt, pairs);
      if (!set.pairs.empty()) sets.push_back(std::move(set));
    }
  }
  if (sets.empty()) throw DataError("back-translation produced no usable synthetic pairs");

  const bool enc = model.group_trainable(model::kEncoder), dec = model.group_trainable(model::kDecoder);
  model.set_group_trainable(model::kEncoder, true);
  model.set_group_trainable(model::kDecoder, true);
  model.set_group_trainable(result.frozen, false);
  result.frozen_checksum_before = model.group_checksum(result.frozen);

  train::TrainConfig cfg = plan.adaptation;
  cfg.max_updates = plan.steps_per_iteration;
  cfg.seed = derive_seed(plan.adaptation.seed, static_cast<uint64_t>(iteration));
  const auto before = snapshot(model);
  try {
    result.training = train::train(model, sets, encode_dev(model.vocab(), plan.dev), cfg);
  } catch (const TrainingError& e) {
    restore(model, before);
    result.aborted = true;
    result.error = e.what();
  }
  result.frozen_checksum_after = model.group_checksum(result.frozen);
  model.set_group_trainable(model::kEncoder, enc);
  model.set_group_trainable(model::kDecoder, dec);
  if (result.frozen_checksum_after != result.frozen_checksum_before)
    throw TrainingError("frozen group '" + result.frozen + "' changed during iteration " + std::to_string(iteration));

  for (const auto* sets : {&plan.dev, &plan.test})
    for (const auto& d : *sets) result.metrics.push_back(evaluate_direction(model, d, iteration));
  return result;
}

PlanResult run_plan(Transformer& model, const BtPlan& plan) {
  plan.validate();
  PlanResult out;
  for (const auto* sets : {&plan.dev, &plan.test})
    for (const auto& d : *sets) out.baseline.push_back(evaluate_direction(model, d, 0));
  const Transformer base = model;
  for (int i = 1; i <= plan.iterations; ++i) {
    auto r = run_iteration(model, plan, i, &base);
    out.table.insert(out.table.end(), r.metrics.begin(), r.metrics.end());
    out.iterations.push_back(std::move(r));
  }
  return out;
}

std::string format_metric_table(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration\tdirection\ttest_set\tchrfpp\tbleu\n";
  for (const auto& r : rows)
    os << r.iteration << '\t' << r.direction << '\t' << r.test_set << '\t' << r.chrfpp << '\t' << r.bleu << '\n';
  return os.str();
}

// ---- two-stage isolation ----

std::string StageManifest::to_json() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["languages"] = languages;
  j["files"] = nlohmann::json::array();
  for (const auto& f : files) j["files"].push_back({{"path", f.path}, {"sha256", f.sha256}, {"languages", f.languages}});
  return j.dump(2) + "\n";
}

StageManifest StageManifest::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    StageManifest m;
    m.stage = j.at("stage").get<std::string>();
    m.languages = j.at("languages").get<std::set<std::string>>();
    for (const auto& f : j.at("files"))
      m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                         f.value("languages", std::set<std::string>{})});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad stage manifest: ") + e.what());
  }
}

void StageManifest::save(const std::filesystem::path& path) const { write_file(path, to_json()); }

StageManifest StageManifest::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

std::set<std::string> languages_in_name(const std::string& file_name, const std::set<std::string>& known) {
  std::set<std::string> found;
  std::string piece;
  auto flush = [&] {
    if (known.count(piece)) found.insert(piece);
    piece.clear();
  };
  for (char c : std::filesystem::path(file_name).filename().string()) {
    if (c == '.' || c == '-' || c == '_') {
      flush();
    } else {
      piece += c;
    }
  }
  flush();
  return found;
}

std::set<std::string> content_languages(const std::string& file_name, const std::set<std::string>& known) {
  const std::string name = std::filesystem::path(file_name).filename().string();
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  const bool src = ends_with(".src.txt"), tgt = ends_with(".tgt.txt");
  const auto dash = name.find('-'), dot = name.find('.');
  if ((src || tgt) && dash != std::string::npos && dot != std::string::npos && dash < dot) {
    const std::string side = src ? name.substr(0, dash) : name.substr(dash + 1, dot - dash - 1);
    if (known.count(side)) return {side};
    return {};
  }
  return languages_in_name(file_name, known);
}

StageManifest make_manifest(const std::string& stage, const std::set<std::string>& languages,
                            const std::vector<std::filesystem::path>& files) {
  StageManifest m;
  m.stage = stage;
  m.languages = languages;
  for (const auto& f : files) {
    if (!std::filesystem::is_regular_file(f)) throw InputError("manifest input '" + f.string() + "' is not a file");
    m.files.push_back({f.string(), sha256_file(f), languages_in_name(f.string(), languages)});
  }
  return m;
}

IsolationReport verify_stage_isolation(const StageManifest& base, const StageManifest& extension) {
  std::set<std::string> new_only;
  for (const auto& l : extension.languages)
    if (!base.languages.count(l)) new_only.insert(l);

  // Content hashes of extension inputs written in an extension-only language.
  std::map<std::string, std::string> leaked_hashes;
  // Only the new language's own text counts: the pivot side of a new-pivot
  // dev file is legitimately identical to the pivot side of a base dev file.
  for (const auto& f : extension.files)
    if (!content_languages(f.path, new_only).empty()) leaked_hashes.emplace(f.sha256, f.path);

  IsolationReport report;
  for (const auto& f : base.files) {
    std::set<std::string> named = languages_in_name(f.path, new_only);
    for (const auto& l : f.languages)
      if (new_only.count(l)) named.insert(l);
    if (!named.empty()) {
      std::string ids;
      for (const auto& l : named) ids += (ids.empty() ? "" : ",") + l;
      report.violations.push_back({f.path, "base stage consumes a file for extension language " + ids});
    } else if (auto it = leaked_hashes.find(f.sha256); it != leaked_hashes.end()) {
      report.violations.push_back({f.path, "content identical to extension input " + it->second});
    }
  }
  return report;
}

}  // namespace famt::pipeline
