// famt: command-line driver for the two-stage experiment.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "famt/config.hpp"
#include "famt/error.hpp"
#include "famt/metrics.hpp"
#include "famt/model.hpp"
#include "famt/text.hpp"
#include "famt/translate.hpp"
#include "famt/workspace.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace famt;

namespace {

struct Globals {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out = "famt-run";
  bool strict = false;
};

config::ExperimentConfig load_config(const Globals& g) {
  auto cfg = g.config_path.empty() ? config::default_config() : config::load(g.config_path);
  if (g.seed) cfg.reseed(*g.seed);
  return cfg;
}

const char* error_kind(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const InputError*>(&e)) return "input";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  if (dynamic_cast<const LookupError*>(&e)) return "lookup";
  if (dynamic_cast<const ConflictError*>(&e)) return "conflict";
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const EvaluationError*>(&e)) return "evaluation";
  return "error";
}

void print_rows(const std::vector<pipeline::MetricRow>& rows) {
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  iter %d  %-7s %-5s chrF++ %5.1f  BLEU %5.1f", r.iteration, r.direction.c_str(),
                  r.test_set.c_str(), r.chrfpp, r.bleu);
    std::cout << buf << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot plug-in of unseen languages into a multilingual translation model"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Re-derive every seed in the config from this one");
  app.add_option("--out", g.out, "Experiment directory")->capture_default_str();
  app.add_flag("--strict", g.strict, "Treat stage-isolation violations as errors");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic language family");

  std::vector<std::string> embed_langs;
  auto* embed = app.add_subcommand("embed", "Train skip-gram vectors (base languages unless --lang)");
  embed->add_option("--lang", embed_langs, "Languages to embed");

  std::vector<std::string> align_langs;
  auto* align = app.add_subcommand("align", "Map embeddings onto the pivot (base languages unless --lang)");
  align->add_option("--lang", align_langs, "Languages to align");

  auto* vocab = app.add_subcommand("vocab", "Build the merged base-stage vocabulary");
  auto* train = app.add_subcommand("train", "Train the base model on the seen languages");

  std::string ext_lang;
  bool target_tag = false, no_renorm = false;
  std::string tag_from;
  auto* extend = app.add_subcommand("extend", "Plug an unseen language into the base model");
  extend->add_option("--lang", ext_lang, "Language to add")->required();
  extend->add_flag("--target-tag", target_tag, "Also make the language a decoding target");
  extend->add_option("--tag-from", tag_from, "Tag row to copy for the new tag (default: the pivot)");
  extend->add_flag("--no-renormalize", no_renorm, "Keep mapped rows at their mapped norm");

  std::string tr_ckpt, tr_from, tr_to, tr_in = "-", tr_out = "-";
  std::optional<int> tr_beam;
  auto* translate = app.add_subcommand("translate", "Translate one sentence per line");
  translate->add_option("--checkpoint", tr_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  translate->add_option("--from", tr_from, "Source language")->required();
  translate->add_option("--to", tr_to, "Target language")->required();
  translate->add_option("--input", tr_in, "Input file ('-' for stdin)");
  translate->add_option("--output", tr_out, "Output file ('-' for stdout)");
  translate->add_option("--beam", tr_beam, "Beam size (default from the config)");

  std::string bt_ckpt;
  auto* backtranslate = app.add_subcommand("backtranslate", "Iterative back-translation for the new language");
  backtranslate->add_option("--checkpoint", bt_ckpt, "Starting checkpoint (default model/<new>.ckpt)");

  std::string metric = "chrfpp", hyp_path, ref_path;
  bool as_json = false;
  auto* evaluate = app.add_subcommand("evaluate", "Score hypotheses against references");
  evaluate->add_option("--metric", metric, "chrfpp or bleu")->capture_default_str();
  evaluate->add_option("--hyp", hyp_path, "Hypothesis file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ref", ref_path, "Reference file")->required()->check(CLI::ExistingFile);
  evaluate->add_flag("--json", as_json, "Machine-readable output");

  std::string base_manifest, ext_manifest;
  auto* verify = app.add_subcommand("verify-stages", "Check that base-stage inputs never touch unseen languages");
  verify->add_option("--base", base_manifest, "Base manifest (default <out>/manifests/base.json)");
  verify->add_option("--extension", ext_manifest, "Extension manifest (default <out>/manifests/extension.json)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (evaluate->parsed()) {
      auto cfg = metrics::parse_metric(metric) == metrics::Metric::bleu ? metrics::MetricConfig::bleu()
                                                                       : metrics::MetricConfig::chrfpp();
      const auto hyps = read_lines(hyp_path), refs = read_lines(ref_path);
      const auto r = metrics::score(hyps, refs, cfg);
      if (as_json) {
        nlohmann::json j = {{"metric", metrics::metric_name(cfg.metric)},
                            {"score", r.score},
                            {"signature", r.signature},
                            {"sentences", hyps.size()},
                            {"sentence_scores", r.sentence_scores}};
        std::cout << j.dump(2) << "\n";
      } else {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f", r.score);
        std::cout << metrics::metric_name(cfg.metric) << " = " << buf << "  " << r.signature << "\n";
      }
      return 0;
    }

    if (verify->parsed()) {
      const fs::path b = base_manifest.empty() ? fs::path(g.out) / "manifests" / "base.json" : fs::path(base_manifest);
      const fs::path e =
          ext_manifest.empty() ? fs::path(g.out) / "manifests" / "extension.json" : fs::path(ext_manifest);
      for (const auto& p : {b, e})
        if (!fs::exists(p)) throw InputError("no manifest at " + p.string());
      const auto report = pipeline::verify_stage_isolation(pipeline::StageManifest::load(b), pipeline::StageManifest::load(e));
      for (const auto& v : report.violations) std::cout << "violation\t" << v.file << "\t" << v.reason << "\n";
      std::cout << report.violations.size() << " violation(s)\n";
      return report.clean() || !g.strict ? 0 : 1;
    }

    const auto cfg = load_config(g);

    if (translate->parsed()) {
      const auto model = model::Transformer::load(tr_ckpt);
      translate::DecodeOptions opts = cfg.translate;
      if (tr_beam) opts.beam_size = *tr_beam;
      std::vector<std::string> lines;
      if (tr_in == "-") {
        for (std::string line; std::getline(std::cin, line);) lines.push_back(line);
      } else {
        lines = read_lines(tr_in);
      }
      Corpus sources;
      for (const auto& l : lines) sources.push_back(tokenize(l));
      const auto out = translate::translate(model, {tr_from, tr_to, sources, opts});
      std::vector<std::string> hyps;
      size_t unknown = 0;
      for (const auto& t : out) {
        hyps.push_back(detokenize(t.words));
        unknown += t.unknown;
      }
      if (tr_out == "-") {
        for (const auto& h : hyps) std::cout << h << "\n";
      } else {
        write_lines(tr_out, hyps);
      }
      if (unknown) std::cerr << "famt: " << unknown << " source token(s) were unknown\n";
      return 0;
    }

    workspace::Lock lock(g.out);
    workspace::Workspace ws(g.out, cfg);
    ws.set_log(&std::cerr);
    auto note_skip = [](const char* what, bool skipped) {
      if (skipped) std::cerr << what << ": up to date\n";
    };

    if (synth->parsed()) {
      note_skip("synth", ws.synth().skipped);
    } else if (embed->parsed()) {
      if (embed_langs.empty()) embed_langs = cfg.base_languages();
      for (const auto& l : embed_langs) note_skip(("embed " + l).c_str(), ws.embed(l).skipped);
    } else if (align->parsed()) {
      if (align_langs.empty()) align_langs = cfg.base_languages();
      const auto s = ws.align(align_langs);
      note_skip("align", s.step.skipped);
    } else if (vocab->parsed()) {
      note_skip("vocab", ws.build_vocab().skipped);
    } else if (train->parsed()) {
      note_skip("train", ws.train_base().skipped);
    } else if (extend->parsed()) {
      translate::PlugInOptions opts;
      opts.add_target_tag = target_tag;
      opts.renormalize = !no_renorm;
      opts.init_tag_from = tag_from;
      note_skip(("extend " + ext_lang).c_str(), ws.extend(ext_lang, opts).skipped);
    } else if (backtranslate->parsed()) {
      std::optional<fs::path> ckpt;
      if (!bt_ckpt.empty()) ckpt = bt_ckpt;
      const auto s = ws.backtranslate(ckpt);
      std::cout << "zero-shot\n";
      print_rows(s.baseline);
      std::cout << "back-translation\n";
      print_rows(s.table);
    }

    if (g.strict && fs::exists(ws.manifest_path("base")) &&
        fs::exists(ws.manifest_path("extension"))) {
      const auto report = ws.verify_stages();
      if (!report.clean()) {
        for (const auto& v : report.violations) std::cerr << "violation\t" << v.file << "\t" << v.reason << "\n";
        throw ConflictError(std::to_string(report.violations.size()) + " stage-isolation violation(s)");
      }
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "famt: " << error_kind(e) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "famt: " << e.what() << "\n";
    return 2;
  }
}
