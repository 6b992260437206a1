#include "famt/config.hpp"

#include <set>

#include "famt/error.hpp"
#include "famt/random.hpp"
#include "famt/text.hpp"
#include "famt/vocab.hpp"
#include "json.hpp"

namespace famt::config {

using nlohmann::json;

std::string relatedness_name(synth::Relatedness r) {
  switch (r) {
    case synth::Relatedness::identity:
      return "identity";
    case synth::Relatedness::close:
      return "close";
    case synth::Relatedness::distant:
      return "distant";
  }
  return "close";
}

synth::Relatedness parse_relatedness(const std::string& name) {
  if (name == "identity") return synth::Relatedness::identity;
  if (name == "close") return synth::Relatedness::close;
  if (name == "distant") return synth::Relatedness::distant;
  throw ConfigError("unknown relatedness '" + name + "' (identity, close, distant)");
}

namespace {

// Reads known keys from one object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config: '" + where_ + "' must be an object");
  }

  template <class T>
  void opt(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: wrong type for '" + where_ + "." + key + "'");
    }
  }

  template <class E, class Parse>
  void opt_enum(const char* key, E& out, Parse parse) {
    std::string name;
    if (!j_.contains(key)) return;
    opt(key, name);
    out = parse(name);
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError("config: unknown key '" + where_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

void read_train(const json& j, const std::string& where, train::TrainConfig& c) {
  Reader r(j, where);
  r.opt_enum("optimizer", c.optimizer, train::parse_optimizer);
  r.opt_enum("schedule", c.schedule, train::parse_schedule);
  r.opt("learning_rate", c.learning_rate);
  r.opt("warmup", c.warmup);
  r.opt("warmup_init_lr", c.warmup_init_lr);
  r.opt("warmup_end_lr", c.warmup_end_lr);
  r.opt("min_lr", c.min_lr);
  r.opt("beta1", c.beta1);
  r.opt("beta2", c.beta2);
  r.opt("adam_eps", c.adam_eps);
  r.opt("weight_decay", c.weight_decay);
  r.opt("batch_tokens", c.batch_tokens);
  r.opt("accumulation", c.accumulation);
  r.opt("label_smoothing", c.label_smoothing);
  r.opt("lambda_vmf", c.lambda_vmf);
  r.opt("max_updates", c.max_updates);
  r.opt("eval_every", c.eval_every);
  r.opt("patience", c.patience);
  r.opt("max_grad_norm", c.max_grad_norm);
  r.opt("seed", c.seed);
  r.finish();
}

json write_train(const train::TrainConfig& c) {
  return {{"optimizer", train::optimizer_name(c.optimizer)},
          {"schedule", train::schedule_name(c.schedule)},
          {"learning_rate", c.learning_rate},
          {"warmup", c.warmup},
          {"warmup_init_lr", c.warmup_init_lr},
          {"warmup_end_lr", c.warmup_end_lr},
          {"min_lr", c.min_lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"batch_tokens", c.batch_tokens},
          {"accumulation", c.accumulation},
          {"label_smoothing", c.label_smoothing},
          {"lambda_vmf", c.lambda_vmf},
          {"max_updates", c.max_updates},
          {"eval_every", c.eval_every},
          {"patience", c.patience},
          {"max_grad_norm", c.max_grad_norm},
          {"seed", c.seed}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion)
    throw ConfigError("config schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  synth.grammar.validate();
  std::set<std::string> ids;
  bool pivot_found = false;
  for (const auto& l : synth.languages) {
    vocab::validate_language_id(l.id);
    if (!ids.insert(l.id).second) throw ConfigError("duplicate language '" + l.id + "' in synth.languages");
    if (l.id == align.pivot) {
      pivot_found = true;
      if (l.unseen) throw ConfigError("the pivot cannot be an unseen language");
    }
  }
  if (!synth.languages.empty() && !pivot_found)
    throw ConfigError("align.pivot '" + align.pivot + "' is not one of synth.languages");
  embed.validate();
  if (align.test_fraction < 0.0 || align.test_fraction >= 1.0) throw ConfigError("align.test_fraction must be in [0,1)");
  model.validate();
  train.validate();
  backtranslate.adaptation.validate();
  if (translate.beam_size < 1 || backtranslate.beam_size < 1) throw ConfigError("beam sizes must be >= 1");
  if (translate.max_length_factor <= 0.0) throw ConfigError("translate.max_length_factor must be positive");
  if (backtranslate.iterations < 1 || backtranslate.steps_per_iteration < 1)
    throw ConfigError("backtranslate.iterations and steps_per_iteration must be >= 1");
}

void ExperimentConfig::reseed(uint64_t s) {
  seed = s;
  synth.grammar.seed = derive_seed(s, 11);
  embed.seed = derive_seed(s, 12);
  train.seed = derive_seed(s, 13);
  backtranslate.adaptation.seed = derive_seed(s, 14);
}

std::vector<std::string> ExperimentConfig::languages() const {
  std::vector<std::string> out;
  for (const auto& l : synth.languages) out.push_back(l.id);
  return out;
}

std::vector<std::string> ExperimentConfig::base_languages() const {
  std::vector<std::string> out;
  for (const auto& l : synth.languages)
    if (!l.unseen) out.push_back(l.id);
  return out;
}

bool ExperimentConfig::is_unseen(const std::string& language) const {
  for (const auto& l : synth.languages)
    if (l.id == language) return l.unseen;
  throw ConfigError("language '" + language + "' is not configured");
}

std::vector<synth::LanguageDerivation> derivations(const ExperimentConfig& c) {
  const auto lexicon = synth::base_lexicon(c.synth.grammar);
  std::vector<synth::LanguageDerivation> out;
  for (size_t i = 0; i < c.synth.languages.size(); ++i) {
    const auto& l = c.synth.languages[i];
    auto d = synth::make_derivation(l.id, lexicon, l.relatedness, derive_seed(c.synth.grammar.seed, 100 + i), l.noise);
    d.unseen = l.unseen;
    out.push_back(std::move(d));
  }
  return out;
}

synth::SynthFamily build_family(const ExperimentConfig& c) {
  c.validate();
  if (c.synth.languages.empty()) throw ConfigError("synth.languages is empty");
  return synth::make_family(c.synth.grammar, derivations(c), c.synth.splits);
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  auto& g = c.synth.grammar;
  g.vocab_size = 120;
  g.sentence_count = 6000;
  g.min_length = 4;
  g.max_length = 10;
  c.synth.languages = {{"pv", synth::Relatedness::identity, 0.0, false},
                       {"xa", synth::Relatedness::close, 0.0, false},
                       {"xb", synth::Relatedness::distant, 0.0, false},
                       {"xn", synth::Relatedness::close, 0.0, true}};
  c.embed.dim = 32;
  c.embed.epochs = 5;
  c.embed.min_count = 3;
  c.embed.window = 3;
  c.align.pivot = "pv";
  c.model.layers = 2;
  c.model.d_model = 32;
  c.model.ff_dim = 64;
  c.model.heads = 4;
  c.model.dropout = 0.1;
  c.model.relative_clip = 8;
  c.train.warmup = 400;
  c.train.batch_tokens = 512;
  c.train.max_updates = 2000;
  c.train.eval_every = 500;
  c.backtranslate.new_language = "xn";
  c.backtranslate.partners = {"pv"};
  c.backtranslate.steps_per_iteration = 1000;
  c.backtranslate.synthetic_per_direction = 1500;
  c.backtranslate.adaptation = c.train;
  c.backtranslate.adaptation.learning_rate = 0.5;
  c.backtranslate.adaptation.warmup = 200;
  c.backtranslate.adaptation.eval_every = 250;
  c.reseed(1);
  return c;
}

ExperimentConfig parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = default_config();
  Reader top(j, "config");
  top.opt("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("config schema_version " + std::to_string(c.schema_version) + " is not supported");
  uint64_t seed = c.seed;
  top.opt("seed", seed);
  c.reseed(seed);

  if (const json* s = top.sub("synth")) {
    Reader r(*s, "synth");
    if (const json* g = r.sub("grammar")) {
      Reader gr(*g, "synth.grammar");
      auto& gs = c.synth.grammar;
      gr.opt("seed", gs.seed);
      gr.opt("vocab_size", gs.vocab_size);
      gr.opt("min_length", gs.min_length);
      gr.opt("max_length", gs.max_length);
      gr.opt("topic_count", gs.topic_count);
      gr.opt("sentence_count", gs.sentence_count);
      gr.opt("function_words", gs.function_words);
      gr.opt("min_frequency", gs.min_frequency);
      gr.finish();
    }
    if (const json* langs = r.sub("languages")) {
      if (!langs->is_array()) throw ConfigError("config: 'synth.languages' must be an array");
      c.synth.languages.clear();
      for (const auto& l : *langs) {
        Reader lr(l, "synth.languages[]");
        LanguageSpec spec;
        lr.opt("id", spec.id);
        lr.opt_enum("relatedness", spec.relatedness, parse_relatedness);
        lr.opt("noise", spec.noise);
        lr.opt("unseen", spec.unseen);
        lr.finish();
        c.synth.languages.push_back(spec);
      }
    }
    r.opt("dev_fraction", c.synth.splits.dev_fraction);
    r.opt("test_fraction", c.synth.splits.test_fraction);
    r.finish();
  }
  if (const json* e = top.sub("embed")) {
    Reader r(*e, "embed");
    r.opt("dim", c.embed.dim);
    r.opt("window", c.embed.window);
    r.opt("negatives", c.embed.negatives);
    r.opt("epochs", c.embed.epochs);
    r.opt("learning_rate", c.embed.learning_rate);
    r.opt("min_count", c.embed.min_count);
    r.opt("seed", c.embed.seed);
    r.opt("min_n", c.embed.min_n);
    r.opt("max_n", c.embed.max_n);
    r.opt("bucket_count", c.embed.bucket_count);
    r.finish();
  }
  if (const json* a = top.sub("align")) {
    Reader r(*a, "align");
    r.opt("pivot", c.align.pivot);
    r.opt("k", c.align.hub.csls.k);
    r.opt("refine", c.align.hub.refine);
    r.opt("rcsls_epochs", c.align.hub.rcsls.epochs);
    r.opt("rcsls_learning_rate", c.align.hub.rcsls.learning_rate);
    r.opt("test_fraction", c.align.test_fraction);
    r.finish();
  }
  if (const json* m = top.sub("model")) {
    Reader r(*m, "model");
    r.opt("layers", c.model.layers);
    r.opt("d_model", c.model.d_model);
    r.opt("ff_dim", c.model.ff_dim);
    r.opt("heads", c.model.heads);
    r.opt("dropout", c.model.dropout);
    r.opt("relative_clip", c.model.relative_clip);
    r.opt_enum("head", c.model.head, model::parse_head);
    r.opt("scale_embeddings", c.model.scale_embeddings);
    r.finish();
  }
  if (const json* t = top.sub("train")) read_train(*t, "train", c.train);
  if (const json* t = top.sub("translate")) {
    Reader r(*t, "translate");
    r.opt("beam_size", c.translate.beam_size);
    r.opt("max_length_factor", c.translate.max_length_factor);
    r.opt("lambda_vmf", c.translate.lambda_vmf);
    r.opt("suppress_repeats", c.translate.repeats.enabled);
    r.opt("n_max", c.translate.repeats.n_max);
    r.opt("repeat_threshold", c.translate.repeats.threshold);
    r.finish();
  }
  if (const json* b = top.sub("backtranslate")) {
    Reader r(*b, "backtranslate");
    auto& bt = c.backtranslate;
    r.opt("new_language", bt.new_language);
    r.opt("partners", bt.partners);
    r.opt("iterations", bt.iterations);
    r.opt("steps_per_iteration", bt.steps_per_iteration);
    r.opt("beam_size", bt.beam_size);
    r.opt("synthetic_per_direction", bt.synthetic_per_direction);
    r.opt("restart_from_base", bt.restart_from_base);
    if (const json* a = r.sub("adaptation")) read_train(*a, "backtranslate.adaptation", bt.adaptation);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string to_json(const ExperimentConfig& c) {
  json langs = json::array();
  for (const auto& l : c.synth.languages)
    langs.push_back({{"id", l.id}, {"relatedness", relatedness_name(l.relatedness)}, {"noise", l.noise}, {"unseen", l.unseen}});
  const auto& g = c.synth.grammar;
  json j = {
      {"schema_version", c.schema_version},
      {"seed", c.seed},
      {"synth",
       {{"grammar",
         {{"seed", g.seed},
          {"vocab_size", g.vocab_size},
          {"min_length", g.min_length},
          {"max_length", g.max_length},
          {"topic_count", g.topic_count},
          {"sentence_count", g.sentence_count},
          {"function_words", g.function_words},
          {"min_frequency", g.min_frequency}}},
        {"languages", langs},
        {"dev_fraction", c.synth.splits.dev_fraction},
        {"test_fraction", c.synth.splits.test_fraction}}},
      {"embed",
       {{"dim", c.embed.dim},
        {"window", c.embed.window},
        {"negatives", c.embed.negatives},
        {"epochs", c.embed.epochs},
        {"learning_rate", c.embed.learning_rate},
        {"min_count", c.embed.min_count},
        {"seed", c.embed.seed},
        {"min_n", c.embed.min_n},
        {"max_n", c.embed.max_n},
        {"bucket_count", c.embed.bucket_count}}},
      {"align",
       {{"pivot", c.align.pivot},
        {"k", c.align.hub.csls.k},
        {"refine", c.align.hub.refine},
        {"rcsls_epochs", c.align.hub.rcsls.epochs},
        {"rcsls_learning_rate", c.align.hub.rcsls.learning_rate},
        {"test_fraction", c.align.test_fraction}}},
      {"model",
       {{"layers", c.model.layers},
        {"d_model", c.model.d_model},
        {"ff_dim", c.model.ff_dim},
        {"heads", c.model.heads},
        {"dropout", c.model.dropout},
        {"relative_clip", c.model.relative_clip},
        {"head", model::head_name(c.model.head)},
        {"scale_embeddings", c.model.scale_embeddings}}},
      {"train", write_train(c.train)},
      {"translate",
       {{"beam_size", c.translate.beam_size},
        {"max_length_factor", c.translate.max_length_factor},
        {"lambda_vmf", c.translate.lambda_vmf},
        {"suppress_repeats", c.translate.repeats.enabled},
        {"n_max", c.translate.repeats.n_max},
        {"repeat_threshold", c.translate.repeats.threshold}}},
      {"backtranslate",
       {{"new_language", c.backtranslate.new_language},
        {"partners", c.backtranslate.partners},
        {"iterations", c.backtranslate.iterations},
        {"steps_per_iteration", c.backtranslate.steps_per_iteration},
        {"beam_size", c.backtranslate.beam_size},
        {"synthetic_per_direction", c.backtranslate.synthetic_per_direction},
        {"restart_from_base", c.backtranslate.restart_from_base},
        {"adaptation", write_train(c.backtranslate.adaptation)}}}};
  return j.dump(2) + "\n";
}

}  // namespace famt::config
