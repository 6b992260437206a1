#include "famt/workspace.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <sstream>

#include "famt/error.hpp"
#include "famt/hash.hpp"
#include "famt/text.hpp"
#include "json.hpp"

namespace famt::workspace {

namespace fs = std::filesystem;
using nlohmann::json;

Lock::Lock(const fs::path& root) : path_(root / ".lock") {
  fs::create_directories(root);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw ConflictError("experiment directory '" + root.string() + "' is locked by another run (remove " +
                          path_.string() + " if that run is gone)");
    throw InputError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(fd, pid.data(), pid.size()) < 0) {
    // the lock still holds; the pid is only informative
  }
  ::close(fd);
}

Lock::~Lock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

std::string rel(const fs::path& root, const fs::path& p) { return fs::relative(p, root).generic_string(); }

void save_rows(const fs::path& path, const std::vector<pipeline::MetricRow>& rows) {
  fs::create_directories(path.parent_path());
  write_file(path, pipeline::format_metric_table(rows));
}

std::vector<fs::path> checkpoint_files(const fs::path& ckpt) {
  fs::path v = ckpt;
  v += ".vocab.txt";
  return {ckpt, v};
}

Corpus slice(const Corpus& c, size_t begin, size_t end) {
  return Corpus(c.begin() + static_cast<std::ptrdiff_t>(begin), c.begin() + static_cast<std::ptrdiff_t>(end));
}

synth::ParallelCorpus read_parallel(const fs::path& src, const fs::path& tgt) {
  const auto s = read_corpus(src), t = read_corpus(tgt);
  if (s.size() != t.size())
    throw DataError("parallel files differ in length: " + src.string() + ", " + tgt.string());
  synth::ParallelCorpus out;
  for (size_t i = 0; i < s.size(); ++i) out.emplace_back(s[i], t[i]);
  return out;
}

}  // namespace

Workspace::Workspace(fs::path root, config::ExperimentConfig config)
    : root_(std::move(root)), config_(std::move(config)) {
  config_.validate();
  config_json_ = config::to_json(config_);
}

fs::path Workspace::vectors_path(const std::string& lang) const { return root_ / "emb" / (lang + ".vec"); }
fs::path Workspace::bank_path(const std::string& lang) const { return root_ / "emb" / (lang + ".bank"); }
fs::path Workspace::extended_checkpoint(const std::string& lang) const { return root_ / "model" / (lang + ".ckpt"); }
fs::path Workspace::manifest_path(const std::string& stage) const { return root_ / "manifests" / (stage + ".json"); }

fs::path Workspace::hub_path(const std::string& lang) const {
  if (config_.is_unseen(lang)) return root_ / "align" / ("hub." + lang + ".famt");
  return root_ / "align" / "hub.famt";
}

std::string Workspace::stage_of(const std::string& lang) const {
  return config_.is_unseen(lang) ? "extension" : "base";
}

// ---- step bookkeeping ----

std::string Workspace::step_key(const Step& step) const {
  std::ostringstream os;
  os << step.name << '\n' << config_json_ << '\n' << step.extra << '\n';
  for (const auto& p : step.inputs) os << rel(root_, p) << ' ' << sha256_file(p) << '\n';
  return sha256_hex(os.str());
}

bool Workspace::up_to_date(const Step& step, const std::string& key) const {
  const fs::path stamp = root_ / "stamps" / (step.name + ".json");
  if (!fs::exists(stamp)) return false;
  try {
    const auto j = json::parse(read_file(stamp));
    if (j.at("key").get<std::string>() != key) return false;
    for (const auto& [path, hash] : j.at("outputs").items()) {
      const fs::path p = root_ / path;
      if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) return false;
    }
    return true;
  } catch (const json::exception&) {
    return false;
  }
}

void Workspace::finish(const Step& step, const std::string& key) const {
  json j;
  j["key"] = key;
  j["outputs"] = json::object();
  for (const auto& p : step.outputs) j["outputs"][rel(root_, p)] = sha256_file(p);
  fs::create_directories(root_ / "stamps");
  write_file(root_ / "stamps" / (step.name + ".json"), j.dump(2) + "\n");
}

void Workspace::record(const std::string& stage, const std::vector<fs::path>& inputs) const {
  const fs::path path = manifest_path(stage);
  pipeline::StageManifest m;
  if (fs::exists(path)) {
    m = pipeline::StageManifest::load(path);
  } else {
    m.stage = stage;
  }
  const auto langs = stage == "base" ? config_.base_languages() : config_.languages();
  m.languages.insert(langs.begin(), langs.end());
  for (const auto& p : inputs) {
    const std::string r = rel(root_, p);
    pipeline::FileRecord rec{r, sha256_file(p), pipeline::languages_in_name(r, m.languages)};
    auto it = std::find_if(m.files.begin(), m.files.end(), [&](const auto& f) { return f.path == r; });
    if (it != m.files.end()) {
      *it = rec;
    } else {
      m.files.push_back(rec);
    }
  }
  fs::create_directories(path.parent_path());
  m.save(path);
}

void Workspace::require(const std::vector<fs::path>& inputs) const {
  for (const auto& p : inputs)
    if (!fs::is_regular_file(p)) throw InputError("missing input " + p.string() + " (run the earlier step first)");
}

// ---- steps ----

StepOutcome Workspace::synth() {
  Step step{"synth", "base", {}, {}, ""};
  const std::string key = step_key(step);
  StepOutcome out;
  if (up_to_date(step, key)) {
    out.skipped = true;
    return out;
  }
  const auto family = config::build_family(config_);
  synth::write_family(family, data_dir());
  write_file(root_ / "config.json", config_json_);
  for (const auto& e : fs::directory_iterator(data_dir()))
    if (e.is_regular_file()) step.outputs.push_back(e.path());
  std::sort(step.outputs.begin(), step.outputs.end());
  finish(step, key);
  if (log_) *log_ << "synth: " << step.outputs.size() << " files in " << data_dir().string() << "\n";
  out.outputs = step.outputs;
  return out;
}

StepOutcome Workspace::embed(const std::string& lang) {
  Step step{"embed-" + lang, stage_of(lang), {data_dir() / (lang + ".mono.txt")}, {}, ""};
  require(step.inputs);
  const std::string key = step_key(step);
  record(step.stage, step.inputs);
  StepOutcome out;
  if (up_to_date(step, key)) {
    out.skipped = true;
    return out;
  }
  emb::SkipgramConfig cfg = config_.embed;
  cfg.language = lang;
  auto [table, bank] = emb::train_skipgram(read_corpus(step.inputs[0]), cfg);
  emb::normalize_rows(table);
  fs::create_directories(root_ / "emb");
  emb::save_vectors(vectors_path(lang), table);
  emb::save_bank(bank_path(lang), bank);
  step.outputs = {vectors_path(lang), bank_path(lang)};
  finish(step, key);
  if (log_) *log_ << "embed " << lang << ": " << table.size() << " words, dim " << table.dim() << "\n";
  out.outputs = step.outputs;
  return out;
}

AlignSummary Workspace::align(const std::vector<std::string>& langs) {
  const std::string& pivot = config_.align.pivot;
  // Base languages form one group, each unseen language its own.
  std::vector<std::vector<std::string>> groups(1);
  for (const auto& l : langs) {
    if (l == pivot) continue;
    if (config_.is_unseen(l)) {
      groups.push_back({l});
    } else {
      groups[0].push_back(l);
    }
  }
  AlignSummary summary;
  summary.step.skipped = true;
  for (const auto& group : groups) {
    if (group.empty()) continue;
    const std::string& head = group.front();
    const bool unseen = config_.is_unseen(head);
    const fs::path hub_file = hub_path(head);
    const fs::path tsv = root_ / "align" / (unseen ? "p_at_1." + head + ".tsv" : "p_at_1.tsv");
    Step step{unseen ? "align-" + head : "align", stage_of(head), {vectors_path(pivot)}, {}, ""};
    for (const auto& l : group) {
      step.inputs.push_back(vectors_path(l));
      step.inputs.push_back(data_dir() / ("dict." + l + "-" + pivot + ".txt"));
    }
    require(step.inputs);
    const std::string key = step_key(step);
    record(step.stage, step.inputs);
    if (up_to_date(step, key)) continue;
    summary.step.skipped = false;

    std::map<std::string, emb::EmbeddingTable> tables;
    tables.emplace(pivot, emb::load_vectors(vectors_path(pivot), pivot));
    std::map<std::string, align::BilingualDictionary> train_dicts, test_dicts;
    for (const auto& l : group) {
      tables.emplace(l, emb::load_vectors(vectors_path(l), l));
      const auto dict = align::load_dictionary(data_dir() / ("dict." + l + "-" + pivot + ".txt"), l, pivot);
      auto [tr, te] = align::split_dictionary(dict, config_.align.test_fraction, derive_seed(config_.seed, 16));
      train_dicts.emplace(l, std::move(tr));
      test_dicts.emplace(l, std::move(te));
    }
    const auto hub = align::align_to_hub(tables, train_dicts, pivot, config_.align.hub);
    std::vector<std::string> lines = {"language\ttrain_p_at_1\ttest_p_at_1"};
    for (const auto& l : group) {
      double test = 0.0;
      if (!test_dicts.at(l).pairs.empty())
        test = align::eval_p_at_1(hub.map_for(l), tables.at(l), tables.at(pivot), test_dicts.at(l), config_.align.hub.csls)
                   .accuracy;
      summary.train_p_at_1[l] = hub.train_p_at_1.at(l);
      summary.test_p_at_1[l] = test;
      std::ostringstream row;
      row.precision(17);
      row << l << '\t' << hub.train_p_at_1.at(l) << '\t' << test;
      lines.push_back(row.str());
      if (log_) *log_ << "align " << l << " -> " << pivot << ": P@1 train " << hub.train_p_at_1.at(l) << ", held-out " << test << "\n";
    }
    fs::create_directories(hub_file.parent_path());
    hub.save(hub_file);
    write_lines(tsv, lines);
    step.outputs = {hub_file, tsv};
    finish(step, key);
    summary.step.outputs.insert(summary.step.outputs.end(), step.outputs.begin(), step.outputs.end());
  }
  return summary;
}

StepOutcome Workspace::build_vocab() {
  const auto langs = config_.base_languages();
  Step step{"vocab", "base", {hub_path(config_.align.pivot)}, {}, ""};
  for (const auto& l : langs) {
    step.inputs.push_back(vectors_path(l));
    step.inputs.push_back(bank_path(l));
    step.inputs.push_back(data_dir() / (l + ".mono.txt"));
  }
  require(step.inputs);
  const std::string key = step_key(step);
  record(step.stage, step.inputs);
  StepOutcome out;
  if (up_to_date(step, key)) {
    out.skipped = true;
    return out;
  }
  const auto hub = align::HubAlignment::load(step.inputs[0]);
  std::vector<vocab::LanguageVocab> lvs;
  for (const auto& l : langs) {
    const auto table = emb::load_vectors(vectors_path(l), l);
    const auto bank = emb::load_bank(bank_path(l));
    auto lv = vocab::build_from_corpus(table, read_corpus(data_dir() / (l + ".mono.txt")), l, &bank);
    lv.rows = hub.map_for(l).apply(lv.rows, true);
    if (log_)
      *log_ << "vocab " << l << ": " << lv.words.size() << " words (" << lv.composed.size() << " composed, "
            << lv.hard_oov.size() << " dropped)\n";
    lvs.push_back(std::move(lv));
  }
  const auto v = vocab::MultiVocab::merge(lvs, derive_seed(config_.seed, 17));
  const fs::path vf = root_ / "vocab" / "vocab.txt", ef = root_ / "vocab" / "embedding.famt";
  fs::create_directories(vf.parent_path());
  v.save(vf, ef);
  step.outputs = {vf, ef};
  finish(step, key);
  out.outputs = step.outputs;
  return out;
}

StepOutcome Workspace::train_base() {
  const auto langs = config_.base_languages();
  const fs::path vf = root_ / "vocab" / "vocab.txt", ef = root_ / "vocab" / "embedding.famt";
  Step step{"train", "base", {vf, ef}, {}, ""};
  for (const auto& a : langs)
    for (const auto& b : langs) {
      if (a == b) continue;
      for (const std::string infix : {"", ".dev"}) {
        step.inputs.push_back(data_dir() / (a + "-" + b + infix + ".src.txt"));
        step.inputs.push_back(data_dir() / (a + "-" + b + infix + ".tgt.txt"));
      }
    }
  require(step.inputs);
  const std::string key = step_key(step);
  record(step.stage, step.inputs);
  StepOutcome out;
  if (up_to_date(step, key)) {
    out.skipped = true;
    return out;
  }
  auto v = std::make_shared<const vocab::MultiVocab>(vocab::MultiVocab::load(vf, ef));
  model::Transformer m(config_.model, v, config_.model_seed());
  std::vector<train::ParallelSet> tr, dv;
  for (const auto& a : langs)
    for (const auto& b : langs) {
      if (a == b) continue;
      const std::string stem = a + "-" + b;
      tr.push_back(train::encode_pairs(*v, a, b,
                                       read_parallel(data_dir() / (stem + ".src.txt"), data_dir() / (stem + ".tgt.txt"))));
      dv.push_back(train::encode_pairs(
          *v, a, b, read_parallel(data_dir() / (stem + ".dev.src.txt"), data_dir() / (stem + ".dev.tgt.txt"))));
    }
  const auto result = train::train(m, tr, dv, config_.train);
  std::vector<std::string> trace = {"update\tlr\ttrain_loss\tdev_loss"};
  for (const auto& p : result.trace) {
    std::ostringstream row;
    row.precision(17);
    row << p.update << '\t' << p.lr << '\t' << p.train_loss << '\t';
    if (p.dev_loss) row << *p.dev_loss;
    trace.push_back(row.str());
  }
  fs::create_directories(root_ / "model");
  m.save(base_checkpoint());
  write_lines(root_ / "model" / "train_trace.tsv", trace);
  step.outputs = checkpoint_files(base_checkpoint());
  step.outputs.push_back(root_ / "model" / "train_trace.tsv");
  finish(step, key);
  if (log_) {
    *log_ << "train: " << result.updates << " updates in " << result.seconds << " s";
    if (result.best_dev_loss) *log_ << ", best dev loss " << *result.best_dev_loss;
    *log_ << "\n";
  }
  out.outputs = step.outputs;
  return out;
}

StepOutcome Workspace::extend(const std::string& lang, const translate::PlugInOptions& options) {
  Step step{"extend-" + lang, stage_of(lang), checkpoint_files(base_checkpoint()), {}, ""};
  for (const auto& p : {vectors_path(lang), bank_path(lang), hub_path(lang), data_dir() / (lang + ".mono.txt")})
    step.inputs.push_back(p);
  std::ostringstream extra;
  extra << "renormalize=" << options.renormalize << " tag=" << options.add_target_tag << " from=" << options.init_tag_from;
  step.extra = extra.str();
  require(step.inputs);
  const std::string key = step_key(step);
  record(step.stage, step.inputs);
  StepOutcome out;
  if (up_to_date(step, key)) {
    out.skipped = true;
    return out;
  }
  auto m = model::Transformer::load(base_checkpoint());
  const auto table = emb::load_vectors(vectors_path(lang), lang);
  const auto bank = emb::load_bank(bank_path(lang));
  const auto hub = align::HubAlignment::load(hub_path(lang));
  translate::PlugInOptions opts = options;
  opts.bank = &bank;
  if (opts.init_tag_from.empty()) opts.init_tag_from = config_.align.pivot;
  const auto report =
      translate::plug_in_language(m, table, hub.map_for(lang), lang, read_corpus(data_dir() / (lang + ".mono.txt")), opts);
  m.save(extended_checkpoint(lang));
  step.outputs = checkpoint_files(extended_checkpoint(lang));
  finish(step, key);
  if (log_)
    *log_ << "extend " << lang << ": " << report.words << " words (" << report.composed << " composed, "
          << report.hard_oov << " dropped), layers unchanged\n";
  out.outputs = step.outputs;
  return out;
}

BacktranslateSummary Workspace::backtranslate(const std::optional<fs::path>& checkpoint) {
  const auto& bt = config_.backtranslate;
  const std::string& ln = bt.new_language;
  const fs::path ckpt = checkpoint ? *checkpoint : extended_checkpoint(ln);
  std::vector<fs::path> inputs = checkpoint_files(ckpt);
  inputs.push_back(data_dir() / (ln + ".mono.txt"));
  for (const auto& p : bt.partners) {
    inputs.push_back(data_dir() / (p + ".mono.txt"));
    for (const auto& stem : {ln + "-" + p, p + "-" + ln})
      for (const std::string split : {".dev", ".test"}) {
        inputs.push_back(data_dir() / (stem + split + ".src.txt"));
        inputs.push_back(data_dir() / (stem + split + ".tgt.txt"));
      }
  }
  require(inputs);
  record("extension", inputs);

  auto model = model::Transformer::load(ckpt);
  if (!model.vocab().has_tag(ln))
    throw ConfigError("checkpoint " + ckpt.string() + " cannot decode into '" + ln + "' (extend with a target tag)");

  // The monolingual files are line-parallel across languages, so the new
  // language and its partners draw from disjoint halves.
  pipeline::BtPlan plan;
  plan.new_language = ln;
  plan.partners = bt.partners;
  const auto new_mono = read_corpus(data_dir() / (ln + ".mono.txt"));
  plan.monolingual[ln] = slice(new_mono, 0, new_mono.size() / 2);
  for (const auto& p : bt.partners) {
    const auto mono = read_corpus(data_dir() / (p + ".mono.txt"));
    plan.monolingual[p] = slice(mono, mono.size() / 2, mono.size());
    for (const auto& [s, t] : {std::pair{ln, p}, std::pair{p, ln}}) {
      const std::string stem = s + "-" + t;
      plan.dev.push_back({"dev", s, t, read_parallel(data_dir() / (stem + ".dev.src.txt"), data_dir() / (stem + ".dev.tgt.txt"))});
      plan.test.push_back(
          {"test", s, t, read_parallel(data_dir() / (stem + ".test.src.txt"), data_dir() / (stem + ".test.tgt.txt"))});
    }
  }
  plan.iterations = bt.iterations;
  plan.steps_per_iteration = bt.steps_per_iteration;
  plan.beam_size = bt.beam_size;
  plan.synthetic_per_direction = bt.synthetic_per_direction;
  plan.restart_from_base = bt.restart_from_base;
  plan.adaptation = bt.adaptation;
  plan.validate();

  BacktranslateSummary summary;
  summary.step.skipped = true;
  const fs::path dir = root_ / "bt";
  fs::create_directories(dir);

  Step base_step{"bt-baseline", "extension", inputs, {dir / "baseline.tsv"}, ""};
  const std::string base_key = step_key(base_step);
  if (up_to_date(base_step, base_key)) {
    summary.baseline = parse_metric_table(read_file(dir / "baseline.tsv"));
  } else {
    for (const auto* sets : {&plan.dev, &plan.test})
      for (const auto& d : *sets) summary.baseline.push_back(pipeline::evaluate_direction(model, d, 0));
    save_rows(dir / "baseline.tsv", summary.baseline);
    finish(base_step, base_key);
  }

  const model::Transformer base = model;
  std::vector<fs::path> previous = inputs;
  for (int k = 1; k <= plan.iterations; ++k) {
    const fs::path iter_ckpt = dir / ("iter-" + std::to_string(k) + ".ckpt");
    const fs::path iter_tsv = dir / ("iter-" + std::to_string(k) + ".tsv");
    // Iteration k depends on everything iteration k-1 produced.
    Step step{"bt-iter-" + std::to_string(k), "extension", previous, {}, "iteration=" + std::to_string(k)};
    const std::string key = step_key(step);
    if (up_to_date(step, key)) {
      model = model::Transformer::load(iter_ckpt);
      const auto rows = parse_metric_table(read_file(iter_tsv));
      summary.table.insert(summary.table.end(), rows.begin(), rows.end());
      summary.resumed.push_back(k);
      if (log_) *log_ << "backtranslate: iteration " << k << " up to date\n";
    } else {
      summary.step.skipped = false;
      auto r = pipeline::run_iteration(model, plan, k, &base);
      model.save(iter_ckpt);
      save_rows(iter_tsv, r.metrics);
      step.outputs = checkpoint_files(iter_ckpt);
      step.outputs.push_back(iter_tsv);
      finish(step, key);
      if (log_) {
        *log_ << "backtranslate: iteration " << k << " froze " << r.frozen << ", " << r.training.updates << " updates";
        if (r.aborted) *log_ << " (aborted: " << r.error << ")";
        *log_ << "\n";
      }
      summary.table.insert(summary.table.end(), r.metrics.begin(), r.metrics.end());
      summary.iterations.push_back(std::move(r));
    }
    previous = checkpoint_files(iter_ckpt);
  }
  save_rows(dir / "metrics.tsv", summary.table);
  model.save(dir / "final.ckpt");
  summary.step.outputs = checkpoint_files(dir / "final.ckpt");
  summary.step.outputs.push_back(dir / "metrics.tsv");
  return summary;
}

pipeline::IsolationReport Workspace::verify_stages() const {
  for (const std::string stage : {"base", "extension"})
    if (!fs::exists(manifest_path(stage)))
      throw InputError("no " + stage + " manifest at " + manifest_path(stage).string());
  return pipeline::verify_stage_isolation(pipeline::StageManifest::load(manifest_path("base")),
                                          pipeline::StageManifest::load(manifest_path("extension")));
}

std::vector<pipeline::MetricRow> parse_metric_table(const std::string& tsv) {
  std::istringstream in(tsv);
  std::string line;
  if (!std::getline(in, line) || line != "iteration\tdirection\ttest_set\tchrfpp\tbleu")
    throw FormatError("metric table lacks its header row");
  std::vector<pipeline::MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream cs(line);
    std::string cell;
    while (std::getline(cs, cell, '\t')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError("metric table row has " + std::to_string(cells.size()) + " cells");
    try {
      rows.push_back({std::stoi(cells[0]), cells[1], cells[2], std::stod(cells[3]), std::stod(cells[4])});
    } catch (const std::exception&) {
      throw FormatError("bad metric table row: " + line);
    }
  }
  return rows;
}

}  // namespace famt::workspace
