#include "rnc/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>

#include <spdlog/spdlog.h>

#include "rnc/bleu.hpp"
#include "rnc/cascade.hpp"
#include "rnc/checkpoint.hpp"
#include "rnc/decoder.hpp"
#include "rnc/encoder.hpp"
#include "rnc/errors.hpp"
#include "rnc/projection.hpp"
#include "rnc/synth.hpp"

#ifndef RNC_VERSION
#define RNC_VERSION "0.1.0"
#endif

namespace rnc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string build_version() { return RNC_VERSION; }

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string now_utc() {
  const auto t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

bool pid_alive(pid_t pid) { return pid > 0 && (::kill(pid, 0) == 0 || errno == EPERM); }

}  // namespace

DirLock::DirLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const auto pid = std::to_string(::getpid()) + "\n";
      if (::write(fd, pid.data(), pid.size()) < 0) spdlog::warn("could not record pid in {}", path_.string());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw DataError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    pid_t owner = 0;
    std::ifstream(path_) >> owner;
    if (pid_alive(owner)) {
      throw UsageError("output directory is in use by process " + std::to_string(owner) + " (" +
                       path_.string() + ")");
    }
    spdlog::warn("removing stale lock left by process {}", owner);
    fs::remove(path_);
  }
  throw UsageError("could not acquire " + path_.string());
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

RunConfig Pipeline::stored_config(const fs::path& out) {
  const auto path = out / "config.json";
  if (!fs::exists(path)) return RunConfig{};
  return RunConfig::load(path);
}

Pipeline::Pipeline(RunConfig config, fs::path out, bool force)
    : config_(std::move(config)), out_(std::move(out)), force_(force) {
  config_.validate();
  hash_ = config_.hash();
  fs::create_directories(out_);
  const auto mpath = out_ / "run_manifest.json";
  if (fs::exists(mpath)) {
    manifest_ = read_json(mpath);
    const auto old = manifest_.value("config_hash", std::string());
    if (old != hash_) {
      if (!force_) {
        throw ConfigError("artifacts in " + out_.string() + " were produced with config " + old +
                          ", current config is " + hash_ + "; pass --force to overwrite");
      }
      spdlog::warn("config changed ({} -> {}); earlier stage records discarded", old, hash_);
      manifest_["stages"] = json::object();
    }
  }
  if (!manifest_.is_object()) manifest_ = json::object();
  if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
  manifest_["config_hash"] = hash_;
  manifest_["seed"] = config_.seed;
  manifest_["version"] = build_version();
  write_json(out_ / "config.json", config_.to_json());
  save_manifest();
}

fs::path Pipeline::iter_dir(int iteration) const { return out_ / ("iter" + std::to_string(iteration)); }

void Pipeline::check_iteration(int iteration) {
  if (iteration != 0 && iteration != 1) throw ConfigError("iteration must be 0 or 1");
}

void Pipeline::save_manifest() const { write_json(out_ / "run_manifest.json", manifest_); }

void Pipeline::require(const fs::path& path, const std::string& what, const std::string& stage) const {
  if (!fs::exists(path)) {
    throw MissingArtifactError(what + " not found at " + path.string() + "; run `" + stage + "` first");
  }
}

void Pipeline::require_checkpoint(const fs::path& stem, const std::string& what, const std::string& stage) const {
  if (!checkpoint_exists(stem)) {
    throw MissingArtifactError(what + " not found at " + stem.string() + "; run `" + stage + "` first");
  }
}

void Pipeline::run_stage(const std::string& name, const std::vector<fs::path>& outputs,
                         const std::function<void()>& body) {
  auto& stages = manifest_["stages"];
  if (!force_ && stages.contains(name) && stages[name].value("config_hash", "") == hash_) {
    bool present = true;
    for (const auto& p : outputs) present = present && fs::exists(p);
    if (present) {
      spdlog::info("{}: up to date", name);
      return;
    }
  }
  spdlog::info("{}: running", name);
  const auto start = std::chrono::steady_clock::now();
  body();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stages[name] = {{"config_hash", hash_}, {"wall_seconds", seconds}, {"finished", now_utc()}};
  double total = 0.0;
  for (const auto& [k, v] : stages.items()) total += v.value("wall_seconds", 0.0);
  manifest_["wall_seconds"] = total;
  save_manifest();
  executed_.push_back(name);
  spdlog::info("{}: done in {:.1f}s", name, seconds);
}

Corpus Pipeline::load_corpus(std::optional<int> label_iteration) const {
  require(out_ / "corpus" / "index.jsonl", "corpus", "synth` or `ingest");
  auto corpus = rnc::ingest(out_ / "corpus", {config_.image_side});
  if (fs::exists(out_ / "splits.json")) apply_splits(corpus, read_json(out_ / "splits.json"));
  if (label_iteration) {
    const auto path = iter_dir(*label_iteration) / "labels.json";
    require(path, "iteration " + std::to_string(*label_iteration) + " labels",
            *label_iteration == 0 ? "mine" : "cluster");
    apply_labels(corpus, LabelSpace::load(path));
  }
  return corpus;
}

void Pipeline::synth() {
  run_stage("synth", {out_ / "corpus" / "index.jsonl"}, [&] {
    auto corpus = synthesize(config_.synth_spec());
    fs::remove_all(out_ / "corpus");
    write_corpus(out_ / "corpus", corpus);
    spdlog::info("synthesized {} examples", corpus.size());
  });
}

void Pipeline::ingest(const std::optional<fs::path>& source) {
  const fs::path dir = source ? *source : fs::path(config_.corpus);
  if (dir.empty()) throw ConfigError("ingest needs --source or the `corpus` config key");
  run_stage("ingest", {out_ / "corpus" / "index.jsonl"}, [&] {
    IngestReport report;
    auto corpus = rnc::ingest(dir, {config_.image_side}, &report);
    if (corpus.empty()) throw DataError("no usable records in " + dir.string());
    fs::remove_all(out_ / "corpus");
    write_corpus(out_ / "corpus", corpus);
    spdlog::info("ingested {} of {} records ({} skipped)", report.loaded, report.records, report.skipped);
  });
}

void Pipeline::stats() {
  run_stage("stats", {out_ / "stats.tsv"}, [&] {
    const auto corpus = load_corpus();
    write_text(out_ / "stats.tsv", term_stats_tsv(term_stats(corpus)));
  });
}

void Pipeline::split() {
  run_stage("split", {out_ / "splits.json"}, [&] {
    auto corpus = load_corpus();
    split_corpus(corpus, config_.split_config());
    write_json(out_ / "splits.json", splits_to_json(corpus));
    std::map<std::string, std::size_t> n;
    for (const auto& ex : corpus) ++n[to_string(ex.split)];
    spdlog::info("split: train {} val {} test {}", n["train"], n["val"], n["test"]);
  });
}

void Pipeline::mine() {
  const auto path = iter_dir(0) / "labels.json";
  run_stage("mine", {path}, [&] {
    require(out_ / "splits.json", "splits", "split");
    auto corpus = load_corpus();
    MiningReport report;
    auto space = mine_labels(corpus, config_.mine_min_support, &report);
    fs::create_directories(iter_dir(0));
    space.save(path);
    spdlog::info("mined {} labels covering {}/{} examples ({:.1f}%)", report.patterns, report.labeled,
                 report.total, 100.0 * report.retained_fraction);
  });
}

void Pipeline::train_cnn(int iteration) {
  check_iteration(iteration);
  const auto dir = iter_dir(iteration);
  const auto name = "train-cnn/" + std::to_string(iteration);
  run_stage(name, {manifest_path(dir / "cnn"), blob_path(dir / "cnn")}, [&] {
    const auto corpus = load_corpus(iteration);
    const auto space = LabelSpace::load(dir / "labels.json");
    std::optional<EncoderModel> model;
    if (iteration == 0) {
      model.emplace(config_.encoder_config(), space.labels, 0);
    } else {
      require_checkpoint(iter_dir(0) / "cnn", "iteration 0 encoder", "train-cnn --iter 0");
      model.emplace(EncoderModel::load(iter_dir(0) / "cnn"));
      fine_tune(*model, space, config_.finetune_lr_scale);
    }
    auto tcfg = config_.encoder_train_config(iteration);
    tcfg.dump_dir = dir;
    const auto report = train_encoder(*model, corpus, space, tcfg);
    write_text(dir / "cnn_epochs.csv", report.csv());
    model->save(dir / "cnn", {{"best_epoch", report.best_epoch}, {"best_val_accuracy", report.best_val_accuracy}});
  });
}

void Pipeline::train_rnn(int iteration) {
  check_iteration(iteration);
  const auto dir = iter_dir(iteration);
  const auto name = "train-rnn/" + std::to_string(iteration);
  run_stage(name, {manifest_path(dir / "rnn"), blob_path(dir / "rnn")}, [&] {
    require_checkpoint(dir / "cnn", "encoder", "train-cnn --iter " + std::to_string(iteration));
    const auto corpus = load_corpus(iteration);
    const auto space = LabelSpace::load(dir / "labels.json");
    auto encoder = EncoderModel::load(dir / "cnn");
    DecoderModel decoder(config_.decoder_config(), Vocab::build(corpus));
    const auto report = train_decoder(decoder, encoder, corpus, space, config_.decoder_train_config(iteration));
    write_text(dir / "rnn_epochs.csv", report.csv());
    decoder.save(dir / "rnn", {{"sequences", report.sequences}, {"excluded", report.excluded}});
  });
}

void Pipeline::generate(int iteration) {
  check_iteration(iteration);
  const auto dir = iter_dir(iteration);
  const auto name = "generate/" + std::to_string(iteration);
  run_stage(name, {dir / "predictions.jsonl"}, [&] {
    const auto it = std::to_string(iteration);
    require_checkpoint(dir / "cnn", "encoder", "train-cnn --iter " + it);
    require_checkpoint(dir / "rnn", "decoder", "train-rnn --iter " + it);
    const auto corpus = load_corpus();
    auto encoder = EncoderModel::load(dir / "cnn");
    auto decoder = DecoderModel::load(dir / "rnn");
    std::vector<Prediction> all;
    for (auto split : {Split::train, Split::val, Split::test}) {
      auto preds = rnc::generate(decoder, encoder, select(corpus, split), config_.max_len);
      all.insert(all.end(), preds.begin(), preds.end());
    }
    write_predictions(dir / "predictions.jsonl", all);
  });
}

void Pipeline::eval(int iteration) {
  check_iteration(iteration);
  const auto dir = iter_dir(iteration);
  const auto name = "eval/" + std::to_string(iteration);
  run_stage(name, {dir / "bleu.json", dir / "bleu.txt"}, [&] {
    const auto preds = read_predictions(dir / "predictions.jsonl");
    const auto corpus = load_corpus(iteration);
    const auto space = LabelSpace::load(dir / "labels.json");
    require_checkpoint(dir / "cnn", "encoder", "train-cnn --iter " + std::to_string(iteration));
    auto encoder = EncoderModel::load(dir / "cnn");
    std::vector<BleuReport> reports;
    json j{{"iteration", iteration}, {"bleu", json::array()}, {"accuracy", json::object()}};
    for (auto split : {Split::train, Split::val, Split::test}) {
      const bool any = std::any_of(preds.begin(), preds.end(), [&](const Prediction& p) { return p.split == split; });
      if (!any) {
        spdlog::warn("no {} predictions; BLEU skipped", to_string(split));
      } else {
        reports.push_back(bleu_corpus(preds, split, {config_.bleu_include_seed}));
        j["bleu"].push_back(reports.back().to_json());
      }
      bool labeled = false;
      for (const auto& ex : corpus) labeled = labeled || (ex.split == split && space.class_of(ex.id));
      if (labeled) j["accuracy"][to_string(split)] = accuracy(encoder, corpus, space, split);
    }
    write_json(dir / "bleu.json", j);
    const auto table = bleu_table(reports);
    write_text(dir / "bleu.txt", table);
    spdlog::info("iteration {} BLEU\n{}", iteration, table);
  });
}

void Pipeline::context() {
  const auto stem = iter_dir(0) / "context";
  run_stage("context", {manifest_path(stem), context_sidecar(stem)}, [&] {
    require_checkpoint(iter_dir(0) / "cnn", "iteration 0 encoder", "train-cnn");
    require_checkpoint(iter_dir(0) / "rnn", "iteration 0 decoder", "train-rnn");
    const auto corpus = load_corpus(0);
    auto encoder = EncoderModel::load(iter_dir(0) / "cnn");
    auto decoder = DecoderModel::load(iter_dir(0) / "rnn");
    const auto vectors = context_vectors(decoder, encoder, corpus, 0);
    save_context(stem, vectors);
    spdlog::info("{} context vectors", vectors.size());
  });
}

void Pipeline::cluster() {
  const auto dir = iter_dir(1);
  run_stage("cluster", {dir / "labels.json", dir / "clusters.json", manifest_path(dir / "context")}, [&] {
    require_checkpoint(iter_dir(0) / "context", "context vectors", "context");
    auto vectors = load_context(iter_dir(0) / "context");
    auto summary = plan_clusters(vectors, config_.cluster_config());
    for (auto& v : vectors) v.iteration = 1;
    const auto space = relabel(summary.plans);
    fs::create_directories(dir);
    space.save(dir / "labels.json");
    save_context(dir / "context", vectors);

    std::map<std::string, int> truth;
    for (const auto& ex : load_corpus()) {
      if (ex.context >= 0) truth[ex.id] = ex.context;
    }
    json j{{"threshold", summary.threshold}, {"config", config_.cluster_config().to_json()}, {"plans", json::array()}};
    for (const auto& p : summary.plans) j["plans"].push_back(p.to_json());
    const auto purity = truth.empty() ? std::nullopt : cluster_purity(summary.plans, truth);
    j["purity"] = purity ? json(*purity) : json(nullptr);
    write_json(dir / "clusters.json", j);
    spdlog::info("threshold {:.1f}; {} labels at iteration 1{}", summary.threshold, space.size(),
                 purity ? fmt::format("; purity {:.3f}", *purity) : std::string());
  });
}

void Pipeline::iterate() {
  context();
  cluster();
  train_cnn(1);
  train_rnn(1);
  generate(1);
  eval(1);
}

void Pipeline::project(int iteration) {
  check_iteration(iteration);
  const auto stem = iter_dir(iteration) / "context";
  const auto path = iter_dir(iteration) / "projection.tsv";
  run_stage("project/" + std::to_string(iteration), {path}, [&] {
    require_checkpoint(stem, "context vectors", iteration == 0 ? "context" : "cluster");
    write_text(path, projection_tsv(project_2d(load_context(stem))));
  });
}

}  // namespace rnc
