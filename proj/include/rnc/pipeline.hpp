#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rnc/config.hpp"
#include "rnc/dataset.hpp"

namespace rnc {

/// Version string baked in at build time (git describe, or the project version).
std::string build_version();

/// Exclusive per-directory lock: `<dir>/.lock` holding the owner pid. A lock
/// left behind by a dead process is taken over.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Artifact layout under the output directory:
///
///   config.json  run_manifest.json  corpus/  stats.tsv  splits.json
///   iter<i>/labels.json  iter<i>/cnn.*  iter<i>/rnn.*  iter<i>/*_epochs.csv
///   iter<i>/predictions.jsonl  iter<i>/bleu.json  iter<i>/bleu.txt
///   iter0/context.*  iter1/clusters.json  iter1/context.*  iter<i>/projection.tsv
///
/// Every stage checks its upstream artifacts, records itself in the run
/// manifest, and is skipped when it already ran under the same config hash.
class Pipeline {
 public:
  /// Throws ConfigError when `out` holds artifacts of a different config,
  /// unless `force`.
  Pipeline(RunConfig config, std::filesystem::path out, bool force = false);

  void synth();
  void ingest(const std::optional<std::filesystem::path>& source = std::nullopt);
  void stats();
  void split();
  void mine();
  void train_cnn(int iteration);
  void train_rnn(int iteration);
  void generate(int iteration);
  void eval(int iteration);
  void context();
  void cluster();
  /// context -> cluster -> train_cnn(1) -> train_rnn(1) -> generate(1) -> eval(1).
  void iterate();
  void project(int iteration);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& out() const { return out_; }
  std::filesystem::path iter_dir(int iteration) const;
  /// Corpus from out/corpus with splits (and the iteration's labels) applied.
  Corpus load_corpus(std::optional<int> label_iteration = std::nullopt) const;
  nlohmann::json manifest() const { return manifest_; }
  /// Stages actually executed (not skipped) by this object, in order.
  const std::vector<std::string>& executed() const { return executed_; }

  /// Reads out/config.json when present, else the defaults.
  static RunConfig stored_config(const std::filesystem::path& out);

 private:
  void run_stage(const std::string& name, const std::vector<std::filesystem::path>& outputs,
                 const std::function<void()>& body);
  void require(const std::filesystem::path& path, const std::string& what, const std::string& stage) const;
  void require_checkpoint(const std::filesystem::path& stem, const std::string& what,
                          const std::string& stage) const;
  void save_manifest() const;
  static void check_iteration(int iteration);

  RunConfig config_;
  std::filesystem::path out_;
  bool force_ = false;
  std::string hash_;
  nlohmann::json manifest_;
  std::vector<std::string> executed_;
};

}  // namespace rnc
