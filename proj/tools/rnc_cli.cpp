#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "rnc/config.hpp"
#include "rnc/errors.hpp"
#include "rnc/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kMissing = 3, kNumeric = 4 };

// key=value; the value is parsed as JSON and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw rnc::ConfigError("--set expects key=value, got '" + kv + "'");
  const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
  try {
    j[key] = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    j[key] = value;
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("rnc"));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  CLI::App app{"Image annotation cascade: CNN encoder, RNN decoder and context-vector relabeling"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.footer("Config keys (JSON object; defaults shown; 'reference' values follow the published setup,\n"
             "'desk' values are tuned for the small synthetic corpus):\n" +
             rnc::RunConfig::schema_help() +
             "\nExit codes: 0 ok, 2 config error, 3 missing artifact, 4 numeric failure, 1 other.");

  std::string config_path, out_dir = "out";
  std::vector<std::string> overrides;
  bool force = false, verbose = false;
  int iteration = 0;
  std::string source;
  app.add_option("-c,--config", config_path, "JSON config file (default: <out>/config.json, else built-in defaults)");
  app.add_option("-o,--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--set", overrides, "override one config key, key=value (repeatable)");
  app.add_flag("-f,--force", force, "rerun stages and overwrite artifacts of a different config");
  app.add_flag("-v,--verbose", verbose, "debug logging");

  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {"synth", "write the synthetic corpus to <out>/corpus"},
      {"ingest", "copy an index.jsonl + PGM corpus into <out>/corpus"},
      {"stats", "term totals and overlaps to <out>/stats.tsv"},
      {"split", "stratified train/val/test split to <out>/splits.json"},
      {"mine", "iteration-0 labels from annotation patterns"},
      {"train-cnn", "train (iteration 0) or fine-tune (iteration 1) the encoder"},
      {"train-rnn", "train the decoder on the iteration's labeled training examples"},
      {"generate", "greedy annotations for every split"},
      {"eval", "BLEU-1..4 and classification accuracy"},
      {"context", "joint image/text context vectors of iteration 0"},
      {"cluster", "k-means relabeling into the iteration-1 label space"},
      {"iterate", "context, cluster, train-cnn, train-rnn, generate and eval for iteration 1"},
      {"project", "2D PCA of the context vectors to projection.tsv"},
  };
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    const std::string n = s.name;
    if (n == "train-cnn" || n == "train-rnn" || n == "generate" || n == "eval" || n == "project") {
      sub->add_option("--iter", iteration, "cascade iteration (0 or 1)")->check(CLI::Range(0, 1))->capture_default_str();
    }
    if (n == "ingest") sub->add_option("--source", source, "corpus directory (default: the `corpus` config key)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    nlohmann::json j = config_path.empty() ? rnc::Pipeline::stored_config(out_dir).to_json()
                                           : rnc::RunConfig::load(config_path).to_json();
    for (const auto& kv : overrides) apply_override(j, kv);
    auto config = rnc::RunConfig::from_json(j);

    rnc::DirLock lock(out_dir);
    rnc::Pipeline p(config, out_dir, force);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") p.synth();
    else if (cmd == "ingest") p.ingest(source.empty() ? std::nullopt : std::optional<fs::path>(source));
    else if (cmd == "stats") p.stats();
    else if (cmd == "split") p.split();
    else if (cmd == "mine") p.mine();
    else if (cmd == "train-cnn") p.train_cnn(iteration);
    else if (cmd == "train-rnn") p.train_rnn(iteration);
    else if (cmd == "generate") p.generate(iteration);
    else if (cmd == "eval") p.eval(iteration);
    else if (cmd == "context") p.context();
    else if (cmd == "cluster") p.cluster();
    else if (cmd == "iterate") p.iterate();
    else if (cmd == "project") p.project(iteration);
    return kOk;
  } catch (const rnc::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfig;
  } catch (const rnc::MissingArtifactError& e) {
    spdlog::error("{}", e.what());
    return kMissing;
  } catch (const rnc::NumericError& e) {
    spdlog::error("numeric: {}", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
}
