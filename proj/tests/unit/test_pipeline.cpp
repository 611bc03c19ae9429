#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rnc/config.hpp"
#include "rnc/errors.hpp"
#include "rnc/pipeline.hpp"

using namespace rnc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rnc_test_" + name);
  fs::remove_all(dir);
  return dir;
}

RunConfig small_config() {
  RunConfig c;
  c.synth_count = 300;
  c.split_min_eval = 1;
  c.mine_min_support = 5;
  return c;
}

}  // namespace

TEST_CASE("config: defaults round-trip and validate") {
  RunConfig d;
  auto back = RunConfig::from_json(d.to_json());
  CHECK(back.to_json() == d.to_json());
  CHECK(back.hash() == d.hash());
  CHECK(d.rnn_batch == 50);
  CHECK(d.rnn_layers == 2);
  CHECK(d.max_len == 5);
  CHECK(d.to_json()["rnn_lr"].is_null());
}

TEST_CASE("config: unknown keys, bad values and optional overrides") {
  CHECK_THROWS_AS(RunConfig::from_json({{"nope", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"split_train", 0.9}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"rnn_cell", "rnn"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"cnn_schedule", "cosine"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"rnn_batch", "fifty"}}), ConfigError);

  auto gru = RunConfig::from_json({{"rnn_cell", "gru"}});
  CHECK(gru.decoder_config().keep_prob == 0.9);
  CHECK(gru.decoder_train_config(0).schedule.base_rate == 1e-4);
  auto tuned = RunConfig::from_json({{"rnn_cell", "gru"}, {"rnn_lr", 0.01}, {"rnn_keep_prob", 1.0}});
  CHECK(tuned.decoder_train_config(0).schedule.base_rate == 0.01);
  CHECK(tuned.decoder_config().keep_prob == 1.0);
  CHECK(tuned.hash() != gru.hash());
  CHECK(RunConfig{}.decoder_config().state_dim == RunConfig{}.encoder_config().embed_dim());
  CHECK(RunConfig{}.encoder_config().input_side == 28);
}

TEST_CASE("config help lists every key") {
  const auto help = RunConfig::schema_help();
  const auto keys = RunConfig{}.to_json();
  for (const auto& [key, value] : keys.items()) CHECK(help.find("  " + key + " = ") != std::string::npos);
}

TEST_CASE("pipeline: missing artifacts name the stage to run") {
  auto dir = scratch("pipe_missing");
  Pipeline p(small_config(), dir);
  try {
    p.mine();
    FAIL("expected MissingArtifactError");
  } catch (const MissingArtifactError& e) {
    CHECK(std::string(e.what()).find("run `split` first") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(p.eval(0), doctest::Contains("run generate first"), MissingArtifactError);
  CHECK_THROWS_AS(p.train_cnn(2), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("pipeline: reruns are no-ops and config changes need force") {
  auto dir = scratch("pipe_idem");
  {
    Pipeline p(small_config(), dir);
    p.synth();
    p.split();
    p.mine();
    p.stats();
    CHECK(p.executed() == std::vector<std::string>{"synth", "split", "mine", "stats"});
    const auto m = p.manifest();
    CHECK(m["config_hash"] == small_config().hash());
    CHECK(m["stages"].size() == 4);
    CHECK(m.contains("version"));
  }
  {
    Pipeline again(Pipeline::stored_config(dir), dir);
    again.synth();
    again.split();
    again.mine();
    CHECK(again.executed().empty());
    fs::remove(dir / "stats.tsv");
    again.stats();
    CHECK(again.executed() == std::vector<std::string>{"stats"});
  }
  auto changed = small_config();
  changed.seed = 2;
  CHECK_THROWS_AS([&] { Pipeline clash(changed, dir); }(), ConfigError);
  Pipeline forced(changed, dir, true);
  forced.synth();
  CHECK(forced.executed() == std::vector<std::string>{"synth"});
  CHECK(forced.manifest()["stages"].size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("directory lock is exclusive and recovers from dead owners") {
  auto dir = scratch("lock");
  {
    DirLock a(dir);
    CHECK(fs::exists(dir / ".lock"));
    CHECK_THROWS_AS(DirLock{dir}, UsageError);
  }
  CHECK_FALSE(fs::exists(dir / ".lock"));
  std::ofstream(dir / ".lock") << 999999999 << "\n";
  { DirLock b(dir); }
  fs::remove_all(dir);
}
