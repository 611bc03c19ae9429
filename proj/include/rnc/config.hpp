#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rnc/cascade.hpp"
#include "rnc/dataset.hpp"
#include "rnc/decoder.hpp"
#include "rnc/encoder.hpp"
#include "rnc/synth.hpp"

namespace rnc {

/// Everything a pipeline run depends on. Serialized as one flat JSON object;
/// unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  /// OpenI-style corpus directory for `ingest`; empty means synthetic.
  std::string corpus;

  // synthetic corpus
  std::size_t synth_count = 600;
  double synth_normal_prior = 0.49;
  double synth_noise_sigma = 10.0;
  double synth_bare_fraction = 0.0;
  std::vector<double> synth_severity_weights = {0.7, 0.1, 0.1, 0.1};
  nlohmann::json synth_archetypes = nullptr;

  // geometry
  int image_side = 32;
  /// Training crop side; 0 trains on full images.
  int crop_side = 28;

  // split and mining
  double split_train = 0.8;
  double split_val = 0.1;
  double split_test = 0.1;
  int split_min_eval = 2;
  int mine_min_support = 12;

  // encoder
  std::vector<int> cnn_channels = {8, 16, 64};
  int cnn_kernel = 3;
  bool cnn_batch_norm = true;
  int cnn_epochs = 200;
  std::size_t cnn_batch = 50;
  double cnn_lr = 0.02;
  std::string cnn_schedule = "step_down";
  double cnn_step_fraction = 1.0 / 3.0;
  double cnn_step_multiplier = 0.5;
  double cnn_momentum = 0.9;
  double cnn_normal_cap = 1.0 / 3.0;
  bool cnn_data_dropout = true;
  int cnn_augment = 4;
  bool cnn_stop_at_perfect = true;
  double finetune_lr_scale = 0.1;
  int finetune_epochs = 100;

  // decoder
  std::string rnn_cell = "lstm";
  int rnn_layers = 2;
  int rnn_epochs = 60;
  std::size_t rnn_batch = 50;
  /// Cell defaults apply when absent.
  std::optional<double> rnn_lr;
  std::optional<double> rnn_lr_decay;
  std::optional<double> rnn_decay_rate;
  std::optional<double> rnn_keep_prob;
  double rnn_clip = 5.0;
  bool rnn_loss_on_padding = true;
  int max_len = kHorizon;

  // cascade
  double cluster_target = 50.0;
  double cluster_scale = 0.4;
  double cluster_min_fraction = 0.5;
  int cluster_max_iter = 100;
  bool bleu_include_seed = true;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  /// FNV-1a of the canonical JSON dump, hex.
  std::string hash() const;

  SynthSpec synth_spec() const;
  SplitConfig split_config() const;
  EncoderConfig encoder_config() const;
  EncoderTrainConfig encoder_train_config(int iteration) const;
  DecoderConfig decoder_config() const;
  DecoderTrainConfig decoder_train_config(int iteration) const;
  ClusterConfig cluster_config() const;

  /// Field reference for --help.
  static std::string schema_help();
};

}  // namespace rnc
