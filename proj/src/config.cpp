#include "rnc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "rnc/checkpoint.hpp"
#include "rnc/errors.hpp"

namespace rnc {

using nlohmann::json;

namespace {

template <typename T>
void put(json& j, const char* key, const T& v) {
  j[key] = v;
}
template <typename T>
void put(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}
template <typename T>
void take(const json& j, const char* key, T& v) {
  if (j.contains(key)) j.at(key).get_to(v);
}
template <typename T>
void take(const json& j, const char* key, std::optional<T>& v) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    v.reset();
  } else {
    v = j.at(key).get<T>();
  }
}
void take(const json& j, const char* key, json& v) {
  if (j.contains(key)) v = j.at(key);
}

}  // namespace

// name, description; "reference" marks values taken from the published setup,
// "desk" marks choices made for the small synthetic corpus.
#define RNC_CONFIG_FIELDS(X)                                                                           \
  X(seed, "global seed; every stage derives its own seed from it")                                    \
  X(corpus, "OpenI-style corpus directory read by `ingest` (index.jsonl + PGM images)")               \
  X(synth_count, "synthetic corpus size (desk)")                                                      \
  X(synth_normal_prior, "prior weight of the normal class (desk)")                                    \
  X(synth_noise_sigma, "pixel noise standard deviation (desk)")                                       \
  X(synth_bare_fraction, "share of diseased examples annotated with the disease name only (desk)")   \
  X(synth_severity_weights, "weights of no/small/large/multiple severity (desk)")                     \
  X(synth_archetypes, "disease archetypes; null uses the built-in eight (desk)")                      \
  X(image_side, "stored image side S (reference 256, desk 32)")                                        \
  X(crop_side, "random training crop side, 0 for none (reference 224, desk 28)")                       \
  X(split_train, "training share (reference 0.8)")                                                     \
  X(split_val, "validation share (reference 0.1)")                                                     \
  X(split_test, "test share (reference 0.1)")                                                          \
  X(split_min_eval, "minimum validation and test cases per stratum (reference 10, desk 2)")            \
  X(mine_min_support, "minimum cases for a mined annotation pattern (reference 30, desk 12)")          \
  X(cnn_channels, "width of each encoder block; the last is the embedding size D (desk D=64)")        \
  X(cnn_kernel, "first convolution kernel size per block")                                             \
  X(cnn_batch_norm, "batch normalization after each block's first convolution")                        \
  X(cnn_epochs, "encoder training epochs (reference 100 to 200)")                                      \
  X(cnn_batch, "encoder mini-batch size (reference 50)")                                               \
  X(cnn_lr, "encoder base learning rate (desk)")                                                       \
  X(cnn_schedule, "constant | step_down | exponential (reference step_down)")                         \
  X(cnn_step_fraction, "share of the epochs per step-down (reference 1/3)")                            \
  X(cnn_step_multiplier, "rate multiplier per step-down (reference 0.5)")                              \
  X(cnn_momentum, "SGD momentum (desk)")                                                               \
  X(cnn_normal_cap, "largest share of normal cases per batch (desk 1/3)")                              \
  X(cnn_data_dropout, "balanced batches that skip excess normal cases")                               \
  X(cnn_augment, "minimum crops of each diseased image per epoch (reference 4)")                       \
  X(cnn_stop_at_perfect, "stop once the training split is classified perfectly")                      \
  X(finetune_lr_scale, "learning-rate factor of the trunk when fine-tuning (reference 0.1)")           \
  X(finetune_epochs, "encoder epochs in the second iteration (desk)")                                  \
  X(rnn_cell, "lstm | gru")                                                                            \
  X(rnn_layers, "stacked recurrent layers (reference 2)")                                              \
  X(rnn_epochs, "decoder training epochs (desk)")                                                      \
  X(rnn_batch, "decoder mini-batch size (reference 50)")                                               \
  X(rnn_lr, "decoder learning rate; null uses the cell default (reference lstm 2e-3, gru 1e-4)")      \
  X(rnn_lr_decay, "per-epoch learning-rate decay; null uses the cell default (reference 0.97 / 0.99)") \
  X(rnn_decay_rate, "RMSprop accumulator decay; null uses the cell default (reference 0.95 / 0.99)")   \
  X(rnn_keep_prob, "keep probability between layers; null uses the cell default (reference gru 0.9)") \
  X(rnn_clip, "global gradient-norm clip for the decoder (desk)")                                      \
  X(rnn_loss_on_padding, "train the EOS padding positions")                                            \
  X(max_len, "longest generated annotation including the seed word (reference 5)")                    \
  X(cluster_target, "cases per sub-group (reference 50)")                                              \
  X(cluster_scale, "multiplies cluster_target on small corpora (desk 0.4)")                           \
  X(cluster_min_fraction, "smallest sub-group as a share of the scaled target (desk 0.5)")             \
  X(cluster_max_iter, "Lloyd iteration cap (desk 100)")                                                \
  X(bleu_include_seed, "score the seed word as part of the candidate")

json RunConfig::to_json() const {
  json j = json::object();
#define X(name, help) put(j, #name, name);
  RNC_CONFIG_FIELDS(X)
#undef X
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
#define X(name, help) #name,
      RNC_CONFIG_FIELDS(X)
#undef X
  };
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig c;
  try {
#define X(name, help) take(j, #name, c.name);
    RNC_CONFIG_FIELDS(X)
#undef X
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::hash() const {
  const auto s = to_json().dump();
  return hex64(fnv1a(s.data(), s.size()));
}

std::string RunConfig::schema_help() {
  std::ostringstream os;
  const RunConfig d;
  const auto j = d.to_json();
#define X(name, help) os << "  " << #name << " = " << j.at(#name).dump() << "\n      " << help << "\n";
  RNC_CONFIG_FIELDS(X)
#undef X
  return os.str();
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (image_side < 4) fail("image_side must be at least 4");
  if (crop_side < 0 || crop_side >= image_side) fail("crop_side must be 0 or smaller than image_side");
  if (split_train <= 0 || split_val < 0 || split_test < 0 ||
      std::abs(split_train + split_val + split_test - 1.0) > 1e-9) {
    fail("split fractions must be non-negative and sum to 1");
  }
  if (split_min_eval < 0) fail("split_min_eval must be non-negative");
  if (mine_min_support < 1) fail("mine_min_support must be at least 1");
  if (cnn_epochs < 1 || finetune_epochs < 0 || rnn_epochs < 1) fail("epoch counts must be positive");
  if (cnn_batch < 1 || rnn_batch < 1) fail("batch sizes must be positive");
  if (!(cnn_normal_cap >= 0 && cnn_normal_cap <= 1)) fail("cnn_normal_cap must be in [0,1]");
  if (cnn_augment < 1) fail("cnn_augment must be at least 1");
  if (finetune_lr_scale < 0) fail("finetune_lr_scale must be non-negative");
  if (max_len < 1) fail("max_len must be at least 1");
  if (synth_count < 1) fail("synth_count must be positive");
  synth_spec().validate();
  encoder_config().validate();
  encoder_train_config(0).schedule.validate();
  decoder_config().validate();
  decoder_train_config(0).schedule.validate();
  cluster_config().validate();
}

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s = SynthSpec::standard();
  s.side = image_side;
  s.count = synth_count;
  s.normal_prior = synth_normal_prior;
  s.noise_sigma = synth_noise_sigma;
  s.bare_fraction = synth_bare_fraction;
  s.severity_weights = synth_severity_weights;
  s.seed = seed;
  if (!synth_archetypes.is_null()) {
    json j = s.to_json();
    j["archetypes"] = synth_archetypes;
    s = SynthSpec::from_json(j);
  }
  return s;
}

SplitConfig RunConfig::split_config() const {
  return {split_train, split_val, split_test, split_min_eval, seed + 1};
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig c;
  c.image_side = image_side;
  c.input_side = crop_side > 0 ? crop_side : image_side;
  c.channels = cnn_channels;
  c.kernel = cnn_kernel;
  c.batch_norm = cnn_batch_norm;
  c.seed = seed + 2;
  return c;
}

namespace {

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "step_down") return ScheduleKind::step_down;
  if (s == "exponential") return ScheduleKind::exponential;
  throw ConfigError("unknown schedule '" + s + "'");
}

}  // namespace

EncoderTrainConfig RunConfig::encoder_train_config(int iteration) const {
  EncoderTrainConfig t;
  t.epochs = iteration == 0 ? cnn_epochs : finetune_epochs;
  t.batch.batch_size = cnn_batch;
  t.batch.normal_cap = cnn_normal_cap;
  t.batch.seed = seed + 3 + 100 * static_cast<std::uint64_t>(iteration);
  t.batch.data_dropout = cnn_data_dropout;
  t.batch.augment_multiplier = cnn_augment;
  t.schedule = {cnn_lr, parse_schedule(cnn_schedule), cnn_step_fraction, cnn_step_multiplier, 1.0};
  t.optimizer = {OptimizerKind::sgd, cnn_momentum, 0.95, 1e-8};
  t.stop_at_perfect_train = cnn_stop_at_perfect;
  t.restore_best = true;
  return t;
}

DecoderConfig RunConfig::decoder_config() const {
  DecoderConfig c;
  c.cell = parse_cell_kind(rnn_cell);
  c.layers = rnn_layers;
  c.state_dim = cnn_channels.empty() ? 0 : cnn_channels.back();
  c.keep_prob = rnn_keep_prob.value_or(c.cell == CellKind::gru ? 0.9 : 1.0);
  c.loss_on_padding = rnn_loss_on_padding;
  c.seed = seed + 4;
  return c;
}

DecoderTrainConfig RunConfig::decoder_train_config(int iteration) const {
  auto t = DecoderTrainConfig::defaults(parse_cell_kind(rnn_cell));
  t.epochs = rnn_epochs;
  t.batch_size = rnn_batch;
  if (rnn_lr) t.schedule.base_rate = *rnn_lr;
  if (rnn_lr_decay) t.schedule.decay = *rnn_lr_decay;
  if (rnn_decay_rate) t.optimizer.decay_rate = *rnn_decay_rate;
  t.clip_norm = rnn_clip;
  t.seed = seed + 5 + 100 * static_cast<std::uint64_t>(iteration);
  return t;
}

ClusterConfig RunConfig::cluster_config() const {
  ClusterConfig c;
  c.target_size = cluster_target;
  c.scale = cluster_scale;
  c.min_cluster_fraction = cluster_min_fraction;
  c.max_iter = cluster_max_iter;
  c.seed = seed + 6;
  return c;
}

}  // namespace rnc
