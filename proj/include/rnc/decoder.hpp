#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rnc/dataset.hpp"
#include "rnc/encoder.hpp"
#include "rnc/optim.hpp"

namespace rnc {

enum class CellKind { lstm, gru };

CellKind parse_cell_kind(const std::string& name);
std::string to_string(CellKind kind);

/// Unroll horizon: annotations are padded with EOS to this many steps.
inline constexpr int kHorizon = 5;

/// Token <-> index map. Index 0 is the end-of-sequence token.
class Vocab {
 public:
  static constexpr const char* kEos = "<eos>";

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);
  /// EOS plus the sorted distinct tokens of every non-test example.
  static Vocab build(const Corpus& corpus);

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  int index(const std::string& token) const;
  const std::string& token(int index) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

/// Teacher-forcing view of one annotation: inputs x_1..x_5 are the tokens
/// padded with EOS, targets are the inputs shifted by one (so the step after
/// the last real token predicts EOS). `length` counts real tokens.
struct SequenceExample {
  std::string id;
  std::vector<int> inputs;
  std::vector<int> targets;
  int length = 0;
};

/// Throws DataError for tokens missing from the vocabulary or annotations
/// longer than the horizon.
SequenceExample make_sequence(const AnnotatedImage& example, const Vocab& vocab);

struct LstmParams {
  Tensor W_i, U_i, b_i;
  Tensor W_f, U_f, b_f;
  Tensor W_o, U_o, b_o;
  Tensor W_h, U_h, b_h;
};

struct GruParams {
  Tensor W_z, U_z, b_z;
  Tensor W_r, U_r, b_r;
  Tensor W_h, U_h, b_h;
};

/// Intermediate values of one cell step; gates absent for the other cell kind.
struct CellTrace {
  Tensor i, f, o;
  Tensor z, r;
  Tensor candidate;
  Tensor h;
  Tensor m;
};

struct LstmStep {
  Tensor h, m;
  CellTrace trace;
};

/// i,f,o = sigmoid(x W + m_prev U + b); candidate = tanh(x W_h + m_prev U_h + b_h);
/// h = f * h_prev + i * candidate; m = o * tanh(h). Row-vector convention:
/// x[B,in], h_prev and m_prev [B,D].
LstmStep lstm_step(const LstmParams& p, const Tensor& x, const Tensor& h_prev, const Tensor& m_prev);

/// z,r = sigmoid(x W + h_prev U + b); candidate = tanh(x W_h + r * (h_prev U_h) + b_h);
/// h = z * h_prev + (1 - z) * candidate.
CellTrace gru_step(const GruParams& p, const Tensor& x, const Tensor& h_prev);

struct DecoderConfig {
  CellKind cell = CellKind::lstm;
  int layers = 2;
  int state_dim = 64;
  /// Keep probability of the dropout between stacked layers; 1 disables it.
  double keep_prob = 1.0;
  bool loss_on_padding = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);
};

class DecoderModel {
 public:
  DecoderModel(DecoderConfig config, Vocab vocab);

  struct State {
    std::vector<Tensor> h;  // per layer
    std::vector<Tensor> m;  // LSTM outputs per layer
  };

  /// Layer 0 starts at CNN(I); upper layers and LSTM outputs start at zero.
  State initial_state(const Tensor& cnn) const;
  /// One step over a batch of input tokens; returns logits [B,V]. When
  /// `traces` is given, one CellTrace per layer is appended.
  Tensor step(std::span<const int> tokens, State& state, Mode mode, Rng* rng,
              std::vector<CellTrace>* traces = nullptr);

  /// Summed per-step cross-entropy over the batch, per position weights
  /// following `loss_on_padding`.
  Tensor sequence_loss(const Tensor& cnn, const std::vector<SequenceExample>& batch, Mode mode,
                       Rng* rng, std::size_t* correct = nullptr, std::size_t* counted = nullptr);

  LstmParams lstm_layer(int layer) const;
  GruParams gru_layer(int layer) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const DecoderConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }

  void save(const std::filesystem::path& stem, nlohmann::json extra = nlohmann::json::object()) const;
  static DecoderModel load(const std::filesystem::path& stem);

 private:
  const Tensor& p(const std::string& name) const { return params_.get(name).tensor; }

  DecoderConfig config_;
  Vocab vocab_;
  ParameterSet params_;
};

struct DecoderTrainConfig {
  int epochs = 50;
  std::size_t batch_size = 50;
  LrSchedule schedule{2e-3, ScheduleKind::exponential, 1.0 / 3.0, 0.5, 0.97};
  OptimizerConfig optimizer{OptimizerKind::rmsprop, 0.0, 0.95, 1e-8};
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  /// Stop once every trained position is predicted correctly.
  bool stop_at_perfect = false;

  /// Footnote defaults per cell kind.
  static DecoderTrainConfig defaults(CellKind cell);
};

struct DecoderEpoch {
  int epoch = 0;
  /// Mean summed sequence loss per example.
  double loss = 0.0;
  double token_accuracy = 0.0;
};

struct DecoderReport {
  std::vector<DecoderEpoch> epochs;
  std::size_t sequences = 0;
  std::size_t excluded = 0;
  std::string csv() const;
};

/// Trains on the training-split examples assigned in `space` (iteration 0:
/// the mined subset). The encoder is frozen; its inference embeddings
/// initialise the state.
DecoderReport train_decoder(DecoderModel& decoder, EncoderModel& encoder, const Corpus& corpus,
                            const LabelSpace& space, const DecoderTrainConfig& config);

/// Teacher-forced per-token accuracy over the given examples.
double token_accuracy(DecoderModel& decoder, EncoderModel& encoder,
                      const std::vector<const AnnotatedImage*>& examples);

struct Prediction {
  std::string id;
  Split split = Split::none;
  std::string predicted_label;
  std::vector<std::string> tokens;
  std::vector<std::string> reference;
};

/// Greedy decoding seeded with the first word of the predicted label.
/// The seed word is part of the returned sequence; EOS is not.
std::vector<Prediction> generate(DecoderModel& decoder, EncoderModel& encoder,
                                 const std::vector<const AnnotatedImage*>& examples,
                                 int max_len = kHorizon);

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

}  // namespace rnc
