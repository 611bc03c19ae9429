#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rnc/checkpoint.hpp"
#include "rnc/dataset.hpp"
#include "rnc/ops.hpp"
#include "rnc/optim.hpp"
#include "rnc/sampler.hpp"

namespace rnc {

/// NIN-style trunk. Block i is conv(k x k) -> [BN] -> ReLU -> 1x1 conv ->
/// ReLU -> 1x1 conv -> ReLU, followed by 2x2 average pooling, except the
/// last block which ends in global average pooling. The last block's width
/// is the embedding size D.
struct EncoderConfig {
  /// Side of the stored images.
  int image_side = 32;
  /// Side of the network input; smaller than image_side when training on crops.
  int input_side = 28;
  std::vector<int> channels = {16, 32, 64};
  int kernel = 3;
  bool batch_norm = true;
  std::uint64_t seed = 0;

  int embed_dim() const { return channels.back(); }
  std::optional<int> crop() const {
    return input_side < image_side ? std::optional<int>(input_side) : std::nullopt;
  }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

class EncoderModel {
 public:
  EncoderModel(EncoderConfig config, std::vector<std::string> labels, int label_iteration);

  /// Trunk output CNN(I): x[N,1,H,W] -> [N,D].
  Tensor embed(const Tensor& x, Mode mode);
  /// Classifier applied to embeddings: [N,D] -> [N,K].
  Tensor logits(const Tensor& embedding);

  /// Inference-mode embedding of one image. Accepts the stored side (centre
  /// cropped when training used crops) or the network input side.
  std::vector<double> encode(const Image& pixels);
  /// Arg-max class (lowest index on ties) and softmax probabilities.
  std::pair<int, std::vector<double>> classify(const Image& pixels);
  /// Inference-mode embeddings and logits of many images, in chunks.
  void infer(const std::vector<const Image*>& images, std::vector<std::vector<double>>* embeddings,
             std::vector<std::vector<double>>* logits);

  /// Replaces the classifier with a freshly initialised one over `labels`.
  void reset_classifier(std::vector<std::string> labels, int label_iteration);
  void set_label_iteration(int iteration) { label_iteration_ = iteration; }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const EncoderConfig& config() const { return config_; }
  const std::vector<std::string>& labels() const { return labels_; }
  int label_iteration() const { return label_iteration_; }
  std::size_t num_classes() const { return labels_.size(); }

  void save(const std::filesystem::path& stem, nlohmann::json extra = nlohmann::json::object()) const;
  static EncoderModel load(const std::filesystem::path& stem);

 private:
  void bind_batch_norm();
  Tensor prepare(const Image& pixels) const;

  EncoderConfig config_;
  std::vector<std::string> labels_;
  int label_iteration_ = 0;
  ParameterSet params_;
  std::vector<BatchNormState> bn_;
  Rng init_rng_;
};

struct EncoderTrainConfig {
  int epochs = 60;
  BatchSpec batch;
  LrSchedule schedule{0.05, ScheduleKind::step_down, 1.0 / 3.0, 0.5, 1.0};
  OptimizerConfig optimizer{OptimizerKind::sgd, 0.9, 0.95, 1e-8};
  /// Stop once the training split is classified perfectly.
  bool stop_at_perfect_train = true;
  /// Reload the parameters of the best validation epoch when done.
  bool restore_best = true;
  /// Where a state dump goes when the loss diverges; empty uses the temp dir.
  std::filesystem::path dump_dir;
};

struct EpochReport {
  int epoch = 0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double loss = 0.0;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;

  /// `epoch,train_acc,val_acc,loss` rows.
  std::string csv() const;
};

/// Fraction of examples in `split` whose predicted class equals their label.
double accuracy(EncoderModel& model, const Corpus& corpus, const LabelSpace& space, Split split);

/// Cross-entropy training with balanced / data-dropout mini-batches.
/// Throws NumericError after writing a state dump when the loss diverges.
TrainReport train_encoder(EncoderModel& model, const Corpus& corpus, const LabelSpace& space,
                          const EncoderTrainConfig& config);

/// Prepares the model for the next label space: the classifier is replaced
/// (unless the labels are unchanged) and every other parameter gets
/// `lr_scale`. Throws UsageError when `space` is not the model's current
/// or next iteration.
void fine_tune(EncoderModel& model, const LabelSpace& space, double lr_scale = 0.1);

}  // namespace rnc
