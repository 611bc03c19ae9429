#include "rnc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "rnc/errors.hpp"

namespace rnc {

using nlohmann::json;

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-s, s);
  std::vector<double> v(shape_size(shape));
  for (auto& e : v) e = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

std::string block_name(std::size_t i, const std::string& leaf) {
  return "encoder.block" + std::to_string(i) + "." + leaf;
}

const std::string kClassifierW = "encoder.classifier.w";
const std::string kClassifierB = "encoder.classifier.b";

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void EncoderConfig::validate() const {
  if (image_side <= 0 || input_side <= 0 || input_side > image_side) {
    throw ConfigError("encoder input side must be positive and at most the image side");
  }
  if (channels.empty()) throw ConfigError("encoder needs at least one block");
  for (int c : channels) {
    if (c <= 0) throw ConfigError("encoder channel counts must be positive");
  }
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("encoder kernel must be odd and positive");
  if ((input_side >> (channels.size() - 1)) < 1) {
    throw ConfigError("input side " + std::to_string(input_side) + " too small for " +
                      std::to_string(channels.size()) + " pooled blocks");
  }
}

json EncoderConfig::to_json() const {
  return {{"image_side", image_side}, {"input_side", input_side}, {"channels", channels},
          {"kernel", kernel},         {"batch_norm", batch_norm}, {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.image_side = j.value("image_side", c.image_side);
  c.input_side = j.value("input_side", c.input_side);
  c.channels = j.value("channels", c.channels);
  c.kernel = j.value("kernel", c.kernel);
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

EncoderModel::EncoderModel(EncoderConfig config, std::vector<std::string> labels, int label_iteration)
    : config_(std::move(config)), init_rng_(config_.seed) {
  config_.validate();
  const auto k = static_cast<std::size_t>(config_.kernel);
  std::size_t in = 1;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const auto c = static_cast<std::size_t>(config_.channels[i]);
    params_.add(block_name(i, "conv0.w"), uniform_init({c, in, k, k}, in * k * k, init_rng_));
    if (config_.batch_norm) {
      auto bn = BatchNormState::make(c);
      params_.add(block_name(i, "bn.gamma"), bn.gamma);
      params_.add(block_name(i, "bn.beta"), bn.beta);
      params_.add(block_name(i, "bn.running_mean"), bn.running_mean, false);
      params_.add(block_name(i, "bn.running_var"), bn.running_var, false);
    } else {
      params_.add(block_name(i, "conv0.b"), Tensor::zeros({c}));
    }
    params_.add(block_name(i, "conv1.w"), uniform_init({c, c, 1, 1}, c, init_rng_));
    params_.add(block_name(i, "conv1.b"), Tensor::zeros({c}));
    params_.add(block_name(i, "conv2.w"), uniform_init({c, c, 1, 1}, c, init_rng_));
    params_.add(block_name(i, "conv2.b"), Tensor::zeros({c}));
    in = c;
  }
  bind_batch_norm();
  reset_classifier(std::move(labels), label_iteration);
}

void EncoderModel::bind_batch_norm() {
  bn_.clear();
  if (!config_.batch_norm) return;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    BatchNormState s;
    s.gamma = params_.get(block_name(i, "bn.gamma")).tensor;
    s.beta = params_.get(block_name(i, "bn.beta")).tensor;
    s.running_mean = params_.get(block_name(i, "bn.running_mean")).tensor;
    s.running_var = params_.get(block_name(i, "bn.running_var")).tensor;
    bn_.push_back(s);
  }
}

void EncoderModel::reset_classifier(std::vector<std::string> labels, int label_iteration) {
  if (labels.empty()) throw UsageError("encoder needs at least one class");
  labels_ = std::move(labels);
  label_iteration_ = label_iteration;
  if (params_.contains(kClassifierW)) params_.remove(kClassifierW);
  if (params_.contains(kClassifierB)) params_.remove(kClassifierB);
  // Seeded by iteration so the classifier does not depend on training history.
  Rng rng(config_.seed * 1000003ULL + 17ULL * static_cast<std::uint64_t>(label_iteration) + 1);
  const auto d = static_cast<std::size_t>(config_.embed_dim());
  params_.add(kClassifierW, uniform_init({d, labels_.size()}, d, rng));
  params_.add(kClassifierB, Tensor::zeros({labels_.size()}));
}

Tensor EncoderModel::embed(const Tensor& x, Mode mode) {
  const auto side = static_cast<std::size_t>(config_.input_side);
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != side || x.dim(3) != side) {
    throw ShapeError("encoder: expected input [N,1," + std::to_string(side) + "," +
                     std::to_string(side) + "], got " + shape_str(x.shape()));
  }
  const auto pad = static_cast<std::size_t>(config_.kernel / 2);
  Tensor h = x;
  const std::size_t blocks = config_.channels.size();
  for (std::size_t i = 0; i < blocks; ++i) {
    if (config_.batch_norm) {
      h = ops::conv2d(h, params_.get(block_name(i, "conv0.w")).tensor, Tensor(), 1, pad);
      h = ops::batch_norm(h, bn_[i], mode);
    } else {
      h = ops::conv2d(h, params_.get(block_name(i, "conv0.w")).tensor,
                      params_.get(block_name(i, "conv0.b")).tensor, 1, pad);
    }
    h = ops::relu(h);
    h = ops::relu(ops::conv2d(h, params_.get(block_name(i, "conv1.w")).tensor,
                              params_.get(block_name(i, "conv1.b")).tensor, 1, 0));
    h = ops::relu(ops::conv2d(h, params_.get(block_name(i, "conv2.w")).tensor,
                              params_.get(block_name(i, "conv2.b")).tensor, 1, 0));
    h = i + 1 < blocks ? ops::avg_pool2d(h, 2, 2) : ops::global_avg_pool(h);
  }
  return h;
}

Tensor EncoderModel::logits(const Tensor& embedding) {
  return ops::add_bias(ops::matmul(embedding, params_.get(kClassifierW).tensor),
                       params_.get(kClassifierB).tensor);
}

Tensor EncoderModel::prepare(const Image& pixels) const {
  if (pixels.width == config_.input_side && pixels.height == config_.input_side) {
    return images_to_tensor({pixels});
  }
  if (pixels.width == config_.image_side && pixels.height == config_.image_side) {
    return images_to_tensor({inference_view(pixels, config_.crop())});
  }
  throw ShapeError("encoder: image " + std::to_string(pixels.width) + "x" +
                   std::to_string(pixels.height) + " matches neither the image side " +
                   std::to_string(config_.image_side) + " nor the input side " +
                   std::to_string(config_.input_side));
}

std::vector<double> EncoderModel::encode(const Image& pixels) {
  NoGradGuard guard;
  auto e = embed(prepare(pixels), Mode::eval);
  return {e.values().begin(), e.values().end()};
}

std::pair<int, std::vector<double>> EncoderModel::classify(const Image& pixels) {
  NoGradGuard guard;
  auto l = logits(embed(prepare(pixels), Mode::eval));
  auto p = softmax(l.values());
  return {argmax(l.values()), p};
}

void EncoderModel::infer(const std::vector<const Image*>& images,
                         std::vector<std::vector<double>>* embeddings,
                         std::vector<std::vector<double>>* logit_rows) {
  NoGradGuard guard;
  if (embeddings) embeddings->clear();
  if (logit_rows) logit_rows->clear();
  constexpr std::size_t kChunk = 64;
  const auto d = static_cast<std::size_t>(config_.embed_dim());
  const auto k = labels_.size();
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t end = std::min(images.size(), begin + kChunk);
    std::vector<Image> views;
    for (std::size_t i = begin; i < end; ++i) {
      const Image& img = *images[i];
      if (img.width == config_.input_side && img.height == config_.input_side) {
        views.push_back(img);
      } else if (img.width == config_.image_side && img.height == config_.image_side) {
        views.push_back(inference_view(img, config_.crop()));
      } else {
        throw ShapeError("encoder: image size does not match the configured sides");
      }
    }
    auto e = embed(images_to_tensor(views), Mode::eval);
    if (embeddings) {
      for (std::size_t r = 0; r < views.size(); ++r) {
        embeddings->emplace_back(e.values().begin() + static_cast<std::ptrdiff_t>(r * d),
                                 e.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
      }
    }
    if (logit_rows) {
      auto l = logits(e);
      for (std::size_t r = 0; r < views.size(); ++r) {
        logit_rows->emplace_back(l.values().begin() + static_cast<std::ptrdiff_t>(r * k),
                                 l.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
      }
    }
  }
}

void EncoderModel::save(const std::filesystem::path& stem, json extra) const {
  extra["kind"] = "encoder";
  extra["config"] = config_.to_json();
  extra["labels"] = labels_;
  extra["label_iteration"] = label_iteration_;
  save_checkpoint(stem, params_, extra);
}

EncoderModel EncoderModel::load(const std::filesystem::path& stem) {
  auto ckpt = load_checkpoint(stem);
  if (ckpt.meta.value("kind", std::string{}) != "encoder") {
    throw DataError(manifest_path(stem).string() + " is not an encoder checkpoint");
  }
  EncoderModel model(EncoderConfig::from_json(ckpt.meta.at("config")),
                     ckpt.meta.at("labels").get<std::vector<std::string>>(),
                     ckpt.meta.at("label_iteration").get<int>());
  model.params_.assign_values(ckpt.params);
  return model;
}

// ---------------------------------------------------------------------------

std::string TrainReport::csv() const {
  std::ostringstream os;
  os << "epoch,train_acc,val_acc,loss\n";
  os.precision(17);
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.train_accuracy << ',' << e.val_accuracy << ',' << e.loss << '\n';
  }
  return os.str();
}

double accuracy(EncoderModel& model, const Corpus& corpus, const LabelSpace& space, Split split) {
  std::vector<const Image*> images;
  std::vector<int> truth;
  for (const auto& ex : corpus) {
    if (ex.split != split) continue;
    auto cls = space.class_of(ex.id);
    if (!cls) continue;
    images.push_back(&ex.pixels);
    truth.push_back(*cls);
  }
  if (images.empty()) return 0.0;
  std::vector<std::vector<double>> logits;
  model.infer(images, nullptr, &logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += argmax(logits[i]) == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

TrainReport train_encoder(EncoderModel& model, const Corpus& corpus, const LabelSpace& space,
                          const EncoderTrainConfig& config) {
  if (config.epochs < 1) throw ConfigError("encoder epochs must be at least 1");
  config.schedule.validate();
  if (space.labels != model.labels()) {
    throw UsageError("encoder classifier does not match the label space; call fine_tune first");
  }
  BatchSpec spec = config.batch;
  spec.crop_size = model.config().crop();
  BatchSampler sampler(corpus, space, spec);
  Optimizer opt(config.optimizer);
  const bool has_val = !select(corpus, Split::val).empty();

  TrainReport report;
  ParameterSet best;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < sampler.batches_per_epoch(); ++b) {
      auto batch = sampler.next_batch();
      if (batch.size() == 0) continue;
      try {
        auto x = images_to_tensor(batch.images);
        auto ce = ops::softmax_cross_entropy(model.logits(model.embed(x, Mode::train)), batch.classes);
        auto loss = ops::affine(ce, 1.0 / static_cast<double>(batch.size()), 0.0);
        backward(loss);
        opt.step(model.params(), config.schedule, epoch, config.epochs);
        loss_sum += ce.item();
        seen += batch.size();
      } catch (const NumericError& e) {
        auto dir = config.dump_dir.empty() ? std::filesystem::temp_directory_path() / "rnc_dump"
                                           : config.dump_dir;
        model.save(dir / "encoder_diverged", {{"epoch", epoch}, {"batch", b}, {"error", e.what()}});
        throw NumericError("encoder training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + " (" + e.what() + "); state dumped to " +
                           (dir / "encoder_diverged").string());
      }
    }
    EpochReport r;
    r.epoch = epoch;
    r.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    r.train_accuracy = accuracy(model, corpus, space, Split::train);
    r.val_accuracy = has_val ? accuracy(model, corpus, space, Split::val) : 0.0;
    report.epochs.push_back(r);
    spdlog::debug("encoder epoch {} loss {:.4f} train {:.4f} val {:.4f}", epoch, r.loss,
                  r.train_accuracy, r.val_accuracy);
    if (report.best_epoch < 0 || r.val_accuracy >= report.best_val_accuracy) {
      report.best_epoch = epoch;
      report.best_val_accuracy = r.val_accuracy;
      if (config.restore_best) best = model.params().clone();
    }
    if (config.stop_at_perfect_train && r.train_accuracy == 1.0) break;
  }
  if (config.restore_best && best.size() == model.params().size()) model.params().assign_values(best);
  return report;
}

void fine_tune(EncoderModel& model, const LabelSpace& space, double lr_scale) {
  if (lr_scale < 0) throw ConfigError("fine-tune lr_scale must be non-negative");
  if (space.iteration != model.label_iteration() && space.iteration != model.label_iteration() + 1) {
    throw UsageError("cannot fine-tune an iteration-" + std::to_string(model.label_iteration()) +
                     " encoder onto an iteration-" + std::to_string(space.iteration) + " label space");
  }
  if (space.labels != model.labels()) {
    model.reset_classifier(space.labels, space.iteration);
  } else {
    model.set_label_iteration(space.iteration);
  }
  for (auto& p : model.params().items()) {
    p.lr_scale = p.name.rfind("encoder.classifier.", 0) == 0 ? 1.0 : lr_scale;
  }
}

}  // namespace rnc
