#include "rnc/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "rnc/errors.hpp"

namespace rnc {

void BatchSpec::validate(int side) const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(normal_cap >= 0.0 && normal_cap <= 1.0)) throw ConfigError("normal_cap must be in [0,1]");
  if (crop_size && (*crop_size <= 0 || *crop_size >= side)) {
    throw ConfigError("crop size must be positive and smaller than the image side " +
                      std::to_string(side));
  }
  if (augment_multiplier < 1) throw ConfigError("augment_multiplier must be at least 1");
}

BatchSampler::BatchSampler(const Corpus& corpus, const LabelSpace& space, BatchSpec spec, Split split)
    : spec_(spec), rng_(spec.seed) {
  normal_class_ = space.normal_index();
  by_class_.resize(space.size());
  for (const auto& ex : corpus) {
    if (ex.split != split) continue;
    auto cls = space.class_of(ex.id);
    if (!cls) continue;
    if (side_ == 0) side_ = ex.pixels.width;
    all_.emplace_back(&ex, *cls);
    if (normal_class_ && *cls == *normal_class_) {
      normals_.push_back(&ex);
    } else {
      by_class_[static_cast<std::size_t>(*cls)].push_back(&ex);
    }
  }
  if (all_.empty()) throw DataError("no labeled examples in the " + to_string(split) + " split");
  spec_.validate(side_);
  for (std::size_t c = 0; c < by_class_.size(); ++c) {
    if (!by_class_[c].empty()) diseased_.push_back(static_cast<int>(c));
  }
  const std::size_t B = spec_.batch_size, K = diseased_.size();

  if (!spec_.data_dropout) {
    batches_per_epoch_ = (all_.size() * static_cast<std::size_t>(spec_.augment_multiplier) + B - 1) / B;
    return;
  }
  if (B < K) {
    throw DataError("batch_size " + std::to_string(B) + " is smaller than the " + std::to_string(K) +
                    " diseased classes");
  }
  if (K == 0) {
    normal_slots_ = B;
    batches_per_epoch_ = (normals_.size() + B - 1) / B;
    return;
  }
  normal_slots_ = normals_.empty() ? 0 : static_cast<std::size_t>(std::floor(spec_.normal_cap * B));
  normal_slots_ = std::min(normal_slots_, B - K);
  const std::size_t base = (B - normal_slots_) / K;
  std::size_t m = 1;
  for (int c : diseased_) {
    const std::size_t need = by_class_[static_cast<std::size_t>(c)].size() *
                             static_cast<std::size_t>(spec_.augment_multiplier);
    m = std::max(m, (need + base - 1) / base);
  }
  batches_per_epoch_ = m;
  queues_.resize(by_class_.size());
}

void BatchSampler::start_epoch() {
  ++epoch_;
  cursor_ = 0;
  if (!spec_.data_dropout) {
    flat_.clear();
    for (int r = 0; r < spec_.augment_multiplier; ++r) flat_.insert(flat_.end(), all_.begin(), all_.end());
    std::shuffle(flat_.begin(), flat_.end(), rng_);
    return;
  }
  // Fresh class queues each epoch so every diseased image gets its full
  // share of augmented variants within the epoch.
  for (auto& q : queues_) q.clear();
  std::vector<const AnnotatedImage*> pool = normals_;
  std::shuffle(pool.begin(), pool.end(), rng_);
  normal_pool_.assign(pool.begin(), pool.end());
}

const AnnotatedImage* BatchSampler::draw_diseased(std::size_t c) {
  auto& q = queues_[c];
  if (q.empty()) {
    auto refill = by_class_[c];
    std::shuffle(refill.begin(), refill.end(), rng_);
    q.assign(refill.begin(), refill.end());
  }
  auto* ex = q.front();
  q.pop_front();
  return ex;
}

void BatchSampler::emit(Batch& b, const AnnotatedImage* ex, int cls) {
  b.examples.push_back(ex);
  b.classes.push_back(cls);
  if (spec_.crop_size) {
    const int c = *spec_.crop_size;
    std::uniform_int_distribution<int> off(0, ex->pixels.width - c);
    const int x = off(rng_), y = off(rng_);
    b.images.push_back(crop(ex->pixels, x, y, c, c));
    b.offsets.emplace_back(x, y);
  } else {
    b.images.push_back(ex->pixels);
    b.offsets.emplace_back(0, 0);
  }
}

Batch BatchSampler::next_batch() {
  if (epoch_ < 0 || cursor_ >= batches_per_epoch_) start_epoch();
  Batch b;
  const std::size_t B = spec_.batch_size;
  if (!spec_.data_dropout) {
    const std::size_t begin = cursor_ * B, end = std::min(flat_.size(), begin + B);
    for (std::size_t i = begin; i < end; ++i) emit(b, flat_[i].first, flat_[i].second);
    ++cursor_;
    return b;
  }
  const std::size_t K = diseased_.size();
  for (std::size_t i = 0; i < normal_slots_ && !normal_pool_.empty(); ++i) {
    emit(b, normal_pool_.front(), *normal_class_);
    normal_pool_.pop_front();
  }
  if (K > 0) {
    const std::size_t D = B - normal_slots_, base = D / K, extra = D % K;
    // The classes receiving one extra slot rotate from batch to batch.
    const std::size_t first_extra = (cursor_ * extra) % K;
    for (std::size_t j = 0; j < K; ++j) {
      const bool plus = (j + K - first_extra) % K < extra;
      const std::size_t n = base + (plus ? 1 : 0);
      const auto c = static_cast<std::size_t>(diseased_[j]);
      for (std::size_t r = 0; r < n; ++r) emit(b, draw_diseased(c), diseased_[j]);
    }
  }
  ++cursor_;
  return b;
}

Tensor images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const auto h = static_cast<std::size_t>(images.front().height);
  const auto w = static_cast<std::size_t>(images.front().width);
  std::vector<double> v;
  v.reserve(images.size() * h * w);
  for (const auto& img : images) {
    if (static_cast<std::size_t>(img.height) != h || static_cast<std::size_t>(img.width) != w) {
      throw ShapeError("images_to_tensor: mixed image sizes in one batch");
    }
    for (auto p : img.pixels) v.push_back(p / 255.0);
  }
  return Tensor::from({images.size(), 1, h, w}, std::move(v));
}

Image inference_view(const Image& image, std::optional<int> crop_size) {
  if (!crop_size) return image;
  return center_crop(image, *crop_size);
}

}  // namespace rnc
