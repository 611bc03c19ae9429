#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "rnc/dataset.hpp"
#include "rnc/ops.hpp"

namespace rnc {

struct BatchSpec {
  std::size_t batch_size = 50;
  /// Largest share of a batch that normal cases may fill.
  double normal_cap = 1.0 / 3.0;
  /// Side of random training crops; absent means full images.
  std::optional<int> crop_size;
  std::uint64_t seed = 0;
  /// Balanced batches with excess normals dropped each epoch. When off,
  /// every training image is visited `augment_multiplier` times per epoch
  /// in random order, keeping the corpus class mix.
  bool data_dropout = true;
  /// Minimum appearances of each diseased image per epoch.
  int augment_multiplier = 4;

  void validate(int side) const;
};

struct Batch {
  std::vector<const AnnotatedImage*> examples;
  std::vector<int> classes;
  /// Cropped (or full) images fed to the encoder.
  std::vector<Image> images;
  /// Top-left crop offsets (x, y); (0, 0) without cropping.
  std::vector<std::pair<int, int>> offsets;
  std::size_t size() const { return examples.size(); }
};

/// Deterministic iterator over training batches. Diseased classes appear in
/// counts that differ by at most one within every batch; normals are drawn
/// without replacement from a per-epoch shuffle and capped at
/// floor(normal_cap * batch_size).
class BatchSampler {
 public:
  BatchSampler(const Corpus& corpus, const LabelSpace& space, BatchSpec spec, Split split = Split::train);

  Batch next_batch();
  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  /// Epoch of the batch that next_batch() will return.
  int epoch() const { return epoch_; }
  int diseased_classes() const { return static_cast<int>(diseased_.size()); }
  std::size_t normal_slots() const { return normal_slots_; }

 private:
  void start_epoch();
  const AnnotatedImage* draw_diseased(std::size_t k);
  void emit(Batch& b, const AnnotatedImage* ex, int cls);

  BatchSpec spec_;
  int side_ = 0;
  Rng rng_;
  std::optional<int> normal_class_;
  std::vector<const AnnotatedImage*> normals_;
  std::vector<int> diseased_;  // class index of each diseased slot group
  std::vector<std::vector<const AnnotatedImage*>> by_class_;
  std::vector<std::deque<const AnnotatedImage*>> queues_;
  std::vector<std::pair<const AnnotatedImage*, int>> all_;

  std::size_t normal_slots_ = 0;
  std::size_t batches_per_epoch_ = 0;
  std::size_t cursor_ = 0;
  int epoch_ = -1;
  std::deque<const AnnotatedImage*> normal_pool_;
  std::vector<std::pair<const AnnotatedImage*, int>> flat_;
};

/// Stacks images into a [N,1,H,W] tensor scaled to [0,1].
Tensor images_to_tensor(const std::vector<Image>& images);
/// Centre crop when `crop_size` is set, else the image itself.
Image inference_view(const Image& image, std::optional<int> crop_size);

}  // namespace rnc
