#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "rnc/encoder.hpp"
#include "rnc/errors.hpp"
#include "support/fixtures.hpp"
#include "support/model_checks.hpp"

using namespace rnc;
using namespace rnc::testing;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.image_side = 16;
  cfg.input_side = 16;
  cfg.channels = {4, 8, 8};
  cfg.seed = 2;
  return cfg;
}

bool same_values(const ParameterSet& a, const ParameterSet& b, bool trainable_only, const std::string& skip) {
  for (const auto& p : a.items()) {
    if (trainable_only && !p.trainable) continue;
    if (!skip.empty() && p.name.rfind(skip, 0) == 0) continue;
    const auto& q = b.get(p.name).tensor;
    if (!std::equal(p.tensor.values().begin(), p.tensor.values().end(), q.values().begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("two-block encoder gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    auto r = check_encoder(seed);
    INFO("seed " << seed << " worst at " << r.where);
    CHECK(r.worst < 1e-4);
  }
}

TEST_CASE("embedding length is the last block width") {
  EncoderModel m(tiny_config(), {"a", "b"}, 0);
  auto e = m.encode(Image(16, 16, 40));
  CHECK(e.size() == 8);
  CHECK_THROWS_AS(m.encode(Image(12, 12)), ShapeError);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(m.embed(random_tensor({1, 1, 8, 8}, rng), Mode::eval), ShapeError);
}

TEST_CASE("classify and encode share the trunk") {
  auto corpus = memorization_corpus();
  EncoderModel m(tiny_config(), {"a", "b", "c"}, 0);
  for (const auto& ex : corpus) {
    auto emb = m.encode(ex.pixels);
    auto [cls, probs] = m.classify(ex.pixels);
    NoGradGuard guard;
    auto l = m.logits(Tensor::from({1, emb.size()}, emb));
    auto expect = softmax(l.values());
    CHECK(probs == expect);
    CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
    CHECK(cls == best);
  }
}

TEST_CASE("zero batch-norm scale in the last block makes the embedding image independent") {
  auto cfg = tiny_config();
  EncoderModel m(cfg, {"a"}, 0);
  auto& gamma = m.params().get("encoder.block2.bn.gamma").tensor;
  for (auto& v : gamma.mutable_values()) v = 0.0;
  auto corpus = memorization_corpus();
  auto a = m.encode(corpus[0].pixels);
  auto b = m.encode(corpus[5].pixels);
  auto z = m.encode(Image(16, 16, 0));
  CHECK(a == b);
  CHECK(a == z);
}

TEST_CASE("overfit: memorization corpus is classified perfectly") {
  auto fx = memorized_encoder();
  CHECK(accuracy(*fx.encoder, fx.corpus, fx.space, Split::train) == 1.0);
}

TEST_CASE("fine-tune with lr_scale 0 changes only the classifier") {
  auto fx = memorized_encoder();
  auto before = fx.encoder->params().clone();
  LabelSpace next = fx.space;
  next.iteration = 1;
  next.labels.push_back("extra");
  fine_tune(*fx.encoder, next, 0.0);
  CHECK(fx.encoder->num_classes() == fx.space.size() + 1);
  CHECK(fx.encoder->label_iteration() == 1);
  EncoderTrainConfig tc;
  tc.epochs = 1;
  tc.batch.batch_size = 11;
  tc.stop_at_perfect_train = false;
  tc.restore_best = false;
  train_encoder(*fx.encoder, fx.corpus, next, tc);
  CHECK(same_values(before, fx.encoder->params(), true, "encoder.classifier"));
}

TEST_CASE("fine-tune version rules") {
  EncoderModel m(tiny_config(), {"a", "b"}, 0);
  LabelSpace same{0, {"a", "b"}, {}};
  auto w = m.params().get("encoder.classifier.w").tensor.detach();
  fine_tune(m, same, 0.1);
  CHECK(std::equal(w.values().begin(), w.values().end(),
                   m.params().get("encoder.classifier.w").tensor.values().begin()));
  CHECK(m.params().get("encoder.block0.conv1.w").lr_scale == 0.1);
  CHECK(m.params().get("encoder.classifier.w").lr_scale == 1.0);
  LabelSpace skip{2, {"a", "b", "c"}, {}};
  CHECK_THROWS_AS(fine_tune(m, skip, 0.1), UsageError);
  LabelSpace back{0, {"a", "b", "c"}, {}};
  EncoderModel later(tiny_config(), {"a", "b"}, 1);
  CHECK_THROWS_AS(fine_tune(later, back, 0.1), UsageError);
}

TEST_CASE("encoder checkpoint round-trip preserves accuracy and labels") {
  auto fx = memorized_encoder();
  auto dir = std::filesystem::temp_directory_path() / "rnc_test_encoder";
  std::filesystem::remove_all(dir);
  fx.encoder->save(dir / "cnn");
  auto back = EncoderModel::load(dir / "cnn");
  CHECK(back.labels() == fx.encoder->labels());
  CHECK(hash_parameters(back.params()) == hash_parameters(fx.encoder->params()));
  CHECK(accuracy(back, fx.corpus, fx.space, Split::train) ==
        accuracy(*fx.encoder, fx.corpus, fx.space, Split::train));
  for (const auto& ex : fx.corpus) CHECK(back.encode(ex.pixels) == fx.encoder->encode(ex.pixels));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training with a mismatched label space is a usage error") {
  auto fx = memorized_encoder();
  LabelSpace other = fx.space;
  other.labels.push_back("x");
  EncoderTrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train_encoder(*fx.encoder, fx.corpus, other, tc), UsageError);
}
