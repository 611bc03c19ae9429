#pragma once

// Small corpora and trained models shared by unit and acceptance tests.

#include <memory>

#include "rnc/decoder.hpp"
#include "rnc/encoder.hpp"
#include "rnc/synth.hpp"

namespace rnc::testing {

/// Ten image/annotation pairs: five archetypes in both context modes, all in
/// the training split, each pattern its own label.
inline Corpus memorization_corpus(int side = 16) {
  auto spec = SynthSpec::standard();
  spec.side = side;
  Corpus corpus;
  for (std::size_t a = 0; a < 5; ++a) {
    const auto& arch = spec.archetypes[a];
    for (std::size_t mode = 0; mode < 2; ++mode) {
      const auto& locs = arch.context_modes[mode];
      auto ex = make_example("memo" + std::to_string(a * 2 + mode),
                             render_example(spec, arch, Severity::none, locs, 100 + a * 2 + mode),
                             synth_annotation(arch, Severity::none, locs, false));
      ex.split = Split::train;
      ex.context = static_cast<int>(mode);
      corpus.push_back(std::move(ex));
    }
  }
  return corpus;
}

struct MemorizedPair {
  Corpus corpus;
  LabelSpace space;
  std::unique_ptr<EncoderModel> encoder;
};

/// Memorization corpus plus an encoder trained to classify it perfectly.
inline MemorizedPair memorized_encoder(std::uint64_t seed = 3) {
  MemorizedPair out;
  out.corpus = memorization_corpus();
  out.space = mine_labels(out.corpus, 1);
  EncoderConfig cfg;
  cfg.image_side = 16;
  cfg.input_side = 16;
  cfg.channels = {8, 16, 16};
  cfg.seed = seed;
  out.encoder = std::make_unique<EncoderModel>(cfg, out.space.labels, 0);
  EncoderTrainConfig tc;
  tc.epochs = 300;
  tc.batch.batch_size = 10;
  tc.batch.seed = seed;
  tc.schedule = {0.05, ScheduleKind::constant, 1.0 / 3.0, 0.5, 1.0};
  tc.restore_best = false;
  train_encoder(*out.encoder, out.corpus, out.space, tc);
  return out;
}

inline DecoderTrainConfig memorization_train_config(CellKind cell, std::uint64_t seed = 5) {
  auto tc = DecoderTrainConfig::defaults(cell);
  tc.epochs = 500;
  tc.batch_size = 10;
  tc.schedule = {1e-2, ScheduleKind::exponential, 1.0 / 3.0, 0.5, 0.995};
  tc.seed = seed;
  return tc;
}

inline DecoderConfig memorization_decoder_config(CellKind cell, std::uint64_t seed = 11) {
  DecoderConfig c;
  c.cell = cell;
  c.layers = 2;
  c.state_dim = 16;
  c.seed = seed;
  return c;
}

/// Label 0 is normal; class c+1 holds sizes[c] blank images.
struct SamplerFixture {
  Corpus corpus;
  LabelSpace space;
};

inline SamplerFixture make_fixture(int classes, const std::vector<int>& sizes, int normals) {
  SamplerFixture f;
  f.space.labels.push_back("normal");
  int n = 0;
  for (int i = 0; i < normals; ++i) {
    auto e = make_example("n" + std::to_string(n++), Image(8, 8), "normal");
    e.split = Split::train;
    f.space.assignment[e.id] = 0;
    f.corpus.push_back(std::move(e));
  }
  for (int c = 0; c < classes; ++c) {
    f.space.labels.push_back("d" + std::to_string(c));
    for (int i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i) {
      auto e = make_example("x" + std::to_string(n++), Image(8, 8), "d" + std::to_string(c));
      e.split = Split::train;
      f.space.assignment[e.id] = c + 1;
      f.corpus.push_back(std::move(e));
    }
  }
  return f;
}

inline std::vector<const AnnotatedImage*> pointers(const Corpus& corpus) {
  std::vector<const AnnotatedImage*> out;
  for (const auto& ex : corpus) out.push_back(&ex);
  return out;
}

}  // namespace rnc::testing
