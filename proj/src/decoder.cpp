#include "rnc/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "rnc/errors.hpp"

namespace rnc {

using nlohmann::json;

CellKind parse_cell_kind(const std::string& name) {
  if (name == "lstm") return CellKind::lstm;
  if (name == "gru") return CellKind::gru;
  throw ConfigError("unknown cell kind '" + name + "' (expected lstm or gru)");
}

std::string to_string(CellKind kind) { return kind == CellKind::lstm ? "lstm" : "gru"; }

// ---------------------------------------------------------------------------

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  tokens_.push_back(kEos);
  index_[kEos] = 0;
  for (auto& t : tokens) {
    if (t == kEos || index_.count(t)) continue;
    index_[t] = static_cast<int>(tokens_.size());
    tokens_.push_back(std::move(t));
  }
}

Vocab Vocab::build(const Corpus& corpus) {
  std::set<std::string> seen;
  for (const auto& ex : corpus) {
    if (ex.split == Split::test) continue;
    seen.insert(ex.tokens.begin(), ex.tokens.end());
  }
  return Vocab(std::vector<std::string>(seen.begin(), seen.end()));
}

int Vocab::index(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw DataError("token '" + token + "' is not in the vocabulary");
  return it->second;
}

const std::string& Vocab::token(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tokens_.size()) {
    throw DataError("vocabulary index " + std::to_string(index) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(index)];
}

SequenceExample make_sequence(const AnnotatedImage& example, const Vocab& vocab) {
  if (example.tokens.size() > static_cast<std::size_t>(kHorizon)) {
    throw DataError("annotation of '" + example.id + "' has " + std::to_string(example.tokens.size()) +
                    " tokens, more than the " + std::to_string(kHorizon) + "-step horizon");
  }
  std::vector<int> padded;
  for (const auto& t : example.tokens) padded.push_back(vocab.index(t));
  padded.resize(kHorizon + 1, 0);
  SequenceExample s;
  s.id = example.id;
  s.inputs.assign(padded.begin(), padded.begin() + kHorizon);
  s.targets.assign(padded.begin() + 1, padded.end());
  s.length = static_cast<int>(example.tokens.size());
  return s;
}

// ---------------------------------------------------------------------------

namespace {

Tensor gate(const Tensor& x, const Tensor& W, const Tensor& state, const Tensor& U, const Tensor& b) {
  return ops::add_bias(ops::add(ops::matmul(x, W), ops::matmul(state, U)), b);
}

void require_state(const Tensor& x, const Tensor& h, const Tensor& W, const char* cell) {
  if (x.rank() != 2 || h.rank() != 2 || x.dim(0) != h.dim(0)) {
    throw ShapeError(std::string(cell) + ": input " + shape_str(x.shape()) + " and state " +
                     shape_str(h.shape()) + " must be [B,in] and [B,D]");
  }
  if (W.dim(0) != x.dim(1) || W.dim(1) != h.dim(1)) {
    throw ShapeError(std::string(cell) + ": weight " + shape_str(W.shape()) + " does not map input " +
                     shape_str(x.shape()) + " to state " + shape_str(h.shape()));
  }
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-s, s);
  std::vector<double> v(shape_size(shape));
  for (auto& e : v) e = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

std::string layer_name(int layer, const std::string& leaf) {
  return "decoder.layer" + std::to_string(layer) + "." + leaf;
}

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

LstmStep lstm_step(const LstmParams& p, const Tensor& x, const Tensor& h_prev, const Tensor& m_prev) {
  require_state(x, h_prev, p.W_i, "lstm_step");
  if (m_prev.shape() != h_prev.shape()) {
    throw ShapeError("lstm_step: output state " + shape_str(m_prev.shape()) + " differs from memory " +
                     shape_str(h_prev.shape()));
  }
  LstmStep s;
  auto& t = s.trace;
  t.i = ops::sigmoid(gate(x, p.W_i, m_prev, p.U_i, p.b_i));
  t.f = ops::sigmoid(gate(x, p.W_f, m_prev, p.U_f, p.b_f));
  t.o = ops::sigmoid(gate(x, p.W_o, m_prev, p.U_o, p.b_o));
  t.candidate = ops::tanh(gate(x, p.W_h, m_prev, p.U_h, p.b_h));
  t.h = ops::add(ops::hadamard(t.f, h_prev), ops::hadamard(t.i, t.candidate));
  t.m = ops::hadamard(t.o, ops::tanh(t.h));
  s.h = t.h;
  s.m = t.m;
  return s;
}

CellTrace gru_step(const GruParams& p, const Tensor& x, const Tensor& h_prev) {
  require_state(x, h_prev, p.W_z, "gru_step");
  CellTrace t;
  t.z = ops::sigmoid(gate(x, p.W_z, h_prev, p.U_z, p.b_z));
  t.r = ops::sigmoid(gate(x, p.W_r, h_prev, p.U_r, p.b_r));
  auto recurrent = ops::hadamard(t.r, ops::matmul(h_prev, p.U_h));
  t.candidate = ops::tanh(ops::add_bias(ops::add(ops::matmul(x, p.W_h), recurrent), p.b_h));
  t.h = ops::add(ops::hadamard(t.z, h_prev), ops::hadamard(ops::affine(t.z, -1.0, 1.0), t.candidate));
  return t;
}

// ---------------------------------------------------------------------------

void DecoderConfig::validate() const {
  if (layers < 1) throw ConfigError("decoder needs at least one layer");
  if (state_dim < 1) throw ConfigError("decoder state_dim must be positive");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must be in (0,1]");
}

json DecoderConfig::to_json() const {
  return {{"cell", to_string(cell)}, {"layers", layers},
          {"state_dim", state_dim},  {"keep_prob", keep_prob},
          {"loss_on_padding", loss_on_padding}, {"seed", seed}};
}

DecoderConfig DecoderConfig::from_json(const json& j) {
  DecoderConfig c;
  c.cell = parse_cell_kind(j.value("cell", std::string("lstm")));
  c.layers = j.value("layers", c.layers);
  c.state_dim = j.value("state_dim", c.state_dim);
  c.keep_prob = j.value("keep_prob", c.keep_prob);
  c.loss_on_padding = j.value("loss_on_padding", c.loss_on_padding);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

DecoderModel::DecoderModel(DecoderConfig config, Vocab vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  Rng rng(config_.seed);
  const auto d = static_cast<std::size_t>(config_.state_dim);
  const auto v = vocab_.size();
  params_.add("decoder.embed", uniform_init({v, d}, d, rng));
  const std::vector<std::string> gates =
      config_.cell == CellKind::lstm ? std::vector<std::string>{"i", "f", "o", "h"}
                                     : std::vector<std::string>{"z", "r", "h"};
  for (int l = 0; l < config_.layers; ++l) {
    for (const auto& g : gates) {
      params_.add(layer_name(l, "W_" + g), uniform_init({d, d}, d, rng));
      params_.add(layer_name(l, "U_" + g), uniform_init({d, d}, d, rng));
      params_.add(layer_name(l, "b_" + g), Tensor::zeros({d}));
    }
  }
  params_.add("decoder.out.W", uniform_init({d, v}, d, rng));
  params_.add("decoder.out.b", Tensor::zeros({v}));
}

LstmParams DecoderModel::lstm_layer(int l) const {
  if (config_.cell != CellKind::lstm) throw UsageError("decoder is not an LSTM");
  return {p(layer_name(l, "W_i")), p(layer_name(l, "U_i")), p(layer_name(l, "b_i")),
          p(layer_name(l, "W_f")), p(layer_name(l, "U_f")), p(layer_name(l, "b_f")),
          p(layer_name(l, "W_o")), p(layer_name(l, "U_o")), p(layer_name(l, "b_o")),
          p(layer_name(l, "W_h")), p(layer_name(l, "U_h")), p(layer_name(l, "b_h"))};
}

GruParams DecoderModel::gru_layer(int l) const {
  if (config_.cell != CellKind::gru) throw UsageError("decoder is not a GRU");
  return {p(layer_name(l, "W_z")), p(layer_name(l, "U_z")), p(layer_name(l, "b_z")),
          p(layer_name(l, "W_r")), p(layer_name(l, "U_r")), p(layer_name(l, "b_r")),
          p(layer_name(l, "W_h")), p(layer_name(l, "U_h")), p(layer_name(l, "b_h"))};
}

DecoderModel::State DecoderModel::initial_state(const Tensor& cnn) const {
  const auto d = static_cast<std::size_t>(config_.state_dim);
  if (cnn.rank() != 2 || cnn.dim(1) != d) {
    throw ShapeError("decoder: image embedding " + shape_str(cnn.shape()) +
                     " does not match state_dim " + std::to_string(d));
  }
  State s;
  const auto b = cnn.dim(0);
  for (int l = 0; l < config_.layers; ++l) {
    s.h.push_back(l == 0 ? cnn : Tensor::zeros({b, d}));
    if (config_.cell == CellKind::lstm) s.m.push_back(Tensor::zeros({b, d}));
  }
  return s;
}

Tensor DecoderModel::step(std::span<const int> tokens, State& state, Mode mode, Rng* rng,
                          std::vector<CellTrace>* traces) {
  Rng fallback(0);
  Rng& r = rng ? *rng : fallback;
  Tensor out = ops::gather_rows(p("decoder.embed"), tokens);
  for (int l = 0; l < config_.layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    Tensor in = out;
    if (l > 0 && config_.keep_prob < 1.0) in = ops::dropout(out, 1.0 - config_.keep_prob, r, mode);
    if (config_.cell == CellKind::lstm) {
      auto s = lstm_step(lstm_layer(l), in, state.h[li], state.m[li]);
      state.h[li] = s.h;
      state.m[li] = s.m;
      out = s.m;
      if (traces) traces->push_back(std::move(s.trace));
    } else {
      auto t = gru_step(gru_layer(l), in, state.h[li]);
      state.h[li] = t.h;
      out = t.h;
      if (traces) traces->push_back(std::move(t));
    }
  }
  return ops::add_bias(ops::matmul(out, p("decoder.out.W")), p("decoder.out.b"));
}

Tensor DecoderModel::sequence_loss(const Tensor& cnn, const std::vector<SequenceExample>& batch,
                                   Mode mode, Rng* rng, std::size_t* correct, std::size_t* counted) {
  if (batch.empty()) throw UsageError("sequence_loss: empty batch");
  auto state = initial_state(cnn);
  Tensor total;
  std::vector<int> tokens(batch.size()), targets(batch.size());
  std::vector<double> weights(batch.size());
  for (int t = 0; t < kHorizon; ++t) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      tokens[b] = batch[b].inputs[static_cast<std::size_t>(t)];
      targets[b] = batch[b].targets[static_cast<std::size_t>(t)];
      weights[b] = (t < batch[b].length || config_.loss_on_padding) ? 1.0 : 0.0;
    }
    auto logits = step(tokens, state, mode, rng);
    auto ce = ops::softmax_cross_entropy(logits, targets, weights);
    total = total.defined() ? ops::add(total, ce) : ce;
    if (correct && counted) {
      const auto v = vocab_.size();
      for (std::size_t b = 0; b < batch.size(); ++b) {
        if (weights[b] == 0.0) continue;
        ++*counted;
        if (argmax(logits.values().subspan(b * v, v)) == targets[b]) ++*correct;
      }
    }
  }
  return total;
}

void DecoderModel::save(const std::filesystem::path& stem, json extra) const {
  extra["kind"] = "decoder";
  extra["config"] = config_.to_json();
  extra["vocab"] = vocab_.tokens();
  save_checkpoint(stem, params_, extra);
}

DecoderModel DecoderModel::load(const std::filesystem::path& stem) {
  auto ckpt = load_checkpoint(stem);
  if (ckpt.meta.value("kind", std::string{}) != "decoder") {
    throw DataError(manifest_path(stem).string() + " is not a decoder checkpoint");
  }
  auto tokens = ckpt.meta.at("vocab").get<std::vector<std::string>>();
  if (tokens.empty() || tokens.front() != Vocab::kEos) throw DataError("decoder vocabulary lacks EOS");
  tokens.erase(tokens.begin());
  DecoderModel model(DecoderConfig::from_json(ckpt.meta.at("config")), Vocab(std::move(tokens)));
  model.params_.assign_values(ckpt.params);
  return model;
}

// ---------------------------------------------------------------------------

DecoderTrainConfig DecoderTrainConfig::defaults(CellKind cell) {
  DecoderTrainConfig c;
  if (cell == CellKind::lstm) {
    c.schedule = {2e-3, ScheduleKind::exponential, 1.0 / 3.0, 0.5, 0.97};
    c.optimizer = {OptimizerKind::rmsprop, 0.0, 0.95, 1e-8};
  } else {
    c.schedule = {1e-4, ScheduleKind::exponential, 1.0 / 3.0, 0.5, 0.99};
    c.optimizer = {OptimizerKind::rmsprop, 0.0, 0.99, 1e-8};
  }
  return c;
}

std::string DecoderReport::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,token_acc\n";
  for (const auto& e : epochs) os << e.epoch << ',' << e.loss << ',' << e.token_accuracy << '\n';
  return os.str();
}

namespace {

Tensor rows_tensor(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& pick) {
  const auto d = rows.front().size();
  std::vector<double> v;
  v.reserve(pick.size() * d);
  for (auto i : pick) v.insert(v.end(), rows[i].begin(), rows[i].end());
  return Tensor::from({pick.size(), d}, std::move(v));
}

void require_matching_dims(const DecoderModel& decoder, const EncoderModel& encoder) {
  if (decoder.config().state_dim != encoder.config().embed_dim()) {
    throw ConfigError("decoder state_dim " + std::to_string(decoder.config().state_dim) +
                      " differs from the encoder embedding size " +
                      std::to_string(encoder.config().embed_dim()));
  }
}

}  // namespace

DecoderReport train_decoder(DecoderModel& decoder, EncoderModel& encoder, const Corpus& corpus,
                            const LabelSpace& space, const DecoderTrainConfig& config) {
  require_matching_dims(decoder, encoder);
  if (config.epochs < 1 || config.batch_size < 1) throw ConfigError("decoder epochs and batch size must be positive");
  config.schedule.validate();

  DecoderReport report;
  std::vector<SequenceExample> seqs;
  std::vector<const Image*> images;
  std::vector<const AnnotatedImage*> used;
  for (const auto& ex : corpus) {
    if (ex.split != Split::train || !space.class_of(ex.id)) continue;
    if (ex.tokens.size() > static_cast<std::size_t>(kHorizon)) {
      ++report.excluded;
      continue;
    }
    seqs.push_back(make_sequence(ex, decoder.vocab()));
    images.push_back(&ex.pixels);
    used.push_back(&ex);
  }
  if (report.excluded) spdlog::warn("{} annotations longer than {} tokens excluded", report.excluded, kHorizon);
  if (seqs.empty()) throw DataError("no training sequences for the decoder");
  report.sequences = seqs.size();

  std::vector<std::vector<double>> cnn;
  encoder.infer(images, &cnn, nullptr);

  Rng rng(config.seed);
  Optimizer opt(config.optimizer);
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, counted = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<std::size_t> pick(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<SequenceExample> batch;
      for (auto i : pick) batch.push_back(seqs[i]);
      auto total = decoder.sequence_loss(rows_tensor(cnn, pick), batch, Mode::train, &rng, &correct, &counted);
      loss_sum += total.item();
      backward(ops::affine(total, 1.0 / static_cast<double>(batch.size()), 0.0));
      if (config.clip_norm > 0) clip_grad_norm(decoder.params(), config.clip_norm);
      opt.step(decoder.params(), config.schedule, epoch, config.epochs);
    }
    DecoderEpoch e;
    e.epoch = epoch;
    e.loss = loss_sum / static_cast<double>(seqs.size());
    e.token_accuracy = counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    report.epochs.push_back(e);
    spdlog::debug("decoder epoch {} loss {:.4f} token acc {:.4f}", epoch, e.loss, e.token_accuracy);
    if (config.stop_at_perfect && token_accuracy(decoder, encoder, used) == 1.0) break;
  }
  return report;
}

double token_accuracy(DecoderModel& decoder, EncoderModel& encoder,
                      const std::vector<const AnnotatedImage*>& examples) {
  require_matching_dims(decoder, encoder);
  if (examples.empty()) return 0.0;
  NoGradGuard guard;
  std::vector<const Image*> images;
  std::vector<SequenceExample> seqs;
  for (const auto* ex : examples) {
    images.push_back(&ex->pixels);
    seqs.push_back(make_sequence(*ex, decoder.vocab()));
  }
  std::vector<std::vector<double>> cnn;
  encoder.infer(images, &cnn, nullptr);
  std::vector<std::size_t> all(seqs.size());
  std::iota(all.begin(), all.end(), 0);
  std::size_t correct = 0, counted = 0;
  decoder.sequence_loss(rows_tensor(cnn, all), seqs, Mode::eval, nullptr, &correct, &counted);
  return counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
}

std::vector<Prediction> generate(DecoderModel& decoder, EncoderModel& encoder,
                                 const std::vector<const AnnotatedImage*>& examples, int max_len) {
  require_matching_dims(decoder, encoder);
  std::vector<Prediction> out;
  if (examples.empty()) return out;
  NoGradGuard guard;
  std::vector<const Image*> images;
  for (const auto* ex : examples) images.push_back(&ex->pixels);
  std::vector<std::vector<double>> cnn, logits;
  encoder.infer(images, &cnn, &logits);

  const auto& vocab = decoder.vocab();
  const std::size_t n = examples.size();
  std::vector<int> current(n, 0);
  std::vector<bool> active(n, max_len > 1);
  for (std::size_t b = 0; b < n; ++b) {
    Prediction p;
    p.id = examples[b]->id;
    p.split = examples[b]->split;
    p.reference = examples[b]->tokens;
    p.predicted_label = encoder.labels()[static_cast<std::size_t>(argmax(logits[b]))];
    const auto seed = seed_token(p.predicted_label);
    if (max_len >= 1) p.tokens.push_back(seed);
    if (vocab.contains(seed)) {
      current[b] = vocab.index(seed);
    } else {
      active[b] = false;
    }
    out.push_back(std::move(p));
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  auto state = decoder.initial_state(rows_tensor(cnn, all));
  const auto v = vocab.size();
  for (int step = 1; step < max_len; ++step) {
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    auto l = decoder.step(current, state, Mode::eval, nullptr);
    for (std::size_t b = 0; b < n; ++b) {
      if (!active[b]) continue;
      const int next = argmax(l.values().subspan(b * v, v));
      if (next == 0) {
        active[b] = false;
        continue;
      }
      out[b].tokens.push_back(vocab.token(next));
      current[b] = next;
      if (static_cast<int>(out[b].tokens.size()) >= max_len) active[b] = false;
    }
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : predictions) {
    json rec = {{"id", p.id},
                {"split", to_string(p.split)},
                {"predicted_label", p.predicted_label},
                {"tokens", p.tokens},
                {"reference_tokens", p.reference}};
    out << rec.dump() << '\n';
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("predictions not found: " + path.string() + "; run generate first");
  std::vector<Prediction> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      Prediction p;
      p.id = j.at("id").get<std::string>();
      p.split = parse_split(j.value("split", std::string("none")));
      p.predicted_label = j.value("predicted_label", std::string{});
      p.tokens = j.at("tokens").get<std::vector<std::string>>();
      p.reference = j.at("reference_tokens").get<std::vector<std::string>>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError("malformed prediction in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace rnc
