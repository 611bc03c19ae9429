#include "rnc/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "rnc/checkpoint.hpp"
#include "rnc/errors.hpp"

namespace rnc {

using nlohmann::json;

std::vector<ContextVector> context_vectors(DecoderModel& decoder, EncoderModel& encoder,
                                           const Corpus& corpus, int iteration,
                                           std::vector<std::vector<Point>>* states) {
  if (decoder.config().state_dim != encoder.config().embed_dim()) {
    throw ConfigError("decoder state_dim differs from the encoder embedding size");
  }
  std::vector<const AnnotatedImage*> use;
  for (const auto& ex : corpus) {
    if (ex.split == Split::train || ex.split == Split::val) use.push_back(&ex);
  }
  std::vector<ContextVector> out;
  if (states) states->clear();
  if (use.empty()) return out;

  NoGradGuard guard;
  std::vector<const Image*> images;
  for (const auto* ex : use) images.push_back(&ex->pixels);
  std::vector<std::vector<double>> cnn;
  encoder.infer(images, &cnn, nullptr);

  const auto& vocab = decoder.vocab();
  const auto d = static_cast<std::size_t>(decoder.config().state_dim);
  const int top = decoder.config().layers - 1;
  std::size_t truncated = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < use.size(); begin += kChunk) {
    const std::size_t end = std::min(use.size(), begin + kChunk);
    const std::size_t b = end - begin;
    std::vector<std::vector<int>> tokens(b);
    std::vector<double> rows;
    for (std::size_t r = 0; r < b; ++r) {
      const auto* ex = use[begin + r];
      auto n = ex->tokens.size();
      if (n > static_cast<std::size_t>(kHorizon)) {
        ++truncated;
        n = kHorizon;
      }
      for (std::size_t t = 0; t < n; ++t) tokens[r].push_back(vocab.index(ex->tokens[t]));
      rows.insert(rows.end(), cnn[begin + r].begin(), cnn[begin + r].end());
    }
    auto state = decoder.initial_state(Tensor::from({b, d}, std::move(rows)));
    std::vector<Point> sums(b, Point(d, 0.0));
    std::vector<std::vector<Point>> recorded(b);
    for (int t = 0; t < kHorizon; ++t) {
      std::vector<int> step_tokens(b, 0);
      bool any = false;
      for (std::size_t r = 0; r < b; ++r) {
        if (static_cast<std::size_t>(t) < tokens[r].size()) {
          step_tokens[r] = tokens[r][static_cast<std::size_t>(t)];
          any = true;
        }
      }
      if (!any) break;
      std::vector<CellTrace> traces;
      decoder.step(step_tokens, state, Mode::eval, nullptr, &traces);
      const auto& h = traces[static_cast<std::size_t>(top)].h;
      for (std::size_t r = 0; r < b; ++r) {
        if (static_cast<std::size_t>(t) >= tokens[r].size()) continue;
        auto row = h.values().subspan(r * d, d);
        for (std::size_t k = 0; k < d; ++k) sums[r][k] += row[k];
        if (states) recorded[r].emplace_back(row.begin(), row.end());
      }
    }
    for (std::size_t r = 0; r < b; ++r) {
      const auto* ex = use[begin + r];
      ContextVector v;
      v.id = ex->id;
      v.disease = disease_key(ex->terms);
      v.iteration = iteration;
      const auto n = static_cast<double>(tokens[r].size());
      v.h = std::move(sums[r]);
      for (auto& e : v.h) e /= n;
      out.push_back(std::move(v));
      if (states) states->push_back(std::move(recorded[r]));
    }
  }
  if (truncated) spdlog::warn("{} annotations truncated to {} tokens for context vectors", truncated, kHorizon);
  return out;
}

// ---------------------------------------------------------------------------

std::size_t ClusterConfig::min_cluster_size() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(min_cluster_fraction * target())));
}

void ClusterConfig::validate() const {
  if (!(target_size > 0) || !(scale > 0)) throw ConfigError("cluster target_size and scale must be positive");
  if (min_cluster_fraction < 0 || min_cluster_fraction > 1) {
    throw ConfigError("cluster min_cluster_fraction must be in [0,1]");
  }
  if (max_iter < 1) throw ConfigError("cluster max_iter must be positive");
}

json ClusterConfig::to_json() const {
  return {{"target_size", target_size},
          {"scale", scale},
          {"min_cluster_fraction", min_cluster_fraction},
          {"seed", seed},
          {"max_iter", max_iter}};
}

ClusterConfig ClusterConfig::from_json(const json& j) {
  ClusterConfig c;
  c.target_size = j.value("target_size", c.target_size);
  c.scale = j.value("scale", c.scale);
  c.min_cluster_fraction = j.value("min_cluster_fraction", c.min_cluster_fraction);
  c.seed = j.value("seed", c.seed);
  c.max_iter = j.value("max_iter", c.max_iter);
  c.validate();
  return c;
}

json ClusterPlan::to_json() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (const auto& [id, c] : assignment) ++sizes[static_cast<std::size_t>(c)];
  return {{"disease", disease}, {"n", n},         {"k", k}, {"sizes", sizes}, {"min_cluster_size", min_cluster_size},
          {"merged", merged},   {"objective", objective}};
}

double cluster_threshold(const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) return 0.0;
  double mean = 0.0;
  for (auto s : sizes) mean += static_cast<double>(s);
  mean /= static_cast<double>(sizes.size());
  double var = 0.0;
  for (auto s : sizes) var += (static_cast<double>(s) - mean) * (static_cast<double>(s) - mean);
  var /= static_cast<double>(sizes.size());
  return mean + std::sqrt(var);
}

int cluster_count(std::size_t n, double target) {
  if (n == 0) return 0;
  auto k = static_cast<long>(std::lround(static_cast<double>(n) / target));
  if (k < 1) k = 1;
  if (static_cast<std::size_t>(k) > n) {
    spdlog::warn("k={} exceeds the {} cases; clamped", k, n);
    k = static_cast<long>(n);
  }
  return static_cast<int>(k);
}

namespace {

/// Drops the smallest undersized cluster and reassigns its members until
/// every cluster meets the minimum; renumbers the survivors compactly.
int repair(std::vector<Point>& centroids, std::vector<int>& assign, const std::vector<Point>& pts,
           std::size_t min_size, const std::string& disease) {
  int merged = 0;
  while (centroids.size() > 1) {
    std::vector<std::size_t> sizes(centroids.size(), 0);
    for (int c : assign) ++sizes[static_cast<std::size_t>(c)];
    std::size_t worst = 0;
    for (std::size_t c = 1; c < sizes.size(); ++c) {
      if (sizes[c] < sizes[worst]) worst = c;
    }
    if (sizes[worst] >= min_size) break;
    spdlog::warn("{}: cluster {} has {} members (minimum {}); merged into the nearest centroid", disease,
                 worst, sizes[worst], min_size);
    centroids.erase(centroids.begin() + static_cast<std::ptrdiff_t>(worst));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (assign[i] == static_cast<int>(worst)) {
        assign[i] = nearest(pts[i], centroids);
      } else if (assign[i] > static_cast<int>(worst)) {
        --assign[i];
      }
    }
    // Centroids follow their members.
    const std::size_t dim = pts.front().size();
    std::vector<Point> sums(centroids.size(), Point(dim, 0.0));
    std::vector<std::size_t> counts(centroids.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto c = static_cast<std::size_t>(assign[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += pts[i][d];
    }
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
    ++merged;
  }
  return merged;
}

}  // namespace

ClusterSummary plan_clusters(std::vector<ContextVector>& vectors, const ClusterConfig& config) {
  config.validate();
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < vectors.size(); ++i) groups[vectors[i].disease].push_back(i);

  std::vector<std::size_t> sizes;
  for (const auto& [disease, members] : groups) {
    if (disease != "normal") sizes.push_back(members.size());
  }
  ClusterSummary summary;
  summary.threshold = cluster_threshold(sizes);

  std::uint64_t group_index = 0;
  for (const auto& [disease, members] : groups) {
    ClusterPlan plan;
    plan.disease = disease;
    plan.n = members.size();
    plan.min_cluster_size = config.min_cluster_size();
    std::vector<Point> pts;
    for (auto i : members) pts.push_back(vectors[i].h);
    const bool split = disease != "normal" && static_cast<double>(plan.n) >= summary.threshold;
    const int k = split ? cluster_count(plan.n, config.target()) : 1;
    std::vector<int> assign(members.size(), 0);
    if (k > 1) {
      auto km = kmeans(pts, k, config.seed * 7919ULL + group_index, config.max_iter);
      plan.centroids = km.centroids;
      plan.objective = km.objective;
      assign = km.assignment;
      plan.merged = repair(plan.centroids, assign, pts, plan.min_cluster_size, disease);
    } else {
      Point mean(pts.front().size(), 0.0);
      for (const auto& p : pts) {
        for (std::size_t d = 0; d < p.size(); ++d) mean[d] += p[d];
      }
      for (auto& v : mean) v /= static_cast<double>(pts.size());
      plan.centroids = {mean};
    }
    plan.k = static_cast<int>(plan.centroids.size());
    for (std::size_t m = 0; m < members.size(); ++m) {
      plan.assignment[vectors[members[m]].id] = assign[m];
      vectors[members[m]].cluster = assign[m];
    }
    summary.plans.push_back(std::move(plan));
    ++group_index;
  }
  // Largest groups first, like the mined labels.
  std::stable_sort(summary.plans.begin(), summary.plans.end(),
                   [](const ClusterPlan& a, const ClusterPlan& b) { return a.n > b.n; });
  return summary;
}

LabelSpace relabel(const std::vector<ClusterPlan>& plans) {
  LabelSpace space;
  space.iteration = 1;
  for (const auto& plan : plans) {
    const int base = static_cast<int>(space.labels.size());
    if (plan.k <= 1) {
      space.labels.push_back(plan.disease);
    } else {
      for (int c = 0; c < plan.k; ++c) space.labels.push_back(plan.disease + "#" + std::to_string(c));
    }
    for (const auto& [id, c] : plan.assignment) space.assignment[id] = base + (plan.k <= 1 ? 0 : c);
  }
  space.validate();
  spdlog::info("iteration-1 label space: {} labels over {} examples", space.size(), space.assignment.size());
  return space;
}

std::optional<double> cluster_purity(const std::vector<ClusterPlan>& plans,
                                     const std::map<std::string, int>& truth) {
  std::size_t agree = 0, total = 0;
  for (const auto& plan : plans) {
    if (plan.k <= 1) continue;
    std::vector<std::map<int, std::size_t>> counts(static_cast<std::size_t>(plan.k));
    for (const auto& [id, c] : plan.assignment) {
      auto it = truth.find(id);
      if (it == truth.end()) throw DataError("no ground-truth context for '" + id + "'");
      ++counts[static_cast<std::size_t>(c)][it->second];
    }
    for (const auto& cluster : counts) {
      std::size_t best = 0, size = 0;
      for (const auto& [mode, n] : cluster) {
        best = std::max(best, n);
        size += n;
      }
      agree += best;
      total += size;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(agree) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------

std::filesystem::path context_sidecar(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".jsonl";
  return p;
}

void save_context(const std::filesystem::path& stem, const std::vector<ContextVector>& vectors) {
  if (vectors.empty()) throw DataError("no context vectors to save");
  const auto d = vectors.front().h.size();
  std::vector<double> flat;
  flat.reserve(vectors.size() * d);
  for (const auto& v : vectors) flat.insert(flat.end(), v.h.begin(), v.h.end());
  ParameterSet set;
  set.add("context", Tensor::from({vectors.size(), d}, std::move(flat)), false);
  save_checkpoint(stem, set, {{"kind", "context"}, {"iteration", vectors.front().iteration}});
  std::ofstream out(context_sidecar(stem), std::ios::trunc);
  if (!out) throw DataError("cannot write " + context_sidecar(stem).string());
  for (const auto& v : vectors) {
    out << json{{"id", v.id}, {"disease", v.disease}, {"cluster", v.cluster}}.dump() << '\n';
  }
}

std::vector<ContextVector> load_context(const std::filesystem::path& stem) {
  if (!checkpoint_exists(stem)) {
    throw MissingArtifactError("context vectors not found at " + manifest_path(stem).string() +
                               "; run context first");
  }
  auto ckpt = load_checkpoint(stem);
  const auto& m = ckpt.params.get("context").tensor;
  const auto n = m.dim(0), d = m.dim(1);
  std::ifstream in(context_sidecar(stem));
  if (!in) throw MissingArtifactError("context sidecar missing: " + context_sidecar(stem).string());
  std::vector<ContextVector> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    ContextVector v;
    v.id = j.at("id").get<std::string>();
    v.disease = j.at("disease").get<std::string>();
    v.cluster = j.value("cluster", -1);
    v.iteration = ckpt.meta.value("iteration", 0);
    out.push_back(std::move(v));
  }
  if (out.size() != n) throw DataError("context sidecar has " + std::to_string(out.size()) + " rows, matrix " +
                                       std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    out[i].h.assign(m.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                    m.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

}  // namespace rnc
