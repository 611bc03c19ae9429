#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rnc/dataset.hpp"
#include "rnc/decoder.hpp"
#include "rnc/encoder.hpp"
#include "rnc/kmeans.hpp"

namespace rnc {

/// Mean of the top-layer decoder states over the real tokens of one
/// annotation, with the state initialised from the image embedding.
struct ContextVector {
  std::string id;
  Point h;
  /// First-mentioned disease (disease_key of the annotation terms).
  std::string disease;
  int iteration = 0;
  int cluster = -1;
};

/// Vectors for every annotated train/val example (test examples are never
/// read). Annotations longer than the horizon are truncated with a warning.
/// With `states`, the per-step top-layer states are returned too, one list
/// per vector.
std::vector<ContextVector> context_vectors(DecoderModel& decoder, EncoderModel& encoder,
                                           const Corpus& corpus, int iteration = 0,
                                           std::vector<std::vector<Point>>* states = nullptr);

struct ClusterConfig {
  double target_size = 50.0;
  /// Multiplies target_size; shrinks the cluster size on small corpora.
  double scale = 1.0;
  /// Minimum sub-group size as a fraction of the scaled target.
  double min_cluster_fraction = 0.5;
  std::uint64_t seed = 0;
  int max_iter = 100;

  double target() const { return target_size * scale; }
  std::size_t min_cluster_size() const;
  void validate() const;
  nlohmann::json to_json() const;
  static ClusterConfig from_json(const nlohmann::json& j);
};

struct ClusterPlan {
  std::string disease;
  std::size_t n = 0;
  int k = 1;
  std::vector<Point> centroids;
  std::map<std::string, int> assignment;
  std::size_t min_cluster_size = 1;
  std::vector<double> objective;
  /// Clusters merged away by the size repair.
  int merged = 0;

  nlohmann::json to_json() const;
};

/// Mean plus population standard deviation of the group sizes.
double cluster_threshold(const std::vector<std::size_t>& sizes);
/// round(n / target), at least 1; clamped to n with a warning.
int cluster_count(std::size_t n, double target);

struct ClusterSummary {
  double threshold = 0.0;
  std::vector<ClusterPlan> plans;
};

/// Groups vectors by disease. Diseases at or above the threshold (computed
/// over the non-normal groups) get k-means with cluster_count(n, target);
/// the rest, and "normal", keep one cluster. Undersized clusters are merged
/// into the nearest remaining centroid until every cluster is large enough.
ClusterSummary plan_clusters(std::vector<ContextVector>& vectors, const ClusterConfig& config);

/// Iteration-1 label space: "<disease>" for single-cluster groups,
/// "<disease>#<i>" otherwise; covers every vectorized example.
LabelSpace relabel(const std::vector<ClusterPlan>& plans);

/// Fraction of clustered examples (groups with k > 1) that share their
/// cluster's majority ground-truth context. Empty when nothing was split.
std::optional<double> cluster_purity(const std::vector<ClusterPlan>& plans,
                                     const std::map<std::string, int>& truth);

/// Manifest + blob of a [n, D] matrix and a JSONL sidecar {id, disease, cluster}.
void save_context(const std::filesystem::path& stem, const std::vector<ContextVector>& vectors);
std::vector<ContextVector> load_context(const std::filesystem::path& stem);
std::filesystem::path context_sidecar(const std::filesystem::path& stem);

}  // namespace rnc
