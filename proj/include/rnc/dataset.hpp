#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rnc/image.hpp"

namespace rnc {

enum class Split { none, train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& name);

/// One corpus example: a square grayscale image and its MeSH-style annotation.
///
/// `annotation` keeps the raw string. `terms` is its first-level split on
/// "/", "," and ";" (lowercased, whitespace-collapsed); `tokens` further
/// splits the terms on whitespace and is what the decoder reads.
struct AnnotatedImage {
  std::string id;
  Image pixels;
  std::string annotation;
  std::vector<std::string> terms;
  std::vector<std::string> tokens;
  std::optional<std::string> label;
  Split split = Split::none;
  /// Hidden context mode of synthetic examples; -1 when unknown.
  int context = -1;
};

using Corpus = std::vector<AnnotatedImage>;

std::vector<std::string> split_terms(std::string_view annotation);
std::vector<std::string> tokenize(std::string_view annotation);

/// Builds an example from a raw annotation. Throws DataError when the
/// annotation has no tokens.
AnnotatedImage make_example(std::string id, Image pixels, std::string annotation);

/// First-mentioned disease of an annotation: the first term left non-empty
/// after stripping severity/location/organ modifier words ("small",
/// "right", "lung", ...). Falls back to the first term.
std::string disease_key(const std::vector<std::string>& terms);

/// First word token of a label name, ignoring any "#<cluster>" suffix.
std::string seed_token(std::string_view label_name);

// ---------------------------------------------------------------------------
// Term statistics

struct TermStats {
  std::string term;
  std::size_t total = 0;
  /// Cases in which the term appears together with at least one other term.
  std::size_t overlap = 0;
  double overlap_pct = 0.0;
};

/// Per-term case totals and overlap counts, sorted by total (desc) then term.
std::vector<TermStats> term_stats(const Corpus& corpus);
/// TSV with header `term total overlap overlap_pct`; pct printed as a
/// fraction with four decimals.
std::string term_stats_tsv(const std::vector<TermStats>& stats);

// ---------------------------------------------------------------------------
// Label spaces

struct LabelSpace {
  int iteration = 0;
  std::vector<std::string> labels;
  std::map<std::string, int> assignment;

  std::size_t size() const { return labels.size(); }
  std::optional<int> class_of(const std::string& id) const;
  int index_of(const std::string& label) const;
  std::optional<int> normal_index() const;
  void validate() const;

  nlohmann::json to_json() const;
  static LabelSpace from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static LabelSpace load(const std::filesystem::path& path);
  bool operator==(const LabelSpace&) const = default;
};

struct MiningReport {
  std::size_t patterns = 0;
  std::size_t labeled = 0;
  std::size_t total = 0;
  double retained_fraction = 0.0;
};

/// Groups examples by exact multiset equality of their first-level terms and
/// keeps every pattern seen at least `min_support` times as a label. Labels
/// are ordered by support (desc) then name. Sets `label` on matching
/// examples and clears it elsewhere. Throws DataError when no pattern
/// qualifies.
LabelSpace mine_labels(Corpus& corpus, int min_support, MiningReport* report = nullptr);

/// Sets each example's `label` from the space (absent when unassigned).
void apply_labels(Corpus& corpus, const LabelSpace& space);

// ---------------------------------------------------------------------------
// Splitting

struct SplitConfig {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  int min_eval_per_label = 10;
  std::uint64_t seed = 0;
};

/// Stratum of an example for splitting: its label, else its disease key.
std::string stratum_of(const AnnotatedImage& example);

/// Stratified random split. Per stratum of n cases the validation and test
/// shares are max(floor(fraction * n), min_eval_per_label) each and the rest
/// goes to training. Throws DataError naming every stratum that cannot keep
/// at least one training case.
void split_corpus(Corpus& corpus, const SplitConfig& config);

nlohmann::json splits_to_json(const Corpus& corpus);
void apply_splits(Corpus& corpus, const nlohmann::json& splits);

// ---------------------------------------------------------------------------
// Persistence

struct IngestOptions {
  int side = 32;
};

struct IngestReport {
  std::size_t records = 0;
  std::size_t loaded = 0;
  std::size_t skipped = 0;
};

/// Reads `<dir>/index.jsonl` (one {id, image, annotation} record per line;
/// optional `split` and `context`), decodes each PGM image and rescales it to
/// side x side. Unreadable images and empty annotations are skipped with a
/// warning. Throws MissingArtifactError when the index is absent.
Corpus ingest(const std::filesystem::path& dir, const IngestOptions& options,
              IngestReport* report = nullptr);

/// Writes `<dir>/index.jsonl` and `<dir>/images/<id>.pgm`.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);

std::vector<const AnnotatedImage*> select(const Corpus& corpus, Split split);

}  // namespace rnc
