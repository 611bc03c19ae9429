#include "rnc/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "rnc/errors.hpp"
#include "rnc/ops.hpp"

namespace rnc {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: break;
  }
  return "none";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  if (name == "none" || name.empty()) return Split::none;
  throw DataError("unknown split '" + name + "'");
}

namespace {

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

const std::set<std::string>& modifier_words() {
  static const std::set<std::string> words = {
      "small",    "large",     "multiple", "mild",    "moderate", "severe", "minimal", "scattered",
      "bilateral", "left",     "right",    "upper",   "lower",    "base",   "lobe",    "lung",
      "middle",   "anterior",  "posterior", "focal",  "diffuse",  "chronic"};
  return words;
}

}  // namespace

std::vector<std::string> split_terms(std::string_view annotation) {
  std::vector<std::string> terms;
  std::string cur;
  auto flush = [&] {
    auto w = words(cur);
    if (!w.empty()) terms.push_back(join(w, " "));
    cur.clear();
  };
  for (char ch : annotation) {
    if (ch == '/' || ch == ',' || ch == ';') {
      flush();
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return terms;
}

std::vector<std::string> tokenize(std::string_view annotation) {
  std::vector<std::string> tokens;
  for (const auto& term : split_terms(annotation)) {
    for (auto& w : words(term)) tokens.push_back(std::move(w));
  }
  return tokens;
}

AnnotatedImage make_example(std::string id, Image pixels, std::string annotation) {
  AnnotatedImage ex;
  ex.id = std::move(id);
  ex.pixels = std::move(pixels);
  ex.terms = split_terms(annotation);
  ex.tokens = tokenize(annotation);
  ex.annotation = std::move(annotation);
  if (ex.tokens.empty()) throw DataError("example '" + ex.id + "' has an empty annotation");
  return ex;
}

std::string disease_key(const std::vector<std::string>& terms) {
  if (terms.empty()) return {};
  const auto& mods = modifier_words();
  for (const auto& term : terms) {
    auto w = words(term);
    std::size_t i = 0;
    while (i < w.size() && mods.count(w[i])) ++i;
    if (i < w.size()) return join({w.begin() + static_cast<std::ptrdiff_t>(i), w.end()}, " ");
  }
  return terms.front();
}

std::string seed_token(std::string_view label_name) {
  const auto hash = label_name.find('#');
  const auto toks = tokenize(label_name.substr(0, hash));
  if (toks.empty()) throw DataError("label '" + std::string(label_name) + "' has no seed word");
  return toks.front();
}

// ---------------------------------------------------------------------------

std::vector<TermStats> term_stats(const Corpus& corpus) {
  std::map<std::string, TermStats> acc;
  for (const auto& ex : corpus) {
    std::set<std::string> distinct(ex.terms.begin(), ex.terms.end());
    for (const auto& t : distinct) {
      auto& s = acc[t];
      s.term = t;
      ++s.total;
      if (distinct.size() > 1) ++s.overlap;
    }
  }
  std::vector<TermStats> out;
  out.reserve(acc.size());
  for (auto& [_, s] : acc) {
    s.overlap_pct = s.total ? static_cast<double>(s.overlap) / static_cast<double>(s.total) : 0.0;
    out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(), [](const TermStats& a, const TermStats& b) {
    if (a.total != b.total) return a.total > b.total;
    return a.term < b.term;
  });
  return out;
}

std::string term_stats_tsv(const std::vector<TermStats>& stats) {
  std::ostringstream os;
  os << "term\ttotal\toverlap\toverlap_pct\n";
  char pct[32];
  for (const auto& s : stats) {
    std::snprintf(pct, sizeof pct, "%.4f", s.overlap_pct);
    os << s.term << '\t' << s.total << '\t' << s.overlap << '\t' << pct << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

std::optional<int> LabelSpace::class_of(const std::string& id) const {
  auto it = assignment.find(id);
  if (it == assignment.end()) return std::nullopt;
  return it->second;
}

int LabelSpace::index_of(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw DataError("label '" + label + "' not in label space");
  return static_cast<int>(it - labels.begin());
}

std::optional<int> LabelSpace::normal_index() const {
  auto it = std::find(labels.begin(), labels.end(), "normal");
  if (it == labels.end()) return std::nullopt;
  return static_cast<int>(it - labels.begin());
}

void LabelSpace::validate() const {
  if (iteration != 0 && iteration != 1) throw DataError("label space iteration must be 0 or 1");
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (!seen.insert(l).second) throw DataError("duplicate label '" + l + "'");
  }
  for (const auto& [id, idx] : assignment) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= labels.size()) {
      throw DataError("example '" + id + "' assigned to out-of-range class " + std::to_string(idx));
    }
  }
}

json LabelSpace::to_json() const {
  json j;
  j["iteration"] = iteration;
  j["labels"] = labels;
  j["assignment"] = json::object();
  for (const auto& [id, idx] : assignment) j["assignment"][id] = idx;
  return j;
}

LabelSpace LabelSpace::from_json(const json& j) {
  LabelSpace s;
  try {
    s.iteration = j.at("iteration").get<int>();
    s.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& [id, idx] : j.at("assignment").items()) s.assignment[id] = idx.get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed label space: ") + e.what());
  }
  s.validate();
  return s;
}

void LabelSpace::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

LabelSpace LabelSpace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("label space not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

LabelSpace mine_labels(Corpus& corpus, int min_support, MiningReport* report) {
  if (min_support < 1) throw ConfigError("min_support must be at least 1");
  struct Pattern {
    std::string name;
    std::vector<std::size_t> members;
  };
  std::map<std::vector<std::string>, Pattern> patterns;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto key = corpus[i].terms;
    std::sort(key.begin(), key.end());
    auto& p = patterns[key];
    if (p.members.empty()) {
      // Display name keeps first-occurrence order without repeats.
      std::vector<std::string> uniq;
      for (const auto& t : corpus[i].terms) {
        if (std::find(uniq.begin(), uniq.end(), t) == uniq.end()) uniq.push_back(t);
      }
      p.name = join(uniq, "/");
    }
    p.members.push_back(i);
  }

  std::vector<const Pattern*> kept;
  for (const auto& [_, p] : patterns) {
    if (static_cast<int>(p.members.size()) >= min_support) kept.push_back(&p);
  }
  if (kept.empty()) {
    throw DataError("no annotation pattern occurs at least " + std::to_string(min_support) +
                    " times; lower min_support");
  }
  std::sort(kept.begin(), kept.end(), [](const Pattern* a, const Pattern* b) {
    if (a->members.size() != b->members.size()) return a->members.size() > b->members.size();
    return a->name < b->name;
  });

  LabelSpace space;
  for (auto& ex : corpus) ex.label.reset();
  std::size_t labeled = 0;
  for (const auto* p : kept) {
    // Distinct multisets can share a display name ("a/a/b" vs "a/b"); keep them apart.
    std::string name = p->name;
    if (std::find(space.labels.begin(), space.labels.end(), name) != space.labels.end()) {
      name += "+" + std::to_string(space.labels.size());
    }
    const int idx = static_cast<int>(space.labels.size());
    space.labels.push_back(name);
    for (auto m : p->members) {
      space.assignment[corpus[m].id] = idx;
      corpus[m].label = name;
    }
    labeled += p->members.size();
  }
  if (report) {
    report->patterns = kept.size();
    report->labeled = labeled;
    report->total = corpus.size();
    report->retained_fraction =
        corpus.empty() ? 0.0 : static_cast<double>(labeled) / static_cast<double>(corpus.size());
  }
  return space;
}

void apply_labels(Corpus& corpus, const LabelSpace& space) {
  for (auto& ex : corpus) {
    if (auto idx = space.class_of(ex.id)) {
      ex.label = space.labels[static_cast<std::size_t>(*idx)];
    } else {
      ex.label.reset();
    }
  }
}

// ---------------------------------------------------------------------------

std::string stratum_of(const AnnotatedImage& example) {
  if (example.label) return *example.label;
  return disease_key(example.terms);
}

void split_corpus(Corpus& corpus, const SplitConfig& config) {
  if (config.val_fraction < 0 || config.test_fraction < 0 ||
      config.val_fraction + config.test_fraction >= 1.0) {
    throw ConfigError("split fractions must leave a positive training share");
  }
  if (config.min_eval_per_label < 0) throw ConfigError("min_eval_per_label must be non-negative");

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < corpus.size(); ++i) strata[stratum_of(corpus[i])].push_back(i);

  struct Plan {
    std::size_t n_val, n_test;
  };
  std::map<std::string, Plan> plans;
  std::vector<std::string> offending;
  for (const auto& [name, members] : strata) {
    const auto n = members.size();
    const auto floor_share = [&](double f) {
      return std::max(static_cast<std::size_t>(f * static_cast<double>(n)),
                      static_cast<std::size_t>(config.min_eval_per_label));
    };
    Plan p{floor_share(config.val_fraction), floor_share(config.test_fraction)};
    if (p.n_val + p.n_test >= n) {
      offending.push_back(name + " (" + std::to_string(n) + " cases)");
    }
    plans[name] = p;
  }
  if (!offending.empty()) {
    std::string msg = "labels too small for min_eval_per_label=" +
                      std::to_string(config.min_eval_per_label) + ": ";
    for (std::size_t i = 0; i < offending.size(); ++i) msg += (i ? ", " : "") + offending[i];
    throw DataError(msg);
  }

  Rng rng(config.seed);
  for (auto& [name, members] : strata) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto& p = plans[name];
    for (std::size_t j = 0; j < members.size(); ++j) {
      auto& ex = corpus[members[j]];
      ex.split = j < p.n_val ? Split::val : (j < p.n_val + p.n_test ? Split::test : Split::train);
    }
  }
}

json splits_to_json(const Corpus& corpus) {
  json j = json::object();
  for (const auto& ex : corpus) j[ex.id] = to_string(ex.split);
  return j;
}

void apply_splits(Corpus& corpus, const json& splits) {
  for (auto& ex : corpus) {
    auto it = splits.find(ex.id);
    ex.split = it == splits.end() ? Split::none : parse_split(it->get<std::string>());
  }
}

// ---------------------------------------------------------------------------

Corpus ingest(const std::filesystem::path& dir, const IngestOptions& options, IngestReport* report) {
  if (options.side <= 0) throw ConfigError("image side must be positive");
  const auto index = dir / "index.jsonl";
  std::ifstream in(index);
  if (!in) throw MissingArtifactError("corpus index not found: " + index.string());

  Corpus corpus;
  IngestReport rep;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++rep.records;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      spdlog::warn("{}:{}: unparseable record skipped ({})", index.string(), lineno, e.what());
      ++rep.skipped;
      continue;
    }
    const auto id = rec.value("id", std::string{});
    const auto image = rec.value("image", std::string{});
    const auto annotation = rec.value("annotation", std::string{});
    if (id.empty() || image.empty()) {
      spdlog::warn("{}:{}: record without id or image skipped", index.string(), lineno);
      ++rep.skipped;
      continue;
    }
    if (!ids.insert(id).second) {
      spdlog::warn("{}:{}: duplicate id '{}' skipped", index.string(), lineno, id);
      ++rep.skipped;
      continue;
    }
    if (tokenize(annotation).empty()) {
      spdlog::warn("example '{}' has an empty annotation; skipped", id);
      ++rep.skipped;
      continue;
    }
    Image img;
    try {
      img = read_pgm(dir / image);
    } catch (const DataError& e) {
      spdlog::warn("example '{}': {}; skipped", id, e.what());
      ++rep.skipped;
      continue;
    }
    auto ex = make_example(id, resize_bilinear(img, options.side, options.side), annotation);
    if (rec.contains("split")) ex.split = parse_split(rec["split"].get<std::string>());
    if (rec.contains("context")) ex.context = rec["context"].get<int>();
    corpus.push_back(std::move(ex));
    ++rep.loaded;
  }
  if (rep.records == 0) spdlog::warn("corpus index {} has no records", index.string());
  if (report) *report = rep;
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream out(dir / "index.jsonl", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "index.jsonl").string());
  for (const auto& ex : corpus) {
    const std::string rel = "images/" + ex.id + ".pgm";
    write_pgm(dir / rel, ex.pixels);
    json rec = {{"id", ex.id}, {"image", rel}, {"annotation", ex.annotation}};
    if (ex.split != Split::none) rec["split"] = to_string(ex.split);
    if (ex.context >= 0) rec["context"] = ex.context;
    out << rec.dump() << '\n';
  }
}

std::vector<const AnnotatedImage*> select(const Corpus& corpus, Split split) {
  std::vector<const AnnotatedImage*> out;
  for (const auto& ex : corpus) {
    if (ex.split == split) out.push_back(&ex);
  }
  return out;
}

}  // namespace rnc
