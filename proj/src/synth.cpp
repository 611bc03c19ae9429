#include "rnc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "rnc/errors.hpp"
#include "rnc/ops.hpp"

namespace rnc {

using nlohmann::json;

namespace {

const char* kMotifNames[] = {"blob", "bar", "ring", "cross", "square", "vbar", "diamond", "triangle"};
const char* kSeverityNames[] = {"", "small", "large", "multiple"};

// Coverage in [0,1] of point (dx, dy) relative to a motif of radius r.
double coverage(Motif motif, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (motif) {
    case Motif::blob: {
      const double d2 = (dx * dx + dy * dy) / (r * r);
      return d2 > 1.0 ? 0.0 : 1.0 - 0.5 * d2;
    }
    case Motif::bar: return (ax <= r && ay <= 0.3 * r) ? 1.0 : 0.0;
    case Motif::vbar: return (ay <= r && ax <= 0.3 * r) ? 1.0 : 0.0;
    case Motif::ring: {
      const double d = std::sqrt(dx * dx + dy * dy);
      return (d <= r && d >= 0.55 * r) ? 1.0 : 0.0;
    }
    case Motif::cross:
      return ((ax <= r && ay <= 0.22 * r) || (ay <= r && ax <= 0.22 * r)) ? 1.0 : 0.0;
    case Motif::square: return (ax <= 0.8 * r && ay <= 0.8 * r) ? 1.0 : 0.0;
    case Motif::diamond: return (ax + ay <= r) ? 1.0 : 0.0;
    case Motif::triangle: return (dy >= -r && dy <= r && ax <= 0.5 * (dy + r)) ? 1.0 : 0.0;
  }
  return 0.0;
}

double anchor(const std::vector<std::string>& locations, const char* low, const char* high) {
  bool lo = false, hi = false;
  for (const auto& w : locations) {
    lo = lo || w == low;
    hi = hi || w == high;
  }
  if (lo == hi) return 0.5;
  return lo ? 0.28 : 0.72;
}

}  // namespace

Motif parse_motif(const std::string& name) {
  for (int i = 0; i < 8; ++i) {
    if (name == kMotifNames[i]) return static_cast<Motif>(i);
  }
  throw ConfigError("unknown motif '" + name + "'");
}

std::string to_string(Motif motif) { return kMotifNames[static_cast<int>(motif)]; }

void SynthSpec::validate() const {
  if (side < 8) throw ConfigError("synthetic image side must be at least 8");
  if (normal_prior < 0) throw ConfigError("normal_prior must be non-negative");
  if (bare_fraction < 0 || bare_fraction > 1) throw ConfigError("bare_fraction must be in [0,1]");
  if (severity_weights.size() != 4) throw ConfigError("severity_weights needs 4 entries");
  double total = normal_prior;
  for (double w : severity_weights) {
    if (w < 0) throw ConfigError("severity weights must be non-negative");
  }
  for (const auto& a : archetypes) {
    if (tokenize(a.name).empty()) throw ConfigError("archetype without a name");
    if (a.prior < 0) throw ConfigError("archetype prior must be non-negative");
    if (a.context_modes.empty()) throw ConfigError("archetype '" + a.name + "' has no context mode");
    for (const auto& mode : a.context_modes) {
      for (const auto& w : mode) {
        if (w != "left" && w != "right" && w != "upper" && w != "lower") {
          throw ConfigError("location '" + w + "' is not one of left/right/upper/lower");
        }
      }
    }
    // Severity word + disease tokens + locations must fit the 5-step horizon.
    for (const auto& mode : a.context_modes) {
      if (1 + tokenize(a.name).size() + mode.size() > 5) {
        throw ConfigError("archetype '" + a.name + "' annotations would exceed 5 tokens");
      }
    }
    total += a.prior;
  }
  if (total <= 0) throw ConfigError("class priors sum to zero");
}

json SynthSpec::to_json() const {
  json arch = json::array();
  for (const auto& a : archetypes) {
    arch.push_back({{"name", a.name}, {"motif", to_string(a.motif)}, {"prior", a.prior},
                    {"context_modes", a.context_modes}});
  }
  return {{"side", side},
          {"count", count},
          {"normal_prior", normal_prior},
          {"archetypes", arch},
          {"bare_fraction", bare_fraction},
          {"severity_weights", severity_weights},
          {"background", background},
          {"noise_sigma", noise_sigma},
          {"motif_intensity", motif_intensity},
          {"id_prefix", id_prefix},
          {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  SynthSpec s;
  try {
    s.side = j.value("side", s.side);
    s.count = j.value("count", s.count);
    s.normal_prior = j.value("normal_prior", s.normal_prior);
    s.bare_fraction = j.value("bare_fraction", s.bare_fraction);
    s.severity_weights = j.value("severity_weights", s.severity_weights);
    s.background = j.value("background", s.background);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.motif_intensity = j.value("motif_intensity", s.motif_intensity);
    s.id_prefix = j.value("id_prefix", s.id_prefix);
    s.seed = j.value("seed", s.seed);
    if (j.contains("archetypes")) {
      for (const auto& a : j["archetypes"]) {
        s.archetypes.push_back({a.at("name").get<std::string>(),
                                parse_motif(a.value("motif", std::string("blob"))),
                                a.value("prior", 0.1),
                                a.at("context_modes").get<std::vector<std::vector<std::string>>>()});
      }
    } else {
      s.archetypes = standard().archetypes;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

SynthSpec SynthSpec::standard() {
  SynthSpec s;
  // Two common diseases and six rare ones, mostly without a severity word.
  s.normal_prior = 0.49;
  s.severity_weights = {0.7, 0.1, 0.1, 0.1};
  s.archetypes = {
      {"calcified granuloma", Motif::blob, 0.15, {{"right", "upper"}, {"left", "lower"}}},
      {"opacity", Motif::square, 0.15, {{"left", "upper"}, {"right", "lower"}}},
      {"cardiomegaly", Motif::ring, 0.035, {{"left"}, {"right"}}},
      {"nodule", Motif::diamond, 0.035, {{"upper"}, {"lower"}}},
      {"atelectasis", Motif::bar, 0.035, {{"right", "lower"}, {"left", "upper"}}},
      {"effusion", Motif::vbar, 0.035, {{"left", "lower"}, {"right", "upper"}}},
      {"scarring", Motif::cross, 0.035, {{"right"}, {"left"}}},
      {"emphysema", Motif::triangle, 0.035, {{"lower"}, {"upper"}}},
  };
  return s;
}

std::string synth_annotation(const Archetype& archetype, Severity severity,
                             const std::vector<std::string>& locations, bool bare) {
  if (bare) return archetype.name;
  std::string out;
  if (severity != Severity::none) out = std::string(kSeverityNames[static_cast<int>(severity)]) + "/";
  out += archetype.name;
  for (const auto& w : locations) out += "/" + w;
  return out;
}

Image render_example(const SynthSpec& spec, const Archetype& archetype, Severity severity,
                     const std::vector<std::string>& locations, std::uint64_t seed,
                     RenderTruth* truth) {
  Rng rng(seed);
  const double S = spec.side;
  std::uniform_real_distribution<double> jitter(-0.04 * S, 0.04 * S);
  const double cx = anchor(locations, "left", "right") * S + jitter(rng);
  const double cy = anchor(locations, "upper", "lower") * S + jitter(rng);

  RenderTruth t;
  switch (severity) {
    case Severity::none: t.radius = 0.13 * S; break;
    case Severity::small: t.radius = 0.08 * S; break;
    case Severity::large: t.radius = 0.18 * S; break;
    case Severity::multiple: t.radius = 0.07 * S; break;
  }
  if (severity == Severity::multiple) {
    const double o = 0.09 * S;
    t.centers = {{cx - o, cy - 0.6 * o}, {cx + o, cy - 0.6 * o}, {cx, cy + o}};
  } else {
    t.centers = {{cx, cy}};
  }

  Image img(spec.side, spec.side);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (int y = 0; y < spec.side; ++y) {
    for (int x = 0; x < spec.side; ++x) {
      double cov = 0.0;
      for (const auto& [mx, my] : t.centers) {
        cov = std::max(cov, coverage(archetype.motif, x + 0.5 - mx, y + 0.5 - my, t.radius));
      }
      const double v = spec.background + cov * (spec.motif_intensity - spec.background) +
                       (spec.noise_sigma > 0 ? noise(rng) : 0.0);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  if (truth) *truth = t;
  return img;
}

Corpus synthesize(const SynthSpec& spec, std::vector<RenderTruth>* truths) {
  spec.validate();
  std::vector<double> weights{spec.normal_prior};
  for (const auto& a : spec.archetypes) weights.push_back(a.prior);

  Rng rng(spec.seed);
  std::discrete_distribution<int> cls(weights.begin(), weights.end());
  std::discrete_distribution<int> sev(spec.severity_weights.begin(), spec.severity_weights.end());
  std::bernoulli_distribution bare(spec.bare_fraction);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);

  Corpus corpus;
  corpus.reserve(spec.count);
  if (truths) truths->clear();
  char id[64];
  for (std::size_t i = 0; i < spec.count; ++i) {
    std::snprintf(id, sizeof id, "%s%05zu", spec.id_prefix.c_str(), i);
    const int c = cls(rng);
    const std::uint64_t image_seed = rng();
    if (c == 0) {
      Rng img_rng(image_seed);
      Image img(spec.side, spec.side);
      for (auto& p : img.pixels) {
        const double v = spec.background + (spec.noise_sigma > 0 ? noise(img_rng) : 0.0);
        p = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
      corpus.push_back(make_example(id, std::move(img), "normal"));
      if (truths) truths->push_back({});
      continue;
    }
    const auto& arch = spec.archetypes[static_cast<std::size_t>(c - 1)];
    const int mode = std::uniform_int_distribution<int>(
        0, static_cast<int>(arch.context_modes.size()) - 1)(rng);
    const auto severity = static_cast<Severity>(sev(rng));
    const bool is_bare = bare(rng);
    const auto& locs = arch.context_modes[static_cast<std::size_t>(mode)];
    RenderTruth truth;
    auto img = render_example(spec, arch, severity, locs, image_seed, &truth);
    auto ex = make_example(id, std::move(img), synth_annotation(arch, severity, locs, is_bare));
    ex.context = mode;
    corpus.push_back(std::move(ex));
    if (truths) truths->push_back(truth);
  }
  return corpus;
}

}  // namespace rnc
