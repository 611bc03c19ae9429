#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "rnc/dataset.hpp"

namespace rnc {

enum class Motif { blob, bar, ring, cross, square, vbar, diamond, triangle };

Motif parse_motif(const std::string& name);
std::string to_string(Motif motif);

enum class Severity { none, small, large, multiple };

/// A synthetic disease: what it looks like and where it tends to appear.
/// Each context mode is a list of location words drawn from
/// {left, right, upper, lower}; the mode is the generator's hidden attribute.
struct Archetype {
  std::string name;
  Motif motif = Motif::blob;
  double prior = 0.1;
  std::vector<std::vector<std::string>> context_modes;
};

struct SynthSpec {
  int side = 32;
  std::size_t count = 600;
  double normal_prior = 0.4;
  std::vector<Archetype> archetypes;
  /// Share of diseased examples annotated with the disease name only.
  double bare_fraction = 0.0;
  /// Severity probabilities for none, small, large, multiple.
  std::vector<double> severity_weights = {0.25, 0.25, 0.25, 0.25};
  double background = 60.0;
  double noise_sigma = 10.0;
  double motif_intensity = 200.0;
  std::string id_prefix = "syn";
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);

  /// 8 diseases plus normal, two context modes per disease.
  static SynthSpec standard();
};

/// Centres of the rendered motifs, in pixel coordinates.
struct RenderTruth {
  std::vector<std::pair<double, double>> centers;
  double radius = 0.0;
};

/// Renders one motif instance at the location implied by `locations`.
Image render_example(const SynthSpec& spec, const Archetype& archetype, Severity severity,
                     const std::vector<std::string>& locations, std::uint64_t seed,
                     RenderTruth* truth = nullptr);

/// "[severity/]disease[/loc]*"; the bare form is just the disease name.
std::string synth_annotation(const Archetype& archetype, Severity severity,
                             const std::vector<std::string>& locations, bool bare);

/// Draws `count` examples. Class membership is a multinomial draw from the
/// priors (normal_prior plus each archetype's prior, renormalized).
Corpus synthesize(const SynthSpec& spec, std::vector<RenderTruth>* truths = nullptr);

}  // namespace rnc
