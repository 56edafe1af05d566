#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glyphforge/data.hpp"
#include "json.hpp"

namespace glyphforge {

struct EditionProfile {
  std::string name;
  double stroke_width_bias = 0.0;  // px added to the stroke width
  double slant_deg = 0.0;          // horizontal shear angle
  double noise_sigma = 0.0;        // gray levels
  bool is_outlier = false;

  bool operator==(const EditionProfile&) const = default;
};

struct ImbalanceProfile {
  enum class Kind { uniform, geometric };
  Kind kind = Kind::uniform;
  double ratio = 0.85;

  /// Instances for the class at `rank`: base, or ceil(base * ratio^rank).
  std::size_t count(std::size_t base, std::size_t rank) const;
  void validate() const;

  bool operator==(const ImbalanceProfile&) const = default;
};

struct SynthProfiles {
  std::vector<EditionProfile> editions;
  ImbalanceProfile imbalance;

  bool operator==(const SynthProfiles&) const = default;
};

/// Five editions named after the historical copies, the fourth (Zhu) being
/// the outlier; geometric imbalance with ratio 0.85.
SynthProfiles default_profiles(std::uint64_t seed);

nlohmann::json to_json(const SynthProfiles& p);
SynthProfiles profiles_from_json(const nlohmann::json& j);

struct SynthOptions {
  Notation notation = Notation::lvlvpu;
  std::size_t n_per_class = 20;
  std::size_t n_editions = 5;
  std::uint64_t seed = 0;
  ImbalanceProfile imbalance{};  // uniform unless set
  std::optional<std::vector<EditionProfile>> editions;  // default_profiles(seed) when empty
};

/// Class template rendered without jitter at the base side, before cropping.
GrayImage render_template(Notation notation, std::size_t class_index);

/// One class per vocabulary entry (77 joint classes for suzipu). Instance j
/// of class c goes to edition (j + c) mod n_editions.
Corpus gen_synthetic_corpus(const SynthOptions& options);

constexpr std::size_t kTemplateSide = 60;

}  // namespace glyphforge
