#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glyphforge/data.hpp"
#include "glyphforge/model.hpp"

namespace glyphforge {

struct IndexEntry {
  std::string id;
  std::string edition;
  std::string label;  // joint name for suzipu ("pitch/secondary"), class name otherwise
  std::vector<float> feature;

  bool operator==(const IndexEntry&) const = default;
};

struct FeatureIndex {
  std::string fingerprint;  // model_fingerprint of the encoder
  std::size_t dim = 0;
  std::vector<IndexEntry> entries;

  bool operator==(const FeatureIndex&) const = default;
};

/// fc1 features of every non-excluded instance under the eval transform.
FeatureIndex build_feature_index(const ClassifierParams& model, const Corpus& corpus, const AugmentSpec& augment);

struct Neighbor {
  std::string id;
  std::string edition;
  std::string label;
  double distance = 0.0;
};

/// Exact Euclidean k nearest neighbors, ties broken by ascending id.
std::vector<Neighbor> query_knn(const FeatureIndex& index, std::span<const float> query, std::size_t k = 3);
/// Encodes `image` with `model` first; the model must be the index's encoder.
std::vector<Neighbor> query_knn(const FeatureIndex& index, const ClassifierParams& model, const GrayImage& image,
                                const AugmentSpec& augment, std::size_t k = 3);

inline constexpr char kIndexMagic[4] = {'G', 'I', 'D', 'X'};
inline constexpr std::uint32_t kIndexFormatVersion = 1;

/// "GIDX", u32 version, u32 header length, JSON header, then count * dim
/// little-endian floats.
std::string serialize(const FeatureIndex& index);
FeatureIndex deserialize_index(std::string_view bytes);
void save_index(const FeatureIndex& index, const std::filesystem::path& path);
FeatureIndex load_index(const std::filesystem::path& path);

}  // namespace glyphforge
