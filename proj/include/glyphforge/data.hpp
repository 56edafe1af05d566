#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glyphforge/image.hpp"
#include "glyphforge/rng.hpp"
#include "glyphforge/tensor.hpp"

namespace glyphforge {

enum class Notation { suzipu, lvlvpu };

std::string_view to_string(Notation n) noexcept;
Notation parse_notation(std::string_view name);

/// Which annotation a classifier (or a sampler / stratifier) keys on.
enum class LabelKey { pitch, secondary, joint, lvlv };

std::string_view to_string(LabelKey k) noexcept;
LabelKey parse_label_key(std::string_view name);

// Class inventories in canonical order. Names are pinyin; lookups also accept
// the Chinese names and ASCII spellings (case, spaces, and u/v for the umlaut
// are ignored).
const std::vector<std::string>& pitch_vocabulary();
const std::vector<std::string>& secondary_vocabulary();
const std::vector<std::string>& lvlv_vocabulary();
/// "pitch/secondary" for every pair, pitch-major.
const std::vector<std::string>& joint_vocabulary();
const std::vector<std::string>& vocabulary(LabelKey key);

/// Index of `name` in the key's vocabulary, or nullopt.
std::optional<std::size_t> find_label(LabelKey key, std::string_view name);

constexpr std::size_t kPitchClasses = 11, kSecondaryClasses = 7, kLvlvClasses = 17;
inline constexpr std::string_view kArtificialEdition = "artificial";
const std::vector<std::string>& reserved_editions();

struct GlyphInstance {
  std::string id;
  GrayImage image;
  Notation notation = Notation::lvlvpu;
  // Vocabulary indices; -1 where the notation has no such label.
  int pitch = -1;
  int secondary = -1;
  int lvlv = -1;
  std::string edition;
  std::string source_path;
  bool excluded = false;

  /// Class index under `key`; throws if the notation lacks that label.
  std::size_t label(LabelKey key) const;
};

struct Corpus {
  Notation notation = Notation::lvlvpu;
  std::vector<GlyphInstance> instances;

  /// Edition ids in order of first appearance.
  std::vector<std::string> editions() const;
  /// Instance count per (class name, edition) for the stratification key.
  std::map<std::pair<std::string, std::string>, std::size_t> class_edition_counts() const;
  std::size_t trainable_count() const;
};

/// Stratification key used for splits: joint annotation for suzipu.
LabelKey stratification_key(Notation n) noexcept;

Corpus load_corpus(const std::filesystem::path& manifest_path);
/// Writes `<dir>/manifest.json` and one PNG per instance under `<dir>/images/`.
/// Returns the paths written, manifest first.
std::vector<std::filesystem::path> save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// Appends the manifest under `artificial_dir` (if any) as training-only
/// instances. Every instance must carry the "artificial" edition.
Corpus merge_artificial(Corpus corpus, const std::filesystem::path& artificial_dir);

struct AugmentSpec {
  std::size_t resize_min = 33;
  std::size_t resize_max = 46;
  double rotate_deg = 9.0;
  std::size_t canvas = 48;
  std::size_t eval_resize = 40;
  bool denoise = false;

  static AugmentSpec for_notation(Notation n);
  void validate() const;
};

/// (v/255 - 0.5) / 0.5
constexpr float normalize_pixel(float v) noexcept { return v / 127.5f - 1.0f; }

/// Random resize, rotation, placement; writes canvas*canvas values to `out`.
void train_transform(const GrayImage& image, const AugmentSpec& spec, Rng& rng, float* out);
Tensor train_transform(const GrayImage& image, const AugmentSpec& spec, Rng& rng);
/// Longest side to eval_resize, centered (floor offsets), deterministic.
void eval_transform(const GrayImage& image, const AugmentSpec& spec, float* out);
Tensor eval_transform(const GrayImage& image, const AugmentSpec& spec = {});

/// Stacks eval transforms of `members` into an N x 1 x canvas x canvas batch.
Tensor eval_batch(const Corpus& corpus, std::span<const std::size_t> members, const AugmentSpec& spec);

/// Train-transformed batch; instance i uses an rng stream derived from
/// (seed, i) so results do not depend on evaluation order.
Tensor train_batch(const Corpus& corpus, std::span<const std::size_t> members, const AugmentSpec& spec,
                   std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per class of size n, ceil(fraction * n) members go to train. Indices refer
/// to corpus.instances and come back sorted.
Split stratified_split(const Corpus& corpus, std::span<const std::size_t> members, double train_fraction,
                       std::uint64_t seed);

/// Draws a present class uniformly, then one of its instances uniformly, with
/// replacement.
class ClassUniformSampler {
 public:
  ClassUniformSampler(const Corpus& corpus, std::span<const std::size_t> members, LabelKey key, std::uint64_t seed);

  std::vector<std::size_t> next_batch(std::size_t batch_size);
  std::size_t present_classes() const noexcept { return by_class_.size(); }
  /// Class index of each present class, ascending.
  const std::vector<std::size_t>& classes() const noexcept { return class_ids_; }

 private:
  std::vector<std::size_t> class_ids_;
  std::vector<std::vector<std::size_t>> by_class_;
  Rng rng_;
};

std::vector<std::vector<std::size_t>> class_uniform_batches(const Corpus& corpus, std::span<const std::size_t> members,
                                                            std::size_t batch_size, std::size_t n_batches,
                                                            LabelKey key, std::uint64_t seed);

/// Indices of all instances of the corpus, optionally skipping excluded ones.
std::vector<std::size_t> all_members(const Corpus& corpus, bool trainable_only = true);

}  // namespace glyphforge
