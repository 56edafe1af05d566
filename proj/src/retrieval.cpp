#include "glyphforge/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "glyphforge/error.hpp"
#include "json.hpp"

namespace glyphforge {

using nlohmann::json;

namespace {

std::string label_name(const GlyphInstance& g) {
  if (g.notation == Notation::suzipu) return joint_vocabulary()[g.label(LabelKey::joint)];
  return lvlv_vocabulary()[g.label(LabelKey::lvlv)];
}

bool compatible(const ClassifierParams& model, Notation n) {
  if (n == Notation::suzipu) return model.vocabulary == pitch_vocabulary() || model.vocabulary == secondary_vocabulary();
  return model.vocabulary == lvlv_vocabulary();
}

}  // namespace

FeatureIndex build_feature_index(const ClassifierParams& model, const Corpus& corpus, const AugmentSpec& augment) {
  require(compatible(model, corpus.notation), ErrorCode::invalid_argument,
          "feature index: model vocabulary does not fit a " + std::string(to_string(corpus.notation)) + " corpus");
  FeatureIndex index;
  index.fingerprint = model_fingerprint(model);
  index.dim = model.arch.fc1_width;
  const auto members = all_members(corpus);
  constexpr std::size_t chunk = 128;
  for (std::size_t at = 0; at < members.size(); at += chunk) {
    const std::span<const std::size_t> part(members.data() + at, std::min(chunk, members.size() - at));
    const Tensor feats = extract_fc1(model, eval_batch(corpus, part, augment));
    require(feats.dim(1) == index.dim, ErrorCode::shape_mismatch, "feature index: fc1 width disagrees with arch");
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto& g = corpus.instances[part[i]];
      const float* row = feats.data() + i * index.dim;
      index.entries.push_back({g.id, g.edition, label_name(g), std::vector<float>(row, row + index.dim)});
    }
  }
  return index;
}

std::vector<Neighbor> query_knn(const FeatureIndex& index, std::span<const float> query, std::size_t k) {
  require(!index.entries.empty(), ErrorCode::invalid_argument, "query: empty index");
  require(k >= 1 && k <= index.entries.size(), ErrorCode::invalid_argument,
          "query: k must be in [1, " + std::to_string(index.entries.size()) + "]");
  require(query.size() == index.dim, ErrorCode::shape_mismatch,
          "query: feature has " + std::to_string(query.size()) + " values, index has " + std::to_string(index.dim));
  std::vector<std::pair<double, std::size_t>> d(index.entries.size());
  for (std::size_t e = 0; e < index.entries.size(); ++e) {
    const auto& f = index.entries[e].feature;
    double s = 0.0;
    for (std::size_t i = 0; i < index.dim; ++i) {
      const double diff = static_cast<double>(f[i]) - static_cast<double>(query[i]);
      s += diff * diff;
    }
    d[e] = {std::sqrt(s), e};
  }
  const auto less = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return index.entries[a.second].id < index.entries[b.second].id;
  };
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end(), less);
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& e = index.entries[d[i].second];
    out.push_back({e.id, e.edition, e.label, d[i].first});
  }
  return out;
}

std::vector<Neighbor> query_knn(const FeatureIndex& index, const ClassifierParams& model, const GrayImage& image,
                                const AugmentSpec& augment, std::size_t k) {
  require(model_fingerprint(model) == index.fingerprint, ErrorCode::invalid_argument,
          "query: model is not the encoder this index was built with");
  require(model.arch.fc1_width == index.dim, ErrorCode::invalid_argument,
          "query: fingerprint matches but the fc1 width does not");
  Tensor batch({1, 1, augment.canvas, augment.canvas});
  eval_transform(image, augment, batch.data());
  const Tensor feat = extract_fc1(model, batch);
  return query_knn(index, feat.values(), k);
}

// ---- .gidx ------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string serialize(const FeatureIndex& index) {
  json entries = json::array();
  for (const auto& e : index.entries) {
    require(e.feature.size() == index.dim, ErrorCode::shape_mismatch, "index entry " + e.id + " has the wrong width");
    entries.push_back({{"id", e.id}, {"edition", e.edition}, {"label", e.label}});
  }
  const std::string header =
      json{{"fingerprint", index.fingerprint}, {"dimension", index.dim}, {"count", index.entries.size()},
           {"entries", entries}}
          .dump();
  std::string out(kIndexMagic, 4);
  put_u32(out, kIndexFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out.reserve(out.size() + 4 * index.dim * index.entries.size());
  for (const auto& e : index.entries)
    for (float v : e.feature) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureIndex deserialize_index(std::string_view bytes) {
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kIndexMagic, 4) == 0, ErrorCode::bad_magic,
          "not a feature index");
  require(bytes.size() >= 12, ErrorCode::truncated, "index header cut short");
  const std::uint32_t version = get_u32(bytes, 4);
  require(version == kIndexFormatVersion, ErrorCode::bad_version,
          "index format version " + std::to_string(version) + " is not supported");
  const std::size_t header_len = get_u32(bytes, 8);
  require(bytes.size() - 12 >= header_len, ErrorCode::truncated, "index header cut short");
  FeatureIndex index;
  std::size_t count = 0;
  try {
    const json h = json::parse(bytes.substr(12, header_len));
    index.fingerprint = h.at("fingerprint").get<std::string>();
    index.dim = h.at("dimension").get<std::size_t>();
    count = h.at("count").get<std::size_t>();
    const auto& entries = h.at("entries");
    require(entries.is_array() && entries.size() == count, ErrorCode::schema, "index: entry count mismatch");
    for (const auto& e : entries)
      index.entries.push_back(
          {e.at("id").get<std::string>(), e.at("edition").get<std::string>(), e.at("label").get<std::string>(), {}});
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("index header: ") + e.what());
  }
  const std::size_t offset = 12 + header_len;
  require(bytes.size() - offset == 4 * index.dim * count, ErrorCode::truncated,
          "index feature block has " + std::to_string(bytes.size() - offset) + " bytes, expected " +
              std::to_string(4 * index.dim * count));
  for (std::size_t e = 0; e < count; ++e) {
    auto& f = index.entries[e].feature;
    f.resize(index.dim);
    for (std::size_t i = 0; i < index.dim; ++i)
      f[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * (e * index.dim + i)));
  }
  return index;
}

void save_index(const FeatureIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  const std::string bytes = serialize(index);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io, "write failed for " + path.string());
}

FeatureIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open index " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_index(ss.str());
}

}  // namespace glyphforge
