#include "glyphforge/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "glyphforge/error.hpp"
#include "json.hpp"

namespace glyphforge {

using nlohmann::json;

namespace {

struct VocabEntry {
  const char* name;
  const char* hanzi;
};

constexpr VocabEntry kPitch[] = {{"He", "合"},   {"Si", "四"},  {"Yi", "一"},  {"Shang", "上"},
                                 {"Gou", "勾"},  {"Che", "尺"}, {"Gong", "工"}, {"Fan", "凡"},
                                 {"Liu", "六"},  {"Wu", "五"},  {"Gao Wu", "高五"}};
constexpr VocabEntry kSecondary[] = {{"None", "(None)"},     {"Dadun", "大顿"}, {"Xiaozhu", "小住"}, {"Dingzhu", "丁住"},
                                     {"Dazhu", "大住"}, {"Zhe", "折"},     {"Ye", "拽"}};
constexpr VocabEntry kLvlv[] = {
    {"Huangzhong", "黄钟"},      {"Dalu", "大吕"},           {"Taicu", "太簇"},       {"Jiazhong", "夹钟"},
    {"Guxian", "姑洗"},          {"Zhonglü", "仲吕"},        {"Ruibin", "蕤宾"},      {"Linzhong", "林钟"},
    {"Yize", "夷则"},            {"Nanlü", "南吕"},          {"Wuyi", "无射"},        {"Yingzhong", "应钟"},
    {"Huangzhong Qing", "黄钟清"}, {"Dalu Qing", "大吕清"}, {"Taicu Qing", "太簇清"}, {"Jiazhong Qing", "夹钟清"},
    {"Zhezi", "折字"}};

// Lowercase ASCII, drop separators, fold ü and v to u.
std::string fold(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == 0xC3 && i + 1 < s.size() && (static_cast<unsigned char>(s[i + 1]) == 0xBC ||
                                          static_cast<unsigned char>(s[i + 1]) == 0x9C)) {
      out += 'u';
      ++i;
    } else if (c == ' ' || c == '_' || c == '-') {
      continue;
    } else if (c < 0x80) {
      const char l = static_cast<char>(std::tolower(c));
      out += l == 'v' ? 'u' : l;
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

struct Vocab {
  std::vector<std::string> names;
  std::map<std::string, std::size_t> lookup;
};

template <std::size_t N>
Vocab make_vocab(const VocabEntry (&entries)[N]) {
  Vocab v;
  for (std::size_t i = 0; i < N; ++i) {
    v.names.emplace_back(entries[i].name);
    v.lookup.emplace(fold(entries[i].name), i);
    v.lookup.emplace(fold(entries[i].hanzi), i);
  }
  return v;
}

const Vocab& vocab_of(LabelKey key) {
  static const Vocab pitch = make_vocab(kPitch);
  static const Vocab secondary = make_vocab(kSecondary);
  static const Vocab lvlv = make_vocab(kLvlv);
  static const Vocab joint = [] {
    Vocab v;
    for (const auto& p : pitch.names)
      for (const auto& s : secondary.names) {
        v.lookup.emplace(fold(p + "/" + s), v.names.size());
        v.names.push_back(p + "/" + s);
      }
    return v;
  }();
  switch (key) {
    case LabelKey::pitch:
      return pitch;
    case LabelKey::secondary:
      return secondary;
    case LabelKey::lvlv:
      return lvlv;
    case LabelKey::joint:
      break;
  }
  return joint;
}

bool key_fits(Notation n, LabelKey k) {
  return n == Notation::lvlvpu ? k == LabelKey::lvlv : k != LabelKey::lvlv;
}

std::string instance_where(std::size_t i, const std::string& id) {
  return "instance " + std::to_string(i) + (id.empty() ? "" : " ('" + id + "')");
}

const json* optional_field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

std::string string_field(const json& obj, const char* key, const std::string& where, bool required = true) {
  const json* v = optional_field(obj, key);
  if (v == nullptr) {
    require(!required, ErrorCode::schema, where + ": missing field '" + key + "'");
    return {};
  }
  require(v->is_string(), ErrorCode::schema, where + ": field '" + key + "' must be a string");
  return v->get<std::string>();
}

int parse_label(LabelKey key, const std::string& name, const std::string& where) {
  const auto idx = find_label(key, name);
  require(idx.has_value(), ErrorCode::unknown_label,
          where + ": " + std::string(to_string(key)) + " label '" + name + "' is not in the vocabulary");
  return static_cast<int>(*idx);
}

void place(const FloatImage& content, std::size_t canvas, std::size_t oy, std::size_t ox, float* out) {
  std::fill(out, out + canvas * canvas, normalize_pixel(kWhite));
  for (std::size_t y = 0; y < content.height; ++y)
    for (std::size_t x = 0; x < content.width; ++x)
      out[(oy + y) * canvas + ox + x] = std::clamp(normalize_pixel(content.at(y, x)), -1.0f, 1.0f);
}

FloatImage source_of(const GrayImage& image, const AugmentSpec& spec) {
  require(!image.empty(), ErrorCode::invalid_argument, "transform: empty image");
  require(image.height <= kMaxImageSide && image.width <= kMaxImageSide, ErrorCode::invalid_argument,
          "transform: image " + std::to_string(image.height) + "x" + std::to_string(image.width) + " exceeds " +
              std::to_string(kMaxImageSide) + " px per side");
  return FloatImage::from(spec.denoise ? median3x3(image) : image);
}

}  // namespace

std::string_view to_string(Notation n) noexcept { return n == Notation::suzipu ? "suzipu" : "lvlvpu"; }

Notation parse_notation(std::string_view name) {
  const std::string f = fold(name);
  if (f == "suzipu") return Notation::suzipu;
  if (f == "lulupu" || f == "lvlvpu" || f == "lilupu") return Notation::lvlvpu;
  fail(ErrorCode::invalid_argument, "unknown notation '" + std::string(name) + "' (expected suzipu or lvlvpu)");
}

std::string_view to_string(LabelKey k) noexcept {
  switch (k) {
    case LabelKey::pitch:
      return "pitch";
    case LabelKey::secondary:
      return "secondary";
    case LabelKey::joint:
      return "joint";
    case LabelKey::lvlv:
      break;
  }
  return "lvlv";
}

LabelKey parse_label_key(std::string_view name) {
  for (auto k : {LabelKey::pitch, LabelKey::secondary, LabelKey::joint, LabelKey::lvlv})
    if (name == to_string(k)) return k;
  fail(ErrorCode::invalid_argument, "unknown label key '" + std::string(name) + "'");
}

const std::vector<std::string>& pitch_vocabulary() { return vocab_of(LabelKey::pitch).names; }
const std::vector<std::string>& secondary_vocabulary() { return vocab_of(LabelKey::secondary).names; }
const std::vector<std::string>& lvlv_vocabulary() { return vocab_of(LabelKey::lvlv).names; }
const std::vector<std::string>& joint_vocabulary() { return vocab_of(LabelKey::joint).names; }
const std::vector<std::string>& vocabulary(LabelKey key) { return vocab_of(key).names; }

std::optional<std::size_t> find_label(LabelKey key, std::string_view name) {
  const auto& v = vocab_of(key);
  const auto it = v.lookup.find(fold(name));
  if (it == v.lookup.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>& reserved_editions() {
  static const std::vector<std::string> r{"Lu", "Zhang", "Siku", "Zhu", "Shanghai", std::string(kArtificialEdition)};
  return r;
}

std::size_t GlyphInstance::label(LabelKey key) const {
  require(key_fits(notation, key), ErrorCode::invalid_argument,
          "instance '" + id + "': " + std::string(to_string(notation)) + " has no " + std::string(to_string(key)) +
              " label");
  switch (key) {
    case LabelKey::pitch:
      return static_cast<std::size_t>(pitch);
    case LabelKey::secondary:
      return static_cast<std::size_t>(secondary);
    case LabelKey::joint:
      return static_cast<std::size_t>(pitch) * kSecondaryClasses + static_cast<std::size_t>(secondary);
    case LabelKey::lvlv:
      break;
  }
  return static_cast<std::size_t>(lvlv);
}

std::vector<std::string> Corpus::editions() const {
  std::vector<std::string> out;
  for (const auto& g : instances)
    if (std::find(out.begin(), out.end(), g.edition) == out.end()) out.push_back(g.edition);
  return out;
}

std::map<std::pair<std::string, std::string>, std::size_t> Corpus::class_edition_counts() const {
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  const LabelKey key = stratification_key(notation);
  for (const auto& g : instances) ++counts[{vocabulary(key)[g.label(key)], g.edition}];
  return counts;
}

std::size_t Corpus::trainable_count() const {
  return static_cast<std::size_t>(
      std::count_if(instances.begin(), instances.end(), [](const GlyphInstance& g) { return !g.excluded; }));
}

LabelKey stratification_key(Notation n) noexcept { return n == Notation::suzipu ? LabelKey::joint : LabelKey::lvlv; }

Corpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open manifest " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::schema, manifest_path.string() + ": invalid JSON: " + e.what());
  }
  const std::string where = manifest_path.string();
  require(doc.is_object(), ErrorCode::schema, where + ": manifest must be a JSON object");
  const json* version = optional_field(doc, "version");
  require(version != nullptr && version->is_number_integer(), ErrorCode::schema,
          where + ": missing integer 'version'");
  require(version->get<std::int64_t>() == 1, ErrorCode::schema,
          where + ": unsupported manifest version " + version->dump());
  Corpus corpus;
  corpus.notation = [&] {
    const std::string n = string_field(doc, "notation", where);
    try {
      return parse_notation(n);
    } catch (const Error&) {
      fail(ErrorCode::schema, where + ": unknown notation '" + n + "'");
    }
  }();
  const json* list = optional_field(doc, "instances");
  require(list != nullptr && list->is_array(), ErrorCode::schema, where + ": 'instances' must be an array");

  const auto base = manifest_path.parent_path();
  std::set<std::string> ids;
  const bool suzipu = corpus.notation == Notation::suzipu;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& item = (*list)[i];
    require(item.is_object(), ErrorCode::schema, where + ": " + instance_where(i, "") + " must be an object");
    GlyphInstance g;
    g.notation = corpus.notation;
    g.id = string_field(item, "id", where + ": " + instance_where(i, ""));
    const std::string at = where + ": " + instance_where(i, g.id);
    require(!g.id.empty(), ErrorCode::schema, at + ": empty id");
    require(ids.insert(g.id).second, ErrorCode::duplicate_id, at + ": duplicate instance id");
    g.source_path = string_field(item, "image", at);
    require(!g.source_path.empty(), ErrorCode::schema, at + ": empty image path");
    g.edition = string_field(item, "edition", at);
    require(!g.edition.empty(), ErrorCode::schema, at + ": empty edition");
    if (const json* ex = optional_field(item, "excluded")) {
      require(ex->is_boolean(), ErrorCode::schema, at + ": 'excluded' must be a boolean");
      g.excluded = ex->get<bool>();
    }
    const std::string pitch = string_field(item, "pitch", at, false);
    const std::string secondary = string_field(item, "secondary", at, false);
    const std::string lvlv = string_field(item, "lvlv", at, false);
    if (suzipu) {
      require(!pitch.empty() && !secondary.empty(), ErrorCode::schema, at + ": suzipu instances need pitch and secondary");
      require(lvlv.empty(), ErrorCode::schema, at + ": suzipu instance carries an lvlv label");
      g.pitch = parse_label(LabelKey::pitch, pitch, at);
      g.secondary = parse_label(LabelKey::secondary, secondary, at);
    } else {
      require(!lvlv.empty(), ErrorCode::schema, at + ": lvlvpu instances need an lvlv label");
      require(pitch.empty() && secondary.empty(), ErrorCode::schema,
              at + ": lvlvpu instance carries suzipu labels");
      g.lvlv = parse_label(LabelKey::lvlv, lvlv, at);
    }
    const auto path = base / g.source_path;
    require(std::filesystem::is_regular_file(path), ErrorCode::missing_file, at + ": image not found: " + path.string());
    g.image = read_image(path);
    corpus.instances.push_back(std::move(g));
  }
  return corpus;
}

std::vector<std::filesystem::path> save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  json list = json::array();
  std::vector<std::filesystem::path> written{dir / "manifest.json"};
  for (std::size_t i = 0; i < corpus.instances.size(); ++i) {
    const auto& g = corpus.instances[i];
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << i << ".png";
    write_png(g.image, dir / name.str());
    written.push_back(dir / name.str());
    json item{{"id", g.id}, {"image", name.str()}, {"edition", g.edition}};
    if (g.excluded) item["excluded"] = true;
    if (corpus.notation == Notation::suzipu) {
      item["pitch"] = pitch_vocabulary()[g.label(LabelKey::pitch)];
      item["secondary"] = secondary_vocabulary()[g.label(LabelKey::secondary)];
    } else {
      item["lvlv"] = lvlv_vocabulary()[g.label(LabelKey::lvlv)];
    }
    list.push_back(std::move(item));
  }
  json doc{{"version", 1}, {"notation", std::string(to_string(corpus.notation))}, {"instances", std::move(list)}};
  std::ofstream out(dir / "manifest.json");
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + (dir / "manifest.json").string());
  out << doc.dump(1) << '\n';
  return written;
}

Corpus merge_artificial(Corpus corpus, const std::filesystem::path& artificial_dir) {
  const auto manifest = artificial_dir / "manifest.json";
  if (!std::filesystem::exists(manifest)) {
    require(!std::filesystem::exists(artificial_dir) || std::filesystem::is_empty(artificial_dir),
            ErrorCode::missing_file, artificial_dir.string() + ": no manifest.json in artificial-data directory");
    return corpus;
  }
  Corpus extra = load_corpus(manifest);
  require(extra.notation == corpus.notation, ErrorCode::schema,
          manifest.string() + ": notation " + std::string(to_string(extra.notation)) + " does not match corpus " +
              std::string(to_string(corpus.notation)));
  std::set<std::string> ids;
  for (const auto& g : corpus.instances) ids.insert(g.id);
  for (auto& g : extra.instances) {
    require(g.edition == kArtificialEdition, ErrorCode::schema,
            manifest.string() + ": artificial instance '" + g.id + "' has edition '" + g.edition +
                "' (must be 'artificial')");
    require(ids.insert(g.id).second, ErrorCode::duplicate_id,
            manifest.string() + ": artificial instance id '" + g.id + "' already in corpus");
    g.source_path = (artificial_dir / g.source_path).string();
    corpus.instances.push_back(std::move(g));
  }
  return corpus;
}

AugmentSpec AugmentSpec::for_notation(Notation n) {
  AugmentSpec s;
  if (n == Notation::suzipu) {
    s.resize_min = 30;
    s.resize_max = 42;
  }
  return s;
}

void AugmentSpec::validate() const {
  require(resize_min >= 1 && resize_min <= resize_max, ErrorCode::invalid_argument,
          "augment: need 1 <= resize_min <= resize_max");
  require(resize_max < canvas, ErrorCode::invalid_argument, "augment: resize_max must be below the canvas side");
  require(eval_resize >= 1 && eval_resize <= canvas, ErrorCode::invalid_argument,
          "augment: eval_resize must lie in [1, canvas]");
  require(rotate_deg >= 0 && rotate_deg < 90, ErrorCode::invalid_argument, "augment: rotate_deg must lie in [0, 90)");
}

void train_transform(const GrayImage& image, const AugmentSpec& spec, Rng& rng, float* out) {
  spec.validate();
  const FloatImage src = source_of(image, spec);
  const auto side = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(spec.resize_min), static_cast<std::int64_t>(spec.resize_max)));
  const auto [h, w] = fit_longest_side(src.height, src.width, side);
  const double theta = rng.uniform(-spec.rotate_deg, spec.rotate_deg);
  const FloatImage content = rotate_bilinear(resize_bilinear(src, h, w), theta);
  const auto oy = static_cast<std::size_t>(rng.between(0, static_cast<std::int64_t>(spec.canvas - h)));
  const auto ox = static_cast<std::size_t>(rng.between(0, static_cast<std::int64_t>(spec.canvas - w)));
  place(content, spec.canvas, oy, ox, out);
}

Tensor train_transform(const GrayImage& image, const AugmentSpec& spec, Rng& rng) {
  Tensor t({1, spec.canvas, spec.canvas});
  train_transform(image, spec, rng, t.data());
  return t;
}

void eval_transform(const GrayImage& image, const AugmentSpec& spec, float* out) {
  spec.validate();
  const FloatImage src = source_of(image, spec);
  const auto [h, w] = fit_longest_side(src.height, src.width, spec.eval_resize);
  place(resize_bilinear(src, h, w), spec.canvas, (spec.canvas - h) / 2, (spec.canvas - w) / 2, out);
}

Tensor eval_transform(const GrayImage& image, const AugmentSpec& spec) {
  Tensor t({1, spec.canvas, spec.canvas});
  eval_transform(image, spec, t.data());
  return t;
}

Tensor eval_batch(const Corpus& corpus, std::span<const std::size_t> members, const AugmentSpec& spec) {
  require(!members.empty(), ErrorCode::invalid_argument, "eval batch: no instances");
  const std::size_t plane = spec.canvas * spec.canvas;
  Tensor t({members.size(), 1, spec.canvas, spec.canvas});
  for (std::size_t i = 0; i < members.size(); ++i)
    eval_transform(corpus.instances.at(members[i]).image, spec, t.data() + i * plane);
  return t;
}

Tensor train_batch(const Corpus& corpus, std::span<const std::size_t> members, const AugmentSpec& spec,
                   std::uint64_t seed) {
  require(!members.empty(), ErrorCode::invalid_argument, "train batch: no instances");
  const std::size_t plane = spec.canvas * spec.canvas;
  Tensor t({members.size(), 1, spec.canvas, spec.canvas});
  for (std::size_t i = 0; i < members.size(); ++i) {
    Rng rng(derive_seed(seed, {i}));
    train_transform(corpus.instances.at(members[i]).image, spec, rng, t.data() + i * plane);
  }
  return t;
}

Split stratified_split(const Corpus& corpus, std::span<const std::size_t> members, double train_fraction,
                       std::uint64_t seed) {
  require(!members.empty(), ErrorCode::invalid_argument, "stratified split: empty corpus");
  require(train_fraction > 0.0 && train_fraction <= 1.0, ErrorCode::invalid_argument,
          "stratified split: train fraction must lie in (0, 1]");
  const LabelKey key = stratification_key(corpus.notation);
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (auto m : members) by_class[corpus.instances.at(m).label(key)].push_back(m);
  Rng rng(seed);
  Split s;
  for (auto& [cls, list] : by_class) {
    std::sort(list.begin(), list.end());
    for (std::size_t i = list.size(); i > 1; --i) std::swap(list[i - 1], list[rng.below(i)]);
    const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * list.size() - 1e-9));
    s.train.insert(s.train.end(), list.begin(), list.begin() + n_train);
    s.val.insert(s.val.end(), list.begin() + n_train, list.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

ClassUniformSampler::ClassUniformSampler(const Corpus& corpus, std::span<const std::size_t> members, LabelKey key,
                                         std::uint64_t seed)
    : rng_(seed) {
  require(!members.empty(), ErrorCode::invalid_argument, "sampler: no instances");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (auto m : members) groups[corpus.instances.at(m).label(key)].push_back(m);
  for (auto& [cls, list] : groups) {
    class_ids_.push_back(cls);
    by_class_.push_back(std::move(list));
  }
}

std::vector<std::size_t> ClassUniformSampler::next_batch(std::size_t batch_size) {
  std::vector<std::size_t> batch(batch_size);
  for (auto& b : batch) {
    const auto& list = by_class_[rng_.below(by_class_.size())];
    b = list[rng_.below(list.size())];
  }
  return batch;
}

std::vector<std::vector<std::size_t>> class_uniform_batches(const Corpus& corpus, std::span<const std::size_t> members,
                                                            std::size_t batch_size, std::size_t n_batches,
                                                            LabelKey key, std::uint64_t seed) {
  ClassUniformSampler sampler(corpus, members, key, seed);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(n_batches);
  for (std::size_t i = 0; i < n_batches; ++i) out.push_back(sampler.next_batch(batch_size));
  return out;
}

std::vector<std::size_t> all_members(const Corpus& corpus, bool trainable_only) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.instances.size(); ++i)
    if (!trainable_only || !corpus.instances[i].excluded) out.push_back(i);
  return out;
}

}  // namespace glyphforge
