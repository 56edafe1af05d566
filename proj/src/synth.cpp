#include "glyphforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "glyphforge/error.hpp"

namespace glyphforge {

using nlohmann::json;

namespace {

struct Pt {
  double x, y;
};

// Quadratic Bezier from a to b through control c (a straight segment when c
// is the midpoint).
struct Stroke {
  Pt a, c, b;
};

std::vector<Stroke> strokes_for(const std::string& key, std::size_t min_strokes, std::size_t extra) {
  Rng rng(fnv1a(key.data(), key.size()));
  const std::size_t n = min_strokes + rng.below(extra + 1);
  std::vector<Stroke> out;
  while (out.size() < n) {
    const Pt a{rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92)};
    const Pt b{rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92)};
    const double dx = b.x - a.x, dy = b.y - a.y, len = std::hypot(dx, dy);
    if (len < 0.3) continue;
    const double bend = rng.uniform() < 0.5 ? 0.0 : rng.uniform(-0.35, 0.35);
    const Pt c{(a.x + b.x) / 2 - dy * bend, (a.y + b.y) / 2 + dx * bend};
    out.push_back({a, c, b});
  }
  return out;
}

// Strokes of the class in unit coordinates, tagged with their layout box.
struct Layer {
  std::vector<Stroke> strokes;
  double top, height;  // px, box spans x in [0, kTemplateSide)
};

constexpr double kSecondaryGap = 4.0, kSecondaryBand = 26.0;

std::vector<Layer> layers_for(Notation notation, std::size_t class_index) {
  if (notation == Notation::lvlvpu) {
    require(class_index < kLvlvClasses, ErrorCode::invalid_argument, "synth: lvlvpu class out of range");
    return {{strokes_for("lvlvpu:" + lvlv_vocabulary()[class_index], 3, 2), 0.0, double(kTemplateSide)}};
  }
  require(class_index < kPitchClasses * kSecondaryClasses, ErrorCode::invalid_argument,
          "synth: suzipu class out of range");
  const std::size_t p = class_index / kSecondaryClasses, s = class_index % kSecondaryClasses;
  std::vector<Layer> layers{{strokes_for("suzipu-pitch:" + pitch_vocabulary()[p], 3, 2), 0.0, double(kTemplateSide)}};
  // Secondary 0 is the absent mark.
  if (s != 0)
    layers.push_back({strokes_for("suzipu-secondary:" + secondary_vocabulary()[s], 1, 1),
                      kTemplateSide + kSecondaryGap, kSecondaryBand});
  return layers;
}

struct Style {
  double width = 4.0;
  double scale_x = 1.0, scale_y = 1.0, shear = 0.0;
  double jitter = 0.0;  // control-point noise in unit coordinates
  double ink = 30.0;    // gray level of a fully covered pixel
  double noise = 0.0;
};

constexpr std::size_t kPad = 16;

// Returns the crop of the rendered glyph: ink bounding box plus 2 px margin.
GrayImage render(const std::vector<Layer>& layers, const Style& st, Rng* rng) {
  double total_h = 0;
  for (const auto& l : layers) total_h = std::max(total_h, l.top + l.height);
  const std::size_t H = static_cast<std::size_t>(std::ceil(total_h)) + 2 * kPad, W = kTemplateSide + 2 * kPad;
  const double cx = W / 2.0, cy = H / 2.0;
  std::vector<float> cover(H * W, 0.0f);
  const double hw = st.width / 2.0;

  const auto map = [&](const Layer& l, Pt u) {
    if (rng != nullptr && st.jitter > 0) {
      u.x += rng->normal(0.0, st.jitter);
      u.y += rng->normal(0.0, st.jitter);
    }
    const double x = kPad + u.x * kTemplateSide, y = kPad + l.top + u.y * l.height;
    return Pt{st.scale_x * (x - cx) + st.shear * (y - cy) + cx, st.scale_y * (y - cy) + cy};
  };
  const auto segment = [&](Pt p, Pt q) {
    const double x0 = std::max(0.0, std::floor(std::min(p.x, q.x) - hw - 1));
    const double x1 = std::min(double(W - 1), std::ceil(std::max(p.x, q.x) + hw + 1));
    const double y0 = std::max(0.0, std::floor(std::min(p.y, q.y) - hw - 1));
    const double y1 = std::min(double(H - 1), std::ceil(std::max(p.y, q.y) + hw + 1));
    const double dx = q.x - p.x, dy = q.y - p.y, len2 = dx * dx + dy * dy;
    for (auto y = static_cast<std::size_t>(y0); y1 >= 0 && y <= static_cast<std::size_t>(y1); ++y)
      for (auto x = static_cast<std::size_t>(x0); x <= static_cast<std::size_t>(x1); ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double t = len2 > 0 ? std::clamp(((px - p.x) * dx + (py - p.y) * dy) / len2, 0.0, 1.0) : 0.0;
        const double d = std::hypot(px - (p.x + t * dx), py - (p.y + t * dy));
        const auto c = static_cast<float>(std::clamp(hw + 0.5 - d, 0.0, 1.0));
        float& slot = cover[y * W + x];
        slot = std::max(slot, c);
      }
  };
  constexpr int kSteps = 16;
  for (const auto& l : layers)
    for (const auto& s : l.strokes) {
      const Pt a = map(l, s.a), c = map(l, s.c), b = map(l, s.b);
      Pt prev = a;
      for (int k = 1; k <= kSteps; ++k) {
        const double t = double(k) / kSteps, u = 1 - t;
        const Pt cur{u * u * a.x + 2 * u * t * c.x + t * t * b.x, u * u * a.y + 2 * u * t * c.y + t * t * b.y};
        segment(prev, cur);
        prev = cur;
      }
    }

  std::size_t top = H, bottom = 0, left = W, right = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (cover[y * W + x] > 0.25f) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
  require(top <= bottom, ErrorCode::invalid_state, "synth: template rendered no ink");
  top = top >= 2 ? top - 2 : 0;
  left = left >= 2 ? left - 2 : 0;
  bottom = std::min(H - 1, bottom + 2);
  right = std::min(W - 1, right + 2);

  GrayImage img(bottom - top + 1, right - left + 1);
  for (std::size_t y = top; y <= bottom; ++y)
    for (std::size_t x = left; x <= right; ++x) {
      double v = kWhite - cover[y * W + x] * (kWhite - st.ink);
      if (rng != nullptr && st.noise > 0) v += rng->normal(0.0, st.noise);
      img.at(y - top, x - left) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return img;
}

const EditionProfile kBaseProfiles[] = {
    {"Lu", 0.0, 2.0, 5.0, false},           {"Zhang", 0.4, -3.0, 7.0, false}, {"Siku", -0.4, 0.0, 4.0, false},
    {"Zhu", 3.0, 15.0, 35.0, true},         {"Shanghai", 0.2, 4.0, 6.0, false},
};

}  // namespace

std::size_t ImbalanceProfile::count(std::size_t base, std::size_t rank) const {
  if (kind == Kind::uniform) return base;
  const double n = std::ceil(static_cast<double>(base) * std::pow(ratio, static_cast<double>(rank)) - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

void ImbalanceProfile::validate() const {
  require(kind == Kind::uniform || (ratio > 0.0 && ratio <= 1.0), ErrorCode::invalid_argument,
          "imbalance: geometric ratio must lie in (0, 1]");
}

SynthProfiles default_profiles(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x70726f66}));
  SynthProfiles p;
  for (auto e : kBaseProfiles) {
    e.stroke_width_bias *= rng.uniform(0.9, 1.1);
    e.slant_deg += rng.uniform(-0.5, 0.5);
    e.noise_sigma *= rng.uniform(0.9, 1.1);
    p.editions.push_back(e);
  }
  p.imbalance = {ImbalanceProfile::Kind::geometric, 0.85};
  return p;
}

json to_json(const SynthProfiles& p) {
  json eds = json::array();
  for (const auto& e : p.editions)
    eds.push_back({{"name", e.name},
                   {"stroke_width_bias", e.stroke_width_bias},
                   {"slant_deg", e.slant_deg},
                   {"noise_sigma", e.noise_sigma},
                   {"is_outlier", e.is_outlier}});
  return {{"editions", eds},
          {"imbalance",
           {{"kind", p.imbalance.kind == ImbalanceProfile::Kind::uniform ? "uniform" : "geometric"},
            {"ratio", p.imbalance.ratio}}}};
}

SynthProfiles profiles_from_json(const json& j) {
  try {
    SynthProfiles p;
    for (const auto& e : j.at("editions"))
      p.editions.push_back({e.at("name").get<std::string>(), e.at("stroke_width_bias").get<double>(),
                            e.at("slant_deg").get<double>(), e.at("noise_sigma").get<double>(),
                            e.at("is_outlier").get<bool>()});
    const auto& im = j.at("imbalance");
    const auto kind = im.at("kind").get<std::string>();
    require(kind == "uniform" || kind == "geometric", ErrorCode::schema, "profiles: unknown imbalance kind " + kind);
    p.imbalance = {kind == "uniform" ? ImbalanceProfile::Kind::uniform : ImbalanceProfile::Kind::geometric,
                   im.at("ratio").get<double>()};
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("profiles: ") + e.what());
  }
}

GrayImage render_template(Notation notation, std::size_t class_index) {
  return render(layers_for(notation, class_index), Style{}, nullptr);
}

Corpus gen_synthetic_corpus(const SynthOptions& o) {
  require(o.n_per_class >= 1, ErrorCode::invalid_argument, "synth: n_per_class must be at least 1");
  require(o.n_editions >= 1, ErrorCode::invalid_argument, "synth: n_editions must be at least 1");
  o.imbalance.validate();
  std::vector<EditionProfile> editions = o.editions ? *o.editions : default_profiles(o.seed).editions;
  require(!editions.empty(), ErrorCode::invalid_argument, "synth: no edition profiles");
  for (std::size_t i = editions.size(); i < o.n_editions; ++i)
    editions.push_back({"Edition" + std::to_string(i + 1), 0.0, 0.0, 5.0, false});
  editions.resize(o.n_editions);

  const LabelKey key = stratification_key(o.notation);
  const auto& vocab = vocabulary(key);
  Corpus corpus;
  corpus.notation = o.notation;
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    const auto layers = layers_for(o.notation, c);
    const std::size_t n = o.imbalance.count(o.n_per_class, c);
    for (std::size_t j = 0; j < n; ++j) {
      const EditionProfile& ed = editions[(j + c) % editions.size()];
      Rng rng(derive_seed(o.seed, {c, j}));
      Style st;
      st.width = std::max(1.2, 4.0 + ed.stroke_width_bias + rng.normal(0.0, 0.4));
      st.scale_x = rng.normal(1.0, 0.05);
      st.scale_y = rng.normal(1.0, 0.05);
      st.shear = std::tan((ed.slant_deg + rng.normal(0.0, 2.0)) * std::numbers::pi / 180.0);
      st.jitter = 0.02;
      st.ink = rng.uniform(10.0, 60.0);
      st.noise = ed.noise_sigma * rng.uniform(0.8, 1.2);

      GlyphInstance g;
      g.notation = o.notation;
      g.image = render(layers, st, &rng);
      g.edition = ed.name;
      g.id = ed.name + ":" + vocab[c] + ":" + std::to_string(j);
      g.source_path = "synthetic";
      if (o.notation == Notation::lvlvpu) {
        g.lvlv = static_cast<int>(c);
      } else {
        g.pitch = static_cast<int>(c / kSecondaryClasses);
        g.secondary = static_cast<int>(c % kSecondaryClasses);
      }
      corpus.instances.push_back(std::move(g));
    }
  }
  return corpus;
}

}  // namespace glyphforge
