#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "glyphforge/calibrate.hpp"
#include "glyphforge/error.hpp"
#include "glyphforge/eval.hpp"
#include "glyphforge/grad_suite.hpp"
#include "glyphforge/retrieval.hpp"
#include "glyphforge/runtime.hpp"
#include "glyphforge/synth.hpp"
#include "glyphforge/train.hpp"

namespace glyphforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Collects written files relative to --out and emits artifacts.json at the end.
class Output {
 public:
  void open(const fs::path& dir) {
    dir_ = dir;
    fs::create_directories(dir_);
  }
  const fs::path& dir() const { return dir_; }

  fs::path path(const std::string& rel) const { return dir_ / rel; }

  void text(const std::string& rel, const std::string& content) {
    const auto p = path(rel);
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorCode::io, "cannot write " + p.string());
    f << content;
    require(static_cast<bool>(f), ErrorCode::io, "write failed for " + p.string());
    add(p);
  }
  void json_file(const std::string& rel, const json& j) { text(rel, j.dump(2) + "\n"); }
  void add(const fs::path& p) { files_.push_back(p); }

  std::vector<fs::path> finish(const std::string& command, const std::string& summary) {
    json list = json::array();
    for (const auto& f : files_) list.push_back(fs::relative(f, dir_).generic_string());
    const auto manifest = dir_ / "artifacts.json";
    std::ofstream m(manifest);
    m << json{{"command", command}, {"artifacts", list}, {"summary", summary}}.dump(2) << "\n";
    require(static_cast<bool>(m), ErrorCode::io, "cannot write " + manifest.string());
    auto out = files_;
    out.push_back(manifest);
    return out;
  }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
};

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// Training flags left unset fall back to the per-notation published schedule.
class TrainFlags {
 public:
  void add(CLI::App& app) {
    num(app, "--epochs", epochs_, "Training epochs (suzipu 80, lvlvpu 50)");
    num(app, "--batches", batches_, "Batches per epoch (suzipu 43, lvlvpu 21, lvlvpu + artificial 22)");
    num(app, "--batch-size", batch_size_, "Instances per batch (100)");
    num(app, "--lr", lr_, "Adam learning rate (suzipu 1e-3, lvlvpu 5e-4)");
    num(app, "--weight-decay", weight_decay_, "Adam weight decay (1e-4)");
    num(app, "--gamma", gamma_, "Focal loss gamma (1)");
    num(app, "--patience", patience_, "Plateau patience in epochs (5)");
    num(app, "--plateau-factor", factor_, "Learning-rate factor on plateau (0.5)");
    num(app, "--min-lr", min_lr_, "Learning-rate floor (1e-6)");
    num(app, "--resize-min", resize_min_, "Smallest random resize side (suzipu 30, lvlvpu 33)");
    num(app, "--resize-max", resize_max_, "Largest random resize side (suzipu 42, lvlvpu 46)");
    num(app, "--rotate", rotate_, "Max random rotation in degrees (9)");
    num(app, "--eval-resize", eval_resize_, "Eval-time longest side (40)");
    app.add_flag("--denoise", denoise_, "Apply a 3x3 median filter before the transforms (off)");
  }

  TrainConfig resolve(Notation n, bool artificial) const {
    TrainConfig c = TrainConfig::for_notation(n, artificial);
    set("--epochs", c.epochs, epochs_);
    set("--batches", c.batches_per_epoch, batches_);
    set("--batch-size", c.batch_size, batch_size_);
    set("--lr", c.lr, lr_);
    set("--weight-decay", c.weight_decay, weight_decay_);
    set("--gamma", c.focal_gamma, gamma_);
    set("--patience", c.plateau_patience, patience_);
    set("--plateau-factor", c.plateau_factor, factor_);
    set("--min-lr", c.min_lr, min_lr_);
    set("--resize-min", c.augment.resize_min, resize_min_);
    set("--resize-max", c.augment.resize_max, resize_max_);
    set("--rotate", c.augment.rotate_deg, rotate_);
    set("--eval-resize", c.augment.eval_resize, eval_resize_);
    c.augment.denoise = denoise_;
    c.validate();
    return c;
  }

  AugmentSpec augment(Notation n) const { return resolve(n, false).augment; }

 private:
  template <class T>
  void num(CLI::App& app, const std::string& name, T& target, const std::string& help) {
    opts_[name] = app.add_option(name, target, help);
  }
  template <class T>
  void set(const std::string& name, T& field, const T& value) const {
    if (opts_.at(name)->count() > 0) field = value;
  }

  std::map<std::string, CLI::Option*> opts_;
  std::size_t epochs_ = 0, batches_ = 0, batch_size_ = 0, patience_ = 0, resize_min_ = 0, resize_max_ = 0,
              eval_resize_ = 0;
  double lr_ = 0, weight_decay_ = 0, gamma_ = 0, factor_ = 0, min_lr_ = 0, rotate_ = 0;
  bool denoise_ = false;
};

struct CorpusFlags {
  std::string manifest;
  std::string notation;
  std::string artificial;

  void add(CLI::App& app, bool with_artificial) {
    app.add_option("--corpus", manifest, "Corpus manifest (manifest.json)")->required();
    app.add_option("--notation", notation, "Expected notation (suzipu or lvlvpu); taken from the manifest if omitted");
    if (with_artificial)
      app.add_option("--artificial", artificial, "Directory with a manifest of artificial training-only instances");
  }

  Corpus load(bool merge = true) const {
    Corpus c = load_corpus(manifest);
    if (!notation.empty())
      require(parse_notation(notation) == c.notation, ErrorCode::schema,
              "--notation " + notation + " does not match the manifest's " + std::string(to_string(c.notation)));
    if (merge && !artificial.empty()) c = merge_artificial(std::move(c), artificial);
    return c;
  }
};

std::vector<ClassifierParams> load_heads(const std::vector<std::string>& paths, Notation n) {
  const auto keys = head_keys(n);
  require(paths.size() == keys.size(), ErrorCode::invalid_argument,
          "expected " + std::to_string(keys.size()) + " --model file(s) for " + std::string(to_string(n)) +
              (n == Notation::suzipu ? " (pitch, then secondary)" : ""));
  std::vector<ClassifierParams> out;
  for (std::size_t h = 0; h < keys.size(); ++h) {
    out.push_back(load_model(paths[h]));
    require(out.back().vocabulary == vocabulary(keys[h]), ErrorCode::schema,
            paths[h] + " is not a " + std::string(to_string(keys[h])) + " model");
  }
  return out;
}

std::vector<const ClassifierParams*> pointers(const std::vector<ClassifierParams>& v) {
  std::vector<const ClassifierParams*> out;
  for (const auto& p : v) out.push_back(&p);
  return out;
}

std::vector<std::size_t> members_of_edition(const Corpus& corpus, const std::string& edition) {
  std::vector<std::size_t> out;
  for (auto m : all_members(corpus))
    if (edition.empty() || corpus.instances[m].edition == edition) out.push_back(m);
  require(!out.empty(), ErrorCode::invalid_argument,
          edition.empty() ? std::string("corpus has no usable instances") : "no usable instances in edition " + edition);
  return out;
}

std::vector<std::size_t> members_by_id(const Corpus& corpus, const std::vector<std::string>& ids) {
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < corpus.instances.size(); ++i) where[corpus.instances[i].id] = i;
  std::vector<std::size_t> out;
  for (const auto& id : ids) {
    const auto it = where.find(id);
    require(it != where.end(), ErrorCode::schema, "instance " + id + " is not in the corpus");
    out.push_back(it->second);
  }
  return out;
}

std::string f1_csv(const F1Table& t) {
  std::ostringstream os;
  os << "class,precision,recall,f1,support,present\n" << std::setprecision(9);
  for (std::size_t c = 0; c < t.classes.size(); ++c) {
    const auto& m = t.classes[c];
    os << t.vocabulary[c] << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',' << m.support << ','
       << (m.present ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---- subcommands ------------------------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::optional<std::size_t> threads;

  void add(CLI::App& app, bool with_threads = false) {
    app.add_option("--seed", seed, "Seed for every random stream")->required();
    app.add_option("--out", out, "Output directory")->required();
    if (with_threads)
      app.add_option("--threads", threads, "Worker threads across folds and repeats (default GLYPH_FORGE_THREADS or 1)");
  }
};

using Runner = std::function<std::string(Output&, std::ostream& log)>;

struct Subcommand {
  CLI::App* app;
  Runner run;
};

Subcommand add_synth(CLI::App& root) {
  auto* app = root.add_subcommand("synth", "Generate a synthetic corpus (manifest + PNG images)");
  struct S {
    Common common;
    std::string notation = "lvlvpu", imbalance, profiles;
    std::size_t per_class = 20, editions = 5;
    double ratio = 0.85;
  };
  auto s = std::make_shared<S>();
  app->add_option("--notation", s->notation, "suzipu or lvlvpu")->capture_default_str();
  app->add_option("--per-class", s->per_class, "Instances per class (base count under imbalance)")->capture_default_str();
  app->add_option("--editions", s->editions, "Number of editions")->capture_default_str();
  app->add_option("--imbalance", s->imbalance, "uniform or geometric (default uniform, or the profile file's)")
      ->check(CLI::IsMember({"uniform", "geometric"}));
  app->add_option("--ratio", s->ratio, "Geometric per-rank ratio")->capture_default_str();
  app->add_option("--profiles", s->profiles, "Edition/imbalance profile JSON to use instead of the defaults");
  s->common.add(*app);
  return {app, [s, app](Output& out, std::ostream&) {
            SynthOptions o;
            o.notation = parse_notation(s->notation);
            o.n_per_class = s->per_class;
            o.n_editions = s->editions;
            o.seed = s->common.seed;
            if (!s->profiles.empty()) {
              std::ifstream f(s->profiles);
              require(static_cast<bool>(f), ErrorCode::missing_file, "cannot open " + s->profiles);
              json j;
              try {
                j = json::parse(f);
              } catch (const json::exception& e) {
                fail(ErrorCode::schema, s->profiles + ": " + e.what());
              }
              const auto p = profiles_from_json(j);
              o.editions = p.editions;
              o.imbalance = p.imbalance;
            }
            if (!s->imbalance.empty())
              o.imbalance.kind = s->imbalance == "geometric" ? ImbalanceProfile::Kind::geometric
                                                              : ImbalanceProfile::Kind::uniform;
            if (app->get_option("--ratio")->count() > 0) o.imbalance.ratio = s->ratio;
            const Corpus c = gen_synthetic_corpus(o);
            for (const auto& p : save_corpus(c, out.dir())) out.add(p);
            SynthProfiles used{o.editions ? *o.editions : default_profiles(o.seed).editions, o.imbalance};
            if (used.editions.size() > o.n_editions) used.editions.resize(o.n_editions);
            out.json_file("profiles.json", to_json(used));
            return "wrote " + std::to_string(c.instances.size()) + " instances";
          }};
}

Subcommand add_train(CLI::App& root) {
  auto* app = root.add_subcommand("train", "Train the classifier head(s) on one split");
  struct S {
    Common common;
    CorpusFlags corpus;
    TrainFlags train;
    std::string test_edition;
    double fraction = 0.75;
    std::size_t fc1 = 128;
  };
  auto s = std::make_shared<S>();
  s->corpus.add(*app, true);
  app->add_option("--test-edition", s->test_edition, "Edition held out as the test set (none by default)");
  app->add_option("--train-fraction", s->fraction, "Per-class share of the pool used for training")->capture_default_str();
  app->add_option("--fc1", s->fc1, "Width of the fc1 layer")->capture_default_str();
  s->train.add(*app);
  s->common.add(*app);
  return {app, [s](Output& out, std::ostream& log) {
            const Corpus corpus = s->corpus.load();
            const bool artificial = !s->corpus.artificial.empty();
            TrainConfig cfg = s->train.resolve(corpus.notation, artificial);
            std::vector<std::size_t> pool, test, extra;
            for (auto m : all_members(corpus)) {
              const auto& e = corpus.instances[m].edition;
              if (e == kArtificialEdition)
                extra.push_back(m);
              else if (!s->test_edition.empty() && e == s->test_edition)
                test.push_back(m);
              else
                pool.push_back(m);
            }
            require(s->test_edition.empty() || !test.empty(), ErrorCode::invalid_argument,
                    "no usable instances in edition " + s->test_edition);
            auto split = stratified_split(corpus, pool, s->fraction, derive_seed(s->common.seed, {0x5b17}));
            split.train.insert(split.train.end(), extra.begin(), extra.end());
            const auto ids = [&](const std::vector<std::size_t>& v) {
              json a = json::array();
              for (auto m : v) a.push_back(corpus.instances[m].id);
              return a;
            };
            out.json_file("split.json", {{"train", ids(split.train)}, {"val", ids(split.val)}, {"test", ids(test)}});

            ArchSpec arch;
            arch.fc1_width = s->fc1;
            std::string summary;
            json heads = json::array();
            const auto keys = head_keys(corpus.notation);
            for (std::size_t h = 0; h < keys.size(); ++h) {
              TrainConfig hc = cfg;
              hc.seed = derive_seed(s->common.seed, {0x7a1, h});
              const std::string key(to_string(keys[h]));
              auto result = train_model(arch, corpus, split.train, split.val, hc, keys[h], [&](const EpochRecord& e) {
                log << key << " epoch " << e.epoch + 1 << "/" << hc.epochs << " train " << fmt(e.train_loss, 4)
                    << " val " << fmt(e.val_loss, 4) << " acc " << fmt(100.0 * e.val_accuracy) << "% lr " << e.lr
                    << "\n";
              });
              save_model(result.params, out.path(key + ".glyf").string());
              out.add(out.path(key + ".glyf"));
              out.text("history_" + key + ".csv", result.history.to_csv());
              json hj{{"key", key}, {"model", key + ".glyf"}, {"fingerprint", model_fingerprint(result.params)},
                      {"final_val_accuracy", 100.0 * result.history.epochs.back().val_accuracy}};
              if (!test.empty()) {
                const double acc = 100.0 * head_accuracy(result.params, corpus, test, keys[h], hc.augment);
                hj["test_accuracy"] = acc;
                summary += key + " test " + fmt(acc) + "% ";
              } else {
                summary += key + " val " + fmt(100.0 * result.history.epochs.back().val_accuracy) + "% ";
              }
              heads.push_back(hj);
            }
            json cj = to_json(cfg);
            cj.erase("seed");
            out.json_file("train.json", {{"notation", to_string(corpus.notation)},
                                         {"seed", s->common.seed},
                                         {"test_edition", s->test_edition},
                                         {"train_fraction", s->fraction},
                                         {"fc1_width", s->fc1},
                                         {"config", cj},
                                         {"heads", heads}});
            if (!summary.empty()) summary.pop_back();
            return summary;
          }};
}

std::vector<double> temperatures_from(const std::vector<double>& flags, const std::string& calibration,
                                      std::size_t heads) {
  if (!calibration.empty()) {
    std::ifstream f(calibration);
    require(static_cast<bool>(f), ErrorCode::missing_file, "cannot open " + calibration);
    try {
      const json j = json::parse(f);
      std::vector<double> t;
      for (const auto& h : j.at("heads")) t.push_back(h.at("temperature").get<double>());
      require(t.size() == heads, ErrorCode::schema, calibration + ": head count does not match the models");
      return t;
    } catch (const json::exception& e) {
      fail(ErrorCode::schema, calibration + ": " + e.what());
    }
  }
  require(flags.empty() || flags.size() == heads, ErrorCode::invalid_argument, "give one --temperature per model");
  return flags;
}

Subcommand add_eval(CLI::App& root) {
  auto* app = root.add_subcommand("eval", "Evaluate trained head(s) on a corpus or one of its editions");
  struct S {
    Common common;
    CorpusFlags corpus;
    TrainFlags train;
    std::vector<std::string> models;
    std::vector<double> temperatures;
    std::string edition, split, calibration;
  };
  auto s = std::make_shared<S>();
  s->corpus.add(*app, false);
  app->add_option("--model", s->models, "Model file per head (suzipu: pitch then secondary)")->required();
  app->add_option("--edition", s->edition, "Restrict to one edition");
  app->add_option("--split", s->split, "split.json from train; evaluates its test ids");
  app->add_option("--temperature", s->temperatures, "Temperature per head (1)");
  app->add_option("--calibration", s->calibration, "calibration.json from calibrate; supplies temperatures");
  s->train.add(*app);
  s->common.add(*app);
  return {app, [s](Output& out, std::ostream&) {
            const Corpus corpus = s->corpus.load(false);
            const auto heads = load_heads(s->models, corpus.notation);
            const auto temps = temperatures_from(s->temperatures, s->calibration, heads.size());
            std::vector<std::size_t> members;
            if (!s->split.empty()) {
              std::ifstream f(s->split);
              require(static_cast<bool>(f), ErrorCode::missing_file, "cannot open " + s->split);
              members = members_by_id(corpus, json::parse(f).at("test").get<std::vector<std::string>>());
              require(!members.empty(), ErrorCode::invalid_argument, s->split + " has no test ids");
            } else {
              members = members_of_edition(corpus, s->edition);
            }
            const auto r = evaluate(pointers(heads), corpus, members, s->train.augment(corpus.notation), temps);
            out.json_file("eval.json", to_json(r));
            for (const auto& h : r.heads) out.text("f1_" + std::string(to_string(h.key)) + ".csv", f1_csv(h.f1));
            if (corpus.notation == Notation::suzipu) out.text("f1_joint.csv", f1_csv(r.joint_f1));
            return "n " + std::to_string(r.n_instances) + " accuracy " + fmt(r.joint_accuracy) + "% CER " + fmt(r.cer) +
                   "%";
          }};
}

Subcommand add_crossval(CLI::App& root) {
  auto* app = root.add_subcommand("crossval", "Leave-one-edition-out cross-validation with mean and best-model CSV tables");
  struct S {
    Common common;
    CorpusFlags corpus;
    TrainFlags train;
    std::size_t repeats = 10, fc1 = 128;
    std::string pairing = "all";
    double fraction = 0.75;
    bool no_models = false;
  };
  auto s = std::make_shared<S>();
  s->corpus.add(*app, true);
  app->add_option("--repeats", s->repeats, "Models per head and fold")->capture_default_str();
  app->add_option("--pairing", s->pairing, "suzipu joint pairing: all (repeats^2) or matched")
      ->check(CLI::IsMember({"all", "matched"}))
      ->capture_default_str();
  app->add_option("--train-fraction", s->fraction, "Per-class share of the pool used for training")->capture_default_str();
  app->add_option("--fc1", s->fc1, "Width of the fc1 layer")->capture_default_str();
  app->add_flag("--no-models", s->no_models, "Do not write the best model of each fold");
  s->train.add(*app);
  s->common.add(*app, true);
  return {app, [s](Output& out, std::ostream& log) {
            const Corpus base = s->corpus.load(false);
            const bool artificial = !s->corpus.artificial.empty();
            const auto make = [&](bool with_art) {
              CrossValConfig c;
              c.arch.fc1_width = s->fc1;
              c.train = s->train.resolve(base.notation, with_art);
              c.repeats = s->repeats;
              c.pairing = s->pairing == "all" ? Pairing::all_pairs : Pairing::matched;
              c.train_fraction = s->fraction;
              c.seed = s->common.seed;
              c.threads = resolve_threads(s->common.threads);
              c.keep_best_models = !s->no_models;
              c.log = [&log](const std::string& m) { log << m << "\n"; };
              return c;
            };
            const auto write_models = [&](const CrossValReport& r, const std::string& prefix) {
              for (const auto& f : r.folds)
                for (const auto& m : f.best_models) {
                  const auto rel = prefix + f.edition + "_" + (m.vocabulary == pitch_vocabulary()       ? "pitch"
                                                               : m.vocabulary == secondary_vocabulary() ? "secondary"
                                                                                                        : "lvlv") +
                                   ".glyf";
                  fs::create_directories(out.path(rel).parent_path());
                  save_model(m, out.path(rel).string());
                  out.add(out.path(rel));
                }
            };
            const auto audit = [](const CrossValReport& r) {
              json a = json::array();
              for (const auto& f : r.folds)
                a.push_back({{"edition", f.edition}, {"train", f.train_ids}, {"val", f.val_ids}, {"test", f.test_ids}});
              return a;
            };

            if (artificial && base.notation == Notation::lvlvpu) {
              log << "run 1/2: without artificial data\n";
              const auto plain = cross_validate(base, make(false));
              log << "run 2/2: with artificial data\n";
              const auto art = cross_validate(merge_artificial(base, s->corpus.artificial), make(true));
              out.json_file("crossval_nonart.json", to_json(plain));
              out.json_file("crossval_art.json", to_json(art));
              out.json_file("audit.json", {{"nonart", audit(plain)}, {"art", audit(art)}});
              out.text("table_mean.csv", mean_table_csv(plain, &art));
              out.text("table_best.csv", best_table_csv(plain, &art));
              write_models(plain, "models/nonart/");
              write_models(art, "models/art/");
              return "CER " + fmt(plain.cer.mean) + " +/- " + fmt(plain.cer.std) + " (art " + fmt(art.cer.mean) +
                     " +/- " + fmt(art.cer.std) + ")";
            }
            const Corpus corpus = artificial ? merge_artificial(base, s->corpus.artificial) : base;
            const auto r = cross_validate(corpus, make(artificial));
            out.json_file("crossval.json", to_json(r));
            out.json_file("audit.json", audit(r));
            out.text("table_mean.csv", mean_table_csv(r));
            out.text("table_best.csv", best_table_csv(r));
            write_models(r, "models/");
            return "CER " + fmt(r.cer.mean) + " +/- " + fmt(r.cer.std) + " over " + std::to_string(r.cer.n) + " samples";
          }};
}

Subcommand add_calibrate(CLI::App& root) {
  auto* app =
      root.add_subcommand("calibrate", "Fit a temperature per head on validation ids, report ECE on test ids");
  struct S {
    Common common;
    CorpusFlags corpus;
    TrainFlags train;
    std::vector<std::string> models;
    std::string split;
  };
  auto s = std::make_shared<S>();
  s->corpus.add(*app, false);
  app->add_option("--model", s->models, "Model file per head (suzipu: pitch then secondary)")->required();
  app->add_option("--split", s->split, "split.json from train (val ids fit T, test ids are held out)")->required();
  s->train.add(*app);
  s->common.add(*app);
  return {app, [s](Output& out, std::ostream&) {
            const Corpus corpus = s->corpus.load(false);
            const auto heads = load_heads(s->models, corpus.notation);
            std::ifstream f(s->split);
            require(static_cast<bool>(f), ErrorCode::missing_file, "cannot open " + s->split);
            json split;
            try {
              split = json::parse(f);
            } catch (const json::exception& e) {
              fail(ErrorCode::schema, s->split + ": " + e.what());
            }
            const auto val = members_by_id(corpus, split.at("val").get<std::vector<std::string>>());
            const auto test = members_by_id(corpus, split.at("test").get<std::vector<std::string>>());
            require(val.size() >= 10, ErrorCode::invalid_argument, "calibration needs at least 10 validation ids");
            const auto spec = s->train.augment(corpus.notation);
            const Tensor val_batch = eval_batch(corpus, val, spec);
            const Tensor test_batch = test.empty() ? Tensor() : eval_batch(corpus, test, spec);
            const auto keys = head_keys(corpus.notation);
            json hj = json::array();
            std::vector<double> temps;
            std::vector<Tensor> test_logits;
            for (std::size_t h = 0; h < heads.size(); ++h) {
              const TensorD vl = logits_chunked(heads[h], val_batch).cast<double>();
              const auto vlab = labels_of(corpus, val, keys[h]);
              CalibrationReport rep;
              if (test.empty()) {
                rep = calibrate(vl, vlab);
              } else {
                test_logits.push_back(logits_chunked(heads[h], test_batch));
                const TensorD tl = test_logits.back().cast<double>();
                rep = calibrate(vl, vlab, &tl, labels_of(corpus, test, keys[h]));
              }
              temps.push_back(rep.temperature);
              const std::string key(to_string(keys[h]));
              json j = to_json(rep);
              j["key"] = key;
              hj.push_back(j);
              out.text("bins_" + key + ".csv", bins_csv(rep));
            }
            json result{{"heads", hj}};
            std::string summary = "T";
            for (double t : temps) summary += " " + fmt(t, 4);
            if (!test.empty()) {
              const auto before = evaluate_logits(corpus.notation, test_logits, corpus, test);
              const auto after = evaluate_logits(corpus.notation, test_logits, corpus, test, temps);
              bool same = before.joint_accuracy == after.joint_accuracy && before.cer == after.cer;
              for (std::size_t h = 0; h < heads.size(); ++h)
                same = same && before.heads[h].predictions == after.heads[h].predictions;
              require(same, ErrorCode::invalid_state, "temperature scaling changed predictions");
              result["held_out"] = {{"accuracy", before.joint_accuracy},
                                    {"cer", before.cer},
                                    {"joint_ece_before", before.joint_ece},
                                    {"joint_ece_after", after.joint_ece},
                                    {"predictions_unchanged", same}};
              summary += " joint ECE " + fmt(before.joint_ece, 4) + " -> " + fmt(after.joint_ece, 4);
            }
            out.json_file("calibration.json", result);
            return summary;
          }};
}

Subcommand add_predict(CLI::App& root) {
  auto* app = root.add_subcommand("predict", "Classify images or a corpus");
  struct S {
    Common common;
    TrainFlags train;
    std::vector<std::string> models, images;
    std::vector<double> temperatures;
    std::string corpus, calibration, notation = "lvlvpu";
  };
  auto s = std::make_shared<S>();
  app->add_option("--model", s->models, "Model file per head (suzipu: pitch then secondary)")->required();
  app->add_option("--image", s->images, "Image file(s) to classify");
  app->add_option("--corpus", s->corpus, "Corpus manifest to classify instead of images");
  app->add_option("--notation", s->notation, "Notation of the models when classifying images")->capture_default_str();
  app->add_option("--temperature", s->temperatures, "Temperature per head (1)");
  app->add_option("--calibration", s->calibration, "calibration.json from calibrate; supplies temperatures");
  s->train.add(*app);
  s->common.add(*app);
  return {app, [s](Output& out, std::ostream&) {
            require(s->images.empty() != s->corpus.empty(), ErrorCode::invalid_argument,
                    "give either --image or --corpus");
            std::vector<std::string> names;
            Corpus corpus;
            if (!s->corpus.empty()) {
              corpus = load_corpus(s->corpus);
              for (const auto& g : corpus.instances) names.push_back(g.id);
            } else {
              corpus.notation = parse_notation(s->notation);
              for (const auto& p : s->images) {
                GlyphInstance g;
                g.id = p;
                g.image = read_image(p);
                g.notation = corpus.notation;
                corpus.instances.push_back(std::move(g));
                names.push_back(p);
              }
            }
            std::vector<std::size_t> members(corpus.instances.size());
            for (std::size_t i = 0; i < members.size(); ++i) members[i] = i;
            const auto heads = load_heads(s->models, corpus.notation);
            const auto temps = temperatures_from(s->temperatures, s->calibration, heads.size());
            const Tensor batch = eval_batch(corpus, members, s->train.augment(corpus.notation));
            std::vector<std::vector<HeadPrediction>> preds;
            for (std::size_t h = 0; h < heads.size(); ++h)
              preds.push_back(predict_head(logits_chunked(heads[h], batch), temps.empty() ? 1.0 : temps[h]));
            std::ostringstream csv;
            const auto keys = head_keys(corpus.notation);
            csv << "source";
            for (auto k : keys) csv << ',' << to_string(k) << ',' << to_string(k) << "_confidence";
            csv << '\n' << std::setprecision(6);
            for (std::size_t i = 0; i < names.size(); ++i) {
              csv << names[i];
              for (std::size_t h = 0; h < keys.size(); ++h)
                csv << ',' << vocabulary(keys[h])[preds[h][i].label] << ',' << preds[h][i].confidence;
              csv << '\n';
            }
            out.text("predictions.csv", csv.str());
            return "classified " + std::to_string(names.size()) + " image(s)";
          }};
}

Subcommand add_retrieve(CLI::App& root) {
  auto* app = root.add_subcommand("retrieve", "Build an fc1 feature index and look up nearest neighbors");
  struct S {
    Common common;
    TrainFlags train;
    std::string model, corpus, index;
    std::vector<std::string> images, ids;
    std::size_t k = 3;
  };
  auto s = std::make_shared<S>();
  app->add_option("--model", s->model, "Encoder model file")->required();
  app->add_option("--corpus", s->corpus, "Corpus manifest to index (or resolve --query-id against)");
  app->add_option("--index", s->index, "Existing .gidx index to query instead of building one");
  app->add_option("--query", s->images, "Query image file(s)");
  app->add_option("--query-id", s->ids, "Corpus instance id(s) to query with");
  app->add_option("-k,--k", s->k, "Neighbors per query")->capture_default_str();
  s->train.add(*app);
  s->common.add(*app);
  return {app, [s](Output& out, std::ostream&) {
            const ClassifierParams model = load_model(s->model);
            std::optional<Corpus> corpus;
            if (!s->corpus.empty()) corpus = load_corpus(s->corpus);
            const Notation n = corpus ? corpus->notation
                               : model.vocabulary == lvlv_vocabulary() ? Notation::lvlvpu
                                                                       : Notation::suzipu;
            const auto spec = s->train.augment(n);
            FeatureIndex index;
            if (!s->index.empty()) {
              index = load_index(s->index);
            } else {
              require(corpus.has_value(), ErrorCode::invalid_argument, "give --corpus to build an index, or --index");
              index = build_feature_index(model, *corpus, spec);
              save_index(index, out.path("index.gidx"));
              out.add(out.path("index.gidx"));
            }
            std::vector<std::pair<std::string, GrayImage>> queries;
            for (const auto& p : s->images) queries.emplace_back(p, read_image(p));
            if (!s->ids.empty()) {
              require(corpus.has_value(), ErrorCode::invalid_argument, "--query-id needs --corpus");
              for (auto m : members_by_id(*corpus, s->ids))
                queries.emplace_back(corpus->instances[m].id, corpus->instances[m].image);
            }
            std::ostringstream csv;
            csv << "query,rank,id,edition,label,distance\n" << std::setprecision(9);
            for (const auto& [name, image] : queries) {
              const auto hits = query_knn(index, model, image, spec, s->k);
              for (std::size_t r = 0; r < hits.size(); ++r)
                csv << name << ',' << r + 1 << ',' << hits[r].id << ',' << hits[r].edition << ',' << hits[r].label
                    << ',' << hits[r].distance << '\n';
            }
            if (!queries.empty()) out.text("neighbors.csv", csv.str());
            return "index of " + std::to_string(index.entries.size()) + " entries, " +
                   std::to_string(queries.size()) + " quer" + (queries.size() == 1 ? "y" : "ies");
          }};
}

Subcommand add_bench(CLI::App& root) {
  auto* app = root.add_subcommand("bench", "Time full evaluation passes (transform + inference)");
  struct S {
    Common common;
    CorpusFlags corpus;
    TrainFlags train;
    std::vector<std::string> models;
    std::string edition;
    std::size_t repeats = 5;
  };
  auto s = std::make_shared<S>();
  s->corpus.add(*app, false);
  app->add_option("--model", s->models, "Model file per head (suzipu: pitch then secondary)")->required();
  app->add_option("--edition", s->edition, "Restrict to one edition");
  app->add_option("--repeats", s->repeats, "Timed passes after one warm-up")->capture_default_str();
  s->train.add(*app);
  s->common.add(*app);
  return {app, [s](Output& out, std::ostream&) {
            const Corpus corpus = s->corpus.load(false);
            const auto heads = load_heads(s->models, corpus.notation);
            const auto members = members_of_edition(corpus, s->edition);
            const auto b = benchmark_inference(pointers(heads), corpus, members, s->train.augment(corpus.notation),
                                               s->repeats);
            out.json_file("bench.json", {{"n_instances", b.n_instances},
                                         {"repeats", b.repeats},
                                         {"mean_seconds", b.mean_seconds},
                                         {"std_seconds", b.std_seconds},
                                         {"seconds", b.seconds},
                                         {"joint_accuracy", b.report.joint_accuracy}});
            return fmt(b.mean_seconds, 3) + " +/- " + fmt(b.std_seconds, 3) + " s for " +
                   std::to_string(b.n_instances) + " instances";
          }};
}

Subcommand add_gradcheck(CLI::App& root) {
  auto* app = root.add_subcommand("gradcheck", "Finite-difference gradient suite in 64-bit");
  struct S {
    Common common;
    std::size_t seeds = 10;
    double epsilon = 1e-4;
  };
  auto s = std::make_shared<S>();
  app->add_option("--seeds", s->seeds, "Random draws per check")->capture_default_str();
  app->add_option("--epsilon", s->epsilon, "Central-difference step")->capture_default_str();
  s->common.add(*app);
  return {app, [s](Output& out, std::ostream&) {
            const auto checks = run_gradient_suite(s->seeds, s->epsilon, s->common.seed);
            std::ostringstream csv;
            csv << "check,seed,max_relative_error,tolerance,checked,skipped,passed\n" << std::setprecision(6);
            std::size_t failed = 0;
            for (const auto& c : checks) {
              csv << c.name << ',' << c.seed << ',' << c.result.max_relative_error << ',' << c.tolerance << ','
                  << c.result.checked << ',' << c.result.skipped << ',' << (c.passed() ? 1 : 0) << '\n';
              failed += !c.passed();
            }
            out.text("gradcheck.csv", csv.str());
            require(failed == 0, ErrorCode::non_finite,
                    std::to_string(failed) + " of " + std::to_string(checks.size()) + " gradient checks failed");
            return std::to_string(checks.size()) + " checks passed";
          }};
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::non_finite:
      return kNumericFailure;
    case ErrorCode::invalid_argument:
      return kUsage;
    default:
      return kDataError;
  }
}

}  // namespace

CommandResult run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optical recognition of historical music notation glyphs", "glyphforge"};
  app.require_subcommand(1);
  std::vector<Subcommand> subs{add_synth(app),   add_train(app),   add_eval(app),
                               add_crossval(app), add_calibrate(app), add_predict(app),
                               add_retrieve(app), add_bench(app),    add_gradcheck(app)};
  CommandResult result;
  if (args.empty()) {
    out << app.help();
    err << "error: a subcommand is required\n";
    result.exit_code = kUsage;
    return result;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return result;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return result;
  } catch (const CLI::ParseError& e) {
    // Subcommand --help lands here as CallForHelp raised from the subcommand.
    if (e.get_exit_code() == 0) {
      for (const auto& s : subs)
        if (s.app->parsed()) out << s.app->help();
      return result;
    }
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    result.exit_code = kUsage;
    return result;
  }

  for (auto& s : subs) {
    if (!s.app->parsed()) continue;
    std::string out_dir;
    if (auto* o = s.app->get_option_no_throw("--out")) out_dir = o->as<std::string>();
    try {
      Output output;
      output.open(out_dir);
      result.summary = s.run(output, err);
      result.artifacts = output.finish(s.app->get_name(), result.summary);
      out << s.app->get_name() << ": " << result.summary << "\n";
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      result.exit_code = exit_code_for(e.code());
    } catch (const nlohmann::json::exception& e) {
      err << "error: malformed JSON: " << e.what() << "\n";
      result.exit_code = kDataError;
    } catch (const fs::filesystem_error& e) {
      err << "error: " << e.what() << "\n";
      result.exit_code = kDataError;
    }
    return result;
  }
  err << "error: a subcommand is required\n";
  result.exit_code = kUsage;
  return result;
}

}  // namespace glyphforge::cli
