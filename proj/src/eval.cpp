#include "glyphforge/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "glyphforge/calibrate.hpp"
#include "glyphforge/error.hpp"

namespace glyphforge {

using nlohmann::json;

// ---- metrics -------------------------------------------------------------------

double F1Table::macro_f1() const {
  std::vector<std::size_t> all(classes.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return macro_f1(all);
}

double F1Table::macro_f1(std::span<const std::size_t> subset) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto c : subset) {
    require(c < classes.size(), ErrorCode::invalid_argument, "macro F1: class out of range");
    if (!classes[c].present) continue;
    sum += classes[c].f1;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

F1Table per_class_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                     const std::vector<std::string>& vocabulary) {
  require(predictions.size() == labels.size(), ErrorCode::shape_mismatch,
          "per-class F1: predictions and labels differ in length");
  const std::size_t K = vocabulary.size();
  F1Table t;
  t.vocabulary = vocabulary;
  t.classes.resize(K);
  t.confusion.assign(K, std::vector<std::size_t>(K, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < K, ErrorCode::unknown_label, "per-class F1: label " + std::to_string(labels[i]) + " unknown");
    require(predictions[i] < K, ErrorCode::unknown_label,
            "per-class F1: prediction " + std::to_string(predictions[i]) + " unknown");
    ++t.confusion[labels[i]][predictions[i]];
  }
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t tp = t.confusion[c][c], support = 0, predicted = 0;
    for (std::size_t k = 0; k < K; ++k) {
      support += t.confusion[c][k];
      predicted += t.confusion[k][c];
    }
    auto& m = t.classes[c];
    m.support = support;
    m.present = support > 0;
    m.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    m.recall = support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(support);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  return t;
}

std::vector<LabelKey> head_keys(Notation n) {
  if (n == Notation::suzipu) return {LabelKey::pitch, LabelKey::secondary};
  return {LabelKey::lvlv};
}

LabelKey joint_key(Notation n) { return n == Notation::suzipu ? LabelKey::joint : LabelKey::lvlv; }

namespace {

double percent(std::size_t hits, std::size_t n) { return 100.0 * static_cast<double>(hits) / static_cast<double>(n); }

}  // namespace

EvalReport evaluate_logits(Notation notation, std::span<const Tensor> head_logits, const Corpus& corpus,
                           std::span<const std::size_t> members, std::span<const double> temperatures) {
  const auto keys = head_keys(notation);
  require(!members.empty(), ErrorCode::invalid_argument, "evaluate: empty dataset");
  require(head_logits.size() == keys.size(), ErrorCode::invalid_argument,
          "evaluate: expected " + std::to_string(keys.size()) + " heads");
  require(temperatures.empty() || temperatures.size() == keys.size(), ErrorCode::invalid_argument,
          "evaluate: one temperature per head");

  EvalReport r;
  r.notation = notation;
  r.n_instances = members.size();
  const std::size_t N = members.size();
  std::vector<double> joint_conf(N, 1.0);
  std::vector<std::uint8_t> joint_correct(N, 1);

  for (std::size_t h = 0; h < keys.size(); ++h) {
    const Tensor& logits = head_logits[h];
    const auto& vocab = vocabulary(keys[h]);
    expect_rank("evaluate", logits.shape(), 2);
    require(logits.dim(0) == N, ErrorCode::shape_mismatch, "evaluate: logits rows differ from dataset size");
    require(logits.dim(1) == vocab.size(), ErrorCode::invalid_argument,
            std::string("evaluate: vocabulary mismatch for head ") + std::string(to_string(keys[h])));
    HeadEval he;
    he.key = keys[h];
    he.temperature = temperatures.empty() ? 1.0 : temperatures[h];
    const auto preds = predict_head(logits, he.temperature);
    const auto labels = labels_of(corpus, members, keys[h]);
    std::vector<double> conf(N);
    std::vector<std::uint8_t> correct(N);
    std::size_t hits = 0;
    he.predictions.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      he.predictions[i] = preds[i].label;
      conf[i] = preds[i].confidence;
      correct[i] = preds[i].label == labels[i];
      hits += correct[i];
      joint_conf[i] *= conf[i];
      joint_correct[i] &= correct[i];
    }
    he.accuracy = percent(hits, N);
    he.ece = ece10(conf, correct);
    he.f1 = per_class_f1(he.predictions, labels, vocab);
    r.heads.push_back(std::move(he));
  }

  std::size_t joint_hits = 0;
  for (auto c : joint_correct) joint_hits += c;
  r.joint_accuracy = percent(joint_hits, N);
  r.cer = 100.0 - r.joint_accuracy;
  r.joint_ece = ece10(joint_conf, joint_correct);
  if (notation == Notation::suzipu) {
    std::vector<std::size_t> joint_pred(N);
    for (std::size_t i = 0; i < N; ++i)
      joint_pred[i] = r.heads[0].predictions[i] * kSecondaryClasses + r.heads[1].predictions[i];
    r.joint_f1 = per_class_f1(joint_pred, labels_of(corpus, members, LabelKey::joint), joint_vocabulary());
  } else {
    r.joint_f1 = r.heads[0].f1;
  }
  return r;
}

EvalReport evaluate(std::span<const ClassifierParams* const> heads, const Corpus& corpus,
                    std::span<const std::size_t> members, const AugmentSpec& augment,
                    std::span<const double> temperatures) {
  const auto keys = head_keys(corpus.notation);
  require(heads.size() == keys.size(), ErrorCode::invalid_argument,
          "evaluate: expected " + std::to_string(keys.size()) + " heads");
  for (std::size_t h = 0; h < keys.size(); ++h)
    require(heads[h] != nullptr && heads[h]->vocabulary == vocabulary(keys[h]), ErrorCode::invalid_argument,
            std::string("evaluate: vocabulary mismatch for head ") + std::string(to_string(keys[h])));
  require(!members.empty(), ErrorCode::invalid_argument, "evaluate: empty dataset");
  const Tensor batch = eval_batch(corpus, members, augment);
  std::vector<Tensor> logits;
  for (const auto* p : heads) logits.push_back(logits_chunked(*p, batch));
  return evaluate_logits(corpus.notation, logits, corpus, members, temperatures);
}

json to_json(const F1Table& t) {
  json classes = json::array();
  for (std::size_t c = 0; c < t.classes.size(); ++c) {
    const auto& m = t.classes[c];
    classes.push_back({{"label", t.vocabulary[c]},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"support", m.support},
                       {"present", m.present}});
  }
  return {{"macro_f1", t.macro_f1()}, {"classes", classes}, {"confusion", t.confusion}};
}

json to_json(const EvalReport& r) {
  json heads = json::array();
  for (const auto& h : r.heads)
    heads.push_back({{"key", to_string(h.key)},
                     {"accuracy", h.accuracy},
                     {"ece10", h.ece},
                     {"temperature", h.temperature},
                     {"f1", to_json(h.f1)}});
  return {{"notation", to_string(r.notation)},
          {"n_instances", r.n_instances},
          {"heads", heads},
          {"joint_accuracy", r.joint_accuracy},
          {"cer", r.cer},
          {"joint_ece10", r.joint_ece},
          {"joint_f1", to_json(r.joint_f1)}};
}

Stat summarize(std::span<const double> values) {
  Stat s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

// ---- threading ------------------------------------------------------------------

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; !failed && (i = next++) < n;) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            failed = true;
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- cross-validation -------------------------------------------------------------

namespace {

struct JobOutput {
  ModelRun run;
  std::vector<std::uint8_t> val_correct, test_correct;
  ClassifierParams params;
};

std::vector<std::uint8_t> correctness(const Tensor& logits, std::span<const std::size_t> labels) {
  std::vector<std::uint8_t> out(labels.size());
  const std::size_t K = logits.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = argmax(std::span<const float>(logits.data() + i * K, K)) == labels[i];
  return out;
}

double joint_percent(const std::vector<const std::vector<std::uint8_t>*>& heads) {
  const std::size_t n = heads.front()->size();
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    for (const auto* h : heads) ok = ok && (*h)[i] != 0;
    hits += ok;
  }
  return percent(hits, n);
}

std::vector<std::string> ids_of(const Corpus& corpus, std::span<const std::size_t> members) {
  std::vector<std::string> out;
  out.reserve(members.size());
  for (auto m : members) out.push_back(corpus.instances[m].id);
  return out;
}

}  // namespace

void audit_fold(const FoldReport& fold) {
  const std::set<std::string> test(fold.test_ids.begin(), fold.test_ids.end());
  for (const auto* side : {&fold.train_ids, &fold.val_ids})
    for (const auto& id : *side)
      require(!test.contains(id), ErrorCode::invalid_state,
              "fold " + fold.edition + ": test instance " + id + " leaked into training or validation");
  const std::set<std::string> train(fold.train_ids.begin(), fold.train_ids.end());
  for (const auto& id : fold.val_ids)
    require(!train.contains(id), ErrorCode::invalid_state,
            "fold " + fold.edition + ": instance " + id + " is in both training and validation");
}

CrossValReport cross_validate(const Corpus& corpus, const CrossValConfig& config) {
  require(config.repeats >= 1, ErrorCode::invalid_argument, "cross-validation: repeats must be >= 1");
  require(config.train_fraction > 0.0 && config.train_fraction <= 1.0, ErrorCode::invalid_argument,
          "cross-validation: train fraction must be in (0, 1]");
  config.train.validate();

  std::vector<std::string> editions;
  for (auto& e : corpus.editions())
    if (e != kArtificialEdition) editions.push_back(e);
  require(editions.size() >= 2, ErrorCode::invalid_argument, "cross-validation: needs at least 2 editions");

  const auto keys = head_keys(corpus.notation);
  const std::size_t H = keys.size(), R = config.repeats, F = editions.size();

  std::vector<std::size_t> artificial;
  for (std::size_t i = 0; i < corpus.instances.size(); ++i) {
    const auto& g = corpus.instances[i];
    if (!g.excluded && g.edition == kArtificialEdition) artificial.push_back(i);
  }

  struct FoldSets {
    std::vector<std::size_t> train, val, test;
  };
  std::vector<FoldSets> sets(F);
  CrossValReport report;
  report.notation = corpus.notation;
  report.repeats = R;
  report.pairing = config.pairing;
  report.folds.resize(F);

  for (std::size_t f = 0; f < F; ++f) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.instances.size(); ++i) {
      const auto& g = corpus.instances[i];
      if (g.excluded) continue;
      if (g.edition == editions[f])
        sets[f].test.push_back(i);
      else if (g.edition != kArtificialEdition)
        pool.push_back(i);
    }
    require(!sets[f].test.empty(), ErrorCode::invalid_argument,
            "cross-validation: edition " + editions[f] + " has no usable instances");
    auto split = stratified_split(corpus, pool, config.train_fraction, derive_seed(config.seed, {0x5b17, f}));
    sets[f].train = std::move(split.train);
    sets[f].train.insert(sets[f].train.end(), artificial.begin(), artificial.end());
    sets[f].val = std::move(split.val);
    for (const auto* side : {&sets[f].train, &sets[f].val})
      for (auto m : *side)
        require(corpus.instances[m].edition != editions[f], ErrorCode::invalid_state,
                "cross-validation: test edition reached training or validation");

    auto& fold = report.folds[f];
    fold.edition = editions[f];
    fold.n_train = sets[f].train.size();
    fold.n_val = sets[f].val.size();
    fold.n_test = sets[f].test.size();
    fold.train_ids = ids_of(corpus, sets[f].train);
    fold.val_ids = ids_of(corpus, sets[f].val);
    fold.test_ids = ids_of(corpus, sets[f].test);
    audit_fold(fold);
  }

  std::vector<JobOutput> jobs(F * H * R);
  std::mutex log_mutex;
  std::atomic<std::size_t> done{0};
  parallel_for(jobs.size(), config.threads, [&](std::size_t j) {
    const std::size_t f = j / (H * R), h = (j / R) % H, r = j % R;
    const auto& s = sets[f];
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, {0x7a1, f, h, r});
    auto trained = train_model(config.arch, corpus, s.train, s.val, tc, keys[h]);

    JobOutput& out = jobs[j];
    out.run.key = keys[h];
    out.run.repeat = r;
    out.run.seed = tc.seed;
    out.run.fingerprint = model_fingerprint(trained.params);
    if (!s.val.empty()) {
      const auto labels = labels_of(corpus, s.val, keys[h]);
      const Tensor logits = logits_chunked(trained.params, eval_batch(corpus, s.val, tc.augment));
      out.val_correct = correctness(logits, labels);
      out.run.val_loss = focal_loss(logits, labels, tc.focal_gamma).loss;
      out.run.val_accuracy = joint_percent({&out.val_correct});
    } else {
      out.run.val_loss = trained.history.epochs.back().val_loss;
    }
    const auto labels = labels_of(corpus, s.test, keys[h]);
    out.test_correct = correctness(logits_chunked(trained.params, eval_batch(corpus, s.test, tc.augment)), labels);
    out.run.test_accuracy = joint_percent({&out.test_correct});
    out.params = std::move(trained.params);

    if (config.log) {
      std::ostringstream msg;
      msg << "[" << ++done << "/" << jobs.size() << "] fold " << editions[f] << " " << to_string(keys[h]) << " repeat "
          << r << ": val " << std::fixed << std::setprecision(2) << out.run.val_accuracy << "% test "
          << out.run.test_accuracy << "%";
      std::lock_guard lock(log_mutex);
      config.log(msg.str());
    }
  });

  const auto job = [&](std::size_t f, std::size_t h, std::size_t r) -> JobOutput& { return jobs[(f * H + h) * R + r]; };
  std::vector<std::vector<double>> all_val(H), all_test(H);
  std::vector<double> all_joint_val, all_joint_test, all_cer;

  for (std::size_t f = 0; f < F; ++f) {
    auto& fold = report.folds[f];
    for (std::size_t h = 0; h < H; ++h) {
      HeadSummary hs;
      hs.key = keys[h];
      std::vector<double> v, t;
      for (std::size_t r = 0; r < R; ++r) {
        const auto& run = job(f, h, r).run;
        fold.models.push_back(run);
        v.push_back(run.val_accuracy);
        t.push_back(run.test_accuracy);
        const auto& best = job(f, h, hs.best_repeat).run;
        if (run.val_accuracy > best.val_accuracy ||
            (run.val_accuracy == best.val_accuracy && run.val_loss < best.val_loss))
          hs.best_repeat = r;
      }
      hs.val_accuracy = summarize(v);
      hs.test_accuracy = summarize(t);
      hs.best_val_accuracy = job(f, h, hs.best_repeat).run.val_accuracy;
      hs.best_test_accuracy = job(f, h, hs.best_repeat).run.test_accuracy;
      all_val[h].insert(all_val[h].end(), v.begin(), v.end());
      all_test[h].insert(all_test[h].end(), t.begin(), t.end());
      fold.heads.push_back(hs);
    }

    const auto joint_of = [&](std::vector<std::size_t> repeats) {
      JointRun jr;
      std::vector<const std::vector<std::uint8_t>*> val, test;
      for (std::size_t h = 0; h < H; ++h) {
        val.push_back(&job(f, h, repeats[h]).val_correct);
        test.push_back(&job(f, h, repeats[h]).test_correct);
      }
      jr.val_accuracy = val.front()->empty() ? 0.0 : joint_percent(val);
      jr.test_accuracy = joint_percent(test);
      jr.cer = 100.0 - jr.test_accuracy;
      jr.repeats = std::move(repeats);
      return jr;
    };
    if (H == 1 || config.pairing == Pairing::matched) {
      for (std::size_t r = 0; r < R; ++r) fold.joints.push_back(joint_of(std::vector<std::size_t>(H, r)));
    } else {
      for (std::size_t a = 0; a < R; ++a)
        for (std::size_t b = 0; b < R; ++b) fold.joints.push_back(joint_of({a, b}));
    }
    std::vector<double> jv, jt, jc;
    for (const auto& jr : fold.joints) {
      jv.push_back(jr.val_accuracy);
      jt.push_back(jr.test_accuracy);
      jc.push_back(jr.cer);
    }
    fold.joint_val = summarize(jv);
    fold.joint_test = summarize(jt);
    fold.cer = summarize(jc);
    all_joint_val.insert(all_joint_val.end(), jv.begin(), jv.end());
    all_joint_test.insert(all_joint_test.end(), jt.begin(), jt.end());
    all_cer.insert(all_cer.end(), jc.begin(), jc.end());

    std::vector<std::size_t> best;
    for (const auto& hs : fold.heads) best.push_back(hs.best_repeat);
    fold.best = joint_of(best);
    if (config.keep_best_models)
      for (std::size_t h = 0; h < H; ++h) fold.best_models.push_back(std::move(job(f, h, best[h]).params));
  }

  for (std::size_t h = 0; h < H; ++h) {
    report.head_val.push_back(summarize(all_val[h]));
    report.head_test.push_back(summarize(all_test[h]));
  }
  report.joint_val = summarize(all_joint_val);
  report.joint_test = summarize(all_joint_test);
  report.cer = summarize(all_cer);
  return report;
}

namespace {

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

json joint_json(const JointRun& j) {
  return {{"repeats", j.repeats}, {"val_accuracy", j.val_accuracy}, {"test_accuracy", j.test_accuracy}, {"cer", j.cer}};
}

}  // namespace

json to_json(const CrossValReport& r, bool include_ids) {
  json folds = json::array();
  for (const auto& f : r.folds) {
    json models = json::array(), heads = json::array(), joints = json::array();
    for (const auto& m : f.models)
      models.push_back({{"key", to_string(m.key)},
                        {"repeat", m.repeat},
                        {"seed", m.seed},
                        {"val_accuracy", m.val_accuracy},
                        {"val_loss", m.val_loss},
                        {"test_accuracy", m.test_accuracy},
                        {"fingerprint", m.fingerprint}});
    for (const auto& h : f.heads)
      heads.push_back({{"key", to_string(h.key)},
                       {"val_accuracy", stat_json(h.val_accuracy)},
                       {"test_accuracy", stat_json(h.test_accuracy)},
                       {"best_repeat", h.best_repeat},
                       {"best_val_accuracy", h.best_val_accuracy},
                       {"best_test_accuracy", h.best_test_accuracy}});
    for (const auto& j : f.joints) joints.push_back(joint_json(j));
    json fj{{"edition", f.edition},
            {"n_train", f.n_train},
            {"n_val", f.n_val},
            {"n_test", f.n_test},
            {"models", models},
            {"heads", heads},
            {"joints", joints},
            {"joint_val_accuracy", stat_json(f.joint_val)},
            {"joint_test_accuracy", stat_json(f.joint_test)},
            {"cer", stat_json(f.cer)},
            {"best", joint_json(f.best)}};
    if (include_ids) fj["ids"] = {{"train", f.train_ids}, {"val", f.val_ids}, {"test", f.test_ids}};
    folds.push_back(std::move(fj));
  }
  json agg_heads = json::array();
  const auto keys = head_keys(r.notation);
  for (std::size_t h = 0; h < r.head_val.size(); ++h)
    agg_heads.push_back({{"key", to_string(keys[h])},
                         {"val_accuracy", stat_json(r.head_val[h])},
                         {"test_accuracy", stat_json(r.head_test[h])}});
  return {{"notation", to_string(r.notation)},
          {"repeats", r.repeats},
          {"pairing", r.pairing == Pairing::all_pairs ? "all_pairs" : "matched"},
          {"folds", folds},
          {"aggregated",
           {{"heads", agg_heads},
            {"joint_val_accuracy", stat_json(r.joint_val)},
            {"joint_test_accuracy", stat_json(r.joint_test)},
            {"cer", stat_json(r.cer)}}}};
}

namespace {

struct Csv {
  std::ostringstream os;
  bool first = true;

  Csv() { os << std::fixed << std::setprecision(4); }
  Csv& cell(const std::string& s) {
    if (!first) os << ',';
    os << s;
    first = false;
    return *this;
  }
  Csv& num(double v) {
    if (!first) os << ',';
    os << v;
    first = false;
    return *this;
  }
  Csv& stat(const Stat& s) { return num(s.mean).num(s.std); }
  Csv& blank(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) cell("");
    return *this;
  }
  void end() {
    os << '\n';
    first = true;
  }
};

void check_pair(const CrossValReport& a, const CrossValReport* b) {
  if (b == nullptr) return;
  require(a.notation == Notation::lvlvpu && b->notation == Notation::lvlvpu, ErrorCode::invalid_argument,
          "tables: the artificial-data comparison is lvlvpu only");
  require(a.folds.size() == b->folds.size(), ErrorCode::invalid_argument, "tables: fold counts differ");
  for (std::size_t f = 0; f < a.folds.size(); ++f)
    require(a.folds[f].edition == b->folds[f].edition, ErrorCode::invalid_argument, "tables: fold editions differ");
}

std::vector<const CrossValReport*> groups(const CrossValReport& r, const CrossValReport* art) {
  std::vector<const CrossValReport*> g{&r};
  if (art != nullptr) g.push_back(art);
  return g;
}

}  // namespace

std::string mean_table_csv(const CrossValReport& r, const CrossValReport* art) {
  check_pair(r, art);
  Csv csv;
  const auto g = groups(r, art);
  if (r.notation == Notation::suzipu) {
    csv.cell("edition,val_pitch,val_pitch_std,val_secondary,val_secondary_std,test_pitch,test_pitch_std,"
             "test_secondary,test_secondary_std,test_total,test_total_std,cer,cer_std");
    csv.end();
    for (const auto& f : r.folds) {
      csv.cell(f.edition)
          .stat(f.heads[0].val_accuracy)
          .stat(f.heads[1].val_accuracy)
          .stat(f.heads[0].test_accuracy)
          .stat(f.heads[1].test_accuracy)
          .stat(f.joint_test)
          .stat(f.cer);
      csv.end();
    }
    csv.cell("Aggregated").blank(4).stat(r.head_test[0]).stat(r.head_test[1]).stat(r.joint_test).stat(r.cer);
    csv.end();
    return csv.os.str();
  }
  const std::vector<std::string> suffix = art ? std::vector<std::string>{"_nonart", "_art"} : std::vector<std::string>{""};
  csv.cell("edition");
  for (const char* col : {"val", "test", "cer"})
    for (const auto& s : suffix) csv.cell(col + s).cell(col + s + "_std");
  csv.end();
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    csv.cell(r.folds[f].edition);
    for (const auto* x : g) csv.stat(x->folds[f].joint_val);
    for (const auto* x : g) csv.stat(x->folds[f].joint_test);
    for (const auto* x : g) csv.stat(x->folds[f].cer);
    csv.end();
  }
  csv.cell("Aggregated").blank(2 * g.size());
  for (const auto* x : g) csv.stat(x->joint_test);
  for (const auto* x : g) csv.stat(x->cer);
  csv.end();
  return csv.os.str();
}

std::string best_table_csv(const CrossValReport& r, const CrossValReport* art) {
  check_pair(r, art);
  Csv csv;
  const auto g = groups(r, art);
  // Per-edition rows hold single values; the std cells are filled on the Aggregated row only.
  const auto agg = [](const CrossValReport& x, auto get) {
    std::vector<double> v;
    for (const auto& f : x.folds) v.push_back(get(f));
    return summarize(v);
  };
  if (r.notation == Notation::suzipu) {
    csv.cell("edition,val_pitch,val_secondary,test_pitch,test_pitch_std,test_secondary,test_secondary_std,"
             "test_total,test_total_std,cer,cer_std");
    csv.end();
    for (const auto& f : r.folds) {
      csv.cell(f.edition).num(f.heads[0].best_val_accuracy).num(f.heads[1].best_val_accuracy);
      csv.num(f.heads[0].best_test_accuracy).blank(1).num(f.heads[1].best_test_accuracy).blank(1);
      csv.num(f.best.test_accuracy).blank(1).num(f.best.cer).blank(1);
      csv.end();
    }
    csv.cell("Aggregated").blank(2);
    csv.stat(agg(r, [](const FoldReport& f) { return f.heads[0].best_test_accuracy; }));
    csv.stat(agg(r, [](const FoldReport& f) { return f.heads[1].best_test_accuracy; }));
    csv.stat(agg(r, [](const FoldReport& f) { return f.best.test_accuracy; }));
    csv.stat(agg(r, [](const FoldReport& f) { return f.best.cer; }));
    csv.end();
    return csv.os.str();
  }
  const std::vector<std::string> suffix = art ? std::vector<std::string>{"_nonart", "_art"} : std::vector<std::string>{""};
  csv.cell("edition");
  for (const auto& s : suffix) csv.cell("val" + s);
  for (const char* col : {"test", "cer"})
    for (const auto& s : suffix) csv.cell(col + s).cell(col + s + "_std");
  csv.end();
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    csv.cell(r.folds[f].edition);
    for (const auto* x : g) csv.num(x->folds[f].best.val_accuracy);
    for (const auto* x : g) csv.num(x->folds[f].best.test_accuracy).blank(1);
    for (const auto* x : g) csv.num(x->folds[f].best.cer).blank(1);
    csv.end();
  }
  csv.cell("Aggregated").blank(g.size());
  for (const auto* x : g) csv.stat(agg(*x, [](const FoldReport& f) { return f.best.test_accuracy; }));
  for (const auto* x : g) csv.stat(agg(*x, [](const FoldReport& f) { return f.best.cer; }));
  csv.end();
  return csv.os.str();
}

// ---- Wilcoxon rank-sum ----------------------------------------------------------

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::invalid_argument, "rank-sum: both samples must be nonempty");
  const std::size_t n = a.size(), m = b.size(), N = n + m;
  std::vector<std::pair<double, bool>> all;  // (value, from a)
  for (double v : a) all.emplace_back(v, true);
  for (double v : b) all.emplace_back(v, false);
  for (const auto& [v, _] : all) require(std::isfinite(v), ErrorCode::non_finite, "rank-sum: non-finite value");
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  double rank_a = 0.0, tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < N;) {
    std::size_t j = i;
    while (j < N && all[j].first == all[i].first) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    if (j - i > 1) ties = true;
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_a += avg;
    i = j;
  }
  RankSumResult out;
  out.u = rank_a - static_cast<double>(n * (n + 1)) / 2.0;

  if (std::min(n, m) <= 8 && !ties) {
    // Count subsets of size k = min(n, m) of ranks 1..N by their U value.
    const std::size_t k = std::min(n, m), other = N - k;
    const std::size_t max_u = k * other;
    // ways[c][u]: subsets of c ranks among those seen so far with U contribution u.
    std::vector<std::vector<double>> ways(k + 1, std::vector<double>(max_u + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t r = 1; r <= N; ++r)
      for (std::size_t c = std::min(k, r); c >= 1; --c) {
        // Choosing rank r as the c-th smallest member adds r - c to U.
        const std::size_t add = r - c;
        if (add > max_u) continue;
        for (std::size_t u = max_u; u >= add; --u) {
          ways[c][u] += ways[c - 1][u - add];
          if (u == 0) break;
        }
      }
    const double u_small = n <= m ? out.u : static_cast<double>(n * m) - out.u;
    const auto u_idx = static_cast<std::size_t>(std::llround(u_small));
    double total = 0.0, le = 0.0, ge = 0.0;
    for (std::size_t u = 0; u <= max_u; ++u) {
      total += ways[k][u];
      if (u <= u_idx) le += ways[k][u];
      if (u >= u_idx) ge += ways[k][u];
    }
    out.p = std::min(1.0, 2.0 * std::min(le, ge) / total);
    out.exact = true;
    return out;
  }

  const double nm = static_cast<double>(n) * static_cast<double>(m);
  const double dn = static_cast<double>(N);
  const double mu = nm / 2.0;
  const double var = nm / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (var <= 0.0) {
    out.p = 1.0;
    return out;
  }
  const double z = std::max(0.0, std::abs(out.u - mu) - 0.5) / std::sqrt(var);
  out.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

// ---- benchmark --------------------------------------------------------------------

namespace {

bool same_metrics(const EvalReport& a, const EvalReport& b) {
  if (a.joint_accuracy != b.joint_accuracy || a.heads.size() != b.heads.size()) return false;
  for (std::size_t h = 0; h < a.heads.size(); ++h)
    if (a.heads[h].predictions != b.heads[h].predictions || a.heads[h].accuracy != b.heads[h].accuracy) return false;
  return true;
}

}  // namespace

BenchResult benchmark_inference(std::span<const ClassifierParams* const> heads, const Corpus& corpus,
                                std::span<const std::size_t> members, const AugmentSpec& augment,
                                std::size_t repeats) {
  require(repeats >= 1, ErrorCode::invalid_argument, "benchmark: repeats must be >= 1");
  BenchResult b;
  b.repeats = repeats;
  b.n_instances = members.size();
  b.report = evaluate(heads, corpus, members, augment);
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = evaluate(heads, corpus, members, augment);
    const auto t1 = std::chrono::steady_clock::now();
    b.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    require(same_metrics(rep, b.report), ErrorCode::invalid_state, "benchmark: timed pass disagrees with warm-up");
  }
  const auto s = summarize(b.seconds);
  b.mean_seconds = s.mean;
  b.std_seconds = s.std;
  return b;
}

}  // namespace glyphforge
