#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "glyphforge/error.hpp"
#include "glyphforge/eval.hpp"
#include "glyphforge/synth.hpp"
#include "test_util.hpp"

namespace gf = glyphforge;

namespace {

gf::Corpus tiny_corpus(gf::Notation n, std::size_t per_class, std::size_t editions, std::uint64_t seed = 3) {
  gf::SynthOptions o;
  o.notation = n;
  o.n_per_class = per_class;
  o.n_editions = editions;
  o.seed = seed;
  return gf::gen_synthetic_corpus(o);
}

gf::CrossValConfig quick_config(gf::Notation n, std::size_t repeats) {
  gf::CrossValConfig c;
  c.arch.conv_channels = {4, 4, 4};
  c.arch.fc1_width = 16;
  c.train = gf::TrainConfig::for_notation(n);
  c.train.epochs = 1;
  c.train.batches_per_epoch = 1;
  c.train.batch_size = 8;
  c.repeats = repeats;
  c.seed = 11;
  return c;
}

// Logits that put `margin` on the chosen class of every row.
gf::Tensor one_hot_logits(std::span<const std::size_t> classes, std::size_t K, float margin = 5.0f) {
  gf::Tensor t({classes.size(), K});
  for (std::size_t i = 0; i < classes.size(); ++i) t[i * K + classes[i]] = margin;
  return t;
}

}  // namespace

// ---- per-class F1 --------------------------------------------------------------

TEST(PerClassF1, HandComputedToyConfusion) {
  // Rows are true labels: [[2,1,0],[0,3,0],[1,0,1]].
  const std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1, 2, 2};
  const std::vector<std::size_t> preds{0, 0, 1, 1, 1, 1, 0, 2};
  const auto t = gf::per_class_f1(preds, labels, {"a", "b", "c"});
  const std::vector<std::vector<std::size_t>> expected{{2, 1, 0}, {0, 3, 0}, {1, 0, 1}};
  EXPECT_EQ(t.confusion, expected);
  EXPECT_DOUBLE_EQ(t.classes[0].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.classes[0].recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.classes[0].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.classes[1].precision, 0.75);
  EXPECT_DOUBLE_EQ(t.classes[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(t.classes[2].precision, 1.0);
  EXPECT_DOUBLE_EQ(t.classes[2].recall, 0.5);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t row = std::accumulate(t.confusion[c].begin(), t.confusion[c].end(), std::size_t{0});
    EXPECT_EQ(row, t.classes[c].support);
  }
}

TEST(PerClassF1, PerfectPredictorAndAbsentClasses) {
  const std::vector<std::size_t> labels{0, 2, 2, 3};
  const auto t = gf::per_class_f1(labels, labels, {"a", "b", "c", "d"});
  EXPECT_FALSE(t.classes[1].present);
  for (std::size_t c : {0u, 2u, 3u}) EXPECT_DOUBLE_EQ(t.classes[c].f1, 1.0);
  EXPECT_DOUBLE_EQ(t.macro_f1(), 1.0);
}

TEST(PerClassF1, NeverPredictedClassHasZeroRecall) {
  const std::vector<std::size_t> labels{0, 1, 1};
  const std::vector<std::size_t> preds{0, 0, 0};
  const auto t = gf::per_class_f1(preds, labels, {"a", "b"});
  EXPECT_EQ(t.classes[1].recall, 0.0);
  EXPECT_EQ(t.classes[1].precision, 0.0);
  EXPECT_EQ(t.classes[1].f1, 0.0);
}

TEST(PerClassF1, RejectsUnknownLabelsAndMisalignment) {
  const std::vector<std::size_t> a{0, 5}, b{0, 1}, c{0};
  try {
    (void)gf::per_class_f1(b, a, {"x", "y"});
    FAIL();
  } catch (const gf::Error& e) {
    EXPECT_EQ(e.code(), gf::ErrorCode::unknown_label);
  }
  EXPECT_THROW((void)gf::per_class_f1(c, b, {"x", "y"}), gf::Error);
}

// ---- evaluate ------------------------------------------------------------------

TEST(Evaluate, PerfectLogitsGiveFullAccuracyZeroCer) {
  const auto corpus = tiny_corpus(gf::Notation::suzipu, 1, 1);
  const auto members = gf::all_members(corpus);
  const std::vector<gf::Tensor> logits{
      one_hot_logits(gf::labels_of(corpus, members, gf::LabelKey::pitch), gf::kPitchClasses),
      one_hot_logits(gf::labels_of(corpus, members, gf::LabelKey::secondary), gf::kSecondaryClasses)};
  const auto r = gf::evaluate_logits(gf::Notation::suzipu, logits, corpus, members);
  EXPECT_EQ(r.n_instances, 77u);
  EXPECT_EQ(r.joint_accuracy, 100.0);
  EXPECT_EQ(r.cer, 0.0);
  EXPECT_DOUBLE_EQ(r.joint_f1.macro_f1(), 1.0);
}

TEST(Evaluate, JointRequiresBothHeadsAndCerIsComplement) {
  const auto corpus = tiny_corpus(gf::Notation::suzipu, 2, 2);
  const auto members = gf::all_members(corpus);
  gf::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = gf::labels_of(corpus, members, gf::LabelKey::pitch);
    auto s = gf::labels_of(corpus, members, gf::LabelKey::secondary);
    for (auto& v : p)
      if (rng.uniform() < 0.2) v = rng.below(gf::kPitchClasses);
    for (auto& v : s)
      if (rng.uniform() < 0.3) v = rng.below(gf::kSecondaryClasses);
    const std::vector<gf::Tensor> logits{one_hot_logits(p, gf::kPitchClasses),
                                         one_hot_logits(s, gf::kSecondaryClasses)};
    const auto r = gf::evaluate_logits(gf::Notation::suzipu, logits, corpus, members);
    EXPECT_EQ(r.cer + r.joint_accuracy, 100.0);
    EXPECT_LE(r.joint_accuracy, std::min(r.heads[0].accuracy, r.heads[1].accuracy));
    std::size_t rows = 0;
    for (const auto& row : r.joint_f1.confusion) rows += std::accumulate(row.begin(), row.end(), std::size_t{0});
    EXPECT_EQ(rows, members.size());
  }
}

TEST(Evaluate, OrderInvariant) {
  const auto corpus = tiny_corpus(gf::Notation::lvlvpu, 3, 2);
  auto members = gf::all_members(corpus);
  gf::Rng init(1);
  auto params = gf::build_classifier({.conv_channels = {4, 4, 4}, .fc1_width = 8, .n_classes = 17},
                                     gf::lvlv_vocabulary(), init);
  const gf::ClassifierParams* heads[] = {&params};
  const auto spec = gf::AugmentSpec::for_notation(gf::Notation::lvlvpu);
  const auto a = gf::evaluate(heads, corpus, members, spec);
  gf::Rng shuffle(2);
  for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[shuffle.below(i)]);
  const auto b = gf::evaluate(heads, corpus, members, spec);
  EXPECT_EQ(a.joint_accuracy, b.joint_accuracy);
  EXPECT_EQ(a.heads[0].f1.confusion, b.heads[0].f1.confusion);
  EXPECT_NEAR(a.heads[0].ece, b.heads[0].ece, 1e-12);
}

TEST(Evaluate, RejectsVocabularyMismatchAndEmptySets) {
  const auto corpus = tiny_corpus(gf::Notation::lvlvpu, 1, 1);
  const auto members = gf::all_members(corpus);
  gf::Rng init(1);
  auto wrong = gf::build_classifier({.conv_channels = {2, 2, 2}, .fc1_width = 4, .n_classes = 11},
                                    gf::pitch_vocabulary(), init);
  const gf::ClassifierParams* heads[] = {&wrong};
  const auto spec = gf::AugmentSpec::for_notation(gf::Notation::lvlvpu);
  EXPECT_THROW((void)gf::evaluate(heads, corpus, members, spec), gf::Error);
  auto right = gf::build_classifier({.conv_channels = {2, 2, 2}, .fc1_width = 4, .n_classes = 17},
                                    gf::lvlv_vocabulary(), init);
  heads[0] = &right;
  EXPECT_THROW((void)gf::evaluate(heads, corpus, std::vector<std::size_t>{}, spec), gf::Error);
}

TEST(Summarize, SampleStandardDeviation) {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  const auto s = gf::summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(32.0 / 7.0));
  EXPECT_EQ(gf::summarize(std::vector<double>{3.0}).std, 0.0);
}

// ---- cross-validation ------------------------------------------------------------

TEST(CrossValidate, LvlvpuStructureAndAudit) {
  auto corpus = tiny_corpus(gf::Notation::lvlvpu, 6, 3);
  corpus.instances[0].excluded = true;
  const std::string excluded_id = corpus.instances[0].id;
  // A few instances recast as artificial data.
  std::set<std::string> artificial;
  for (std::size_t i = 1; i < corpus.instances.size(); i += 25) {
    corpus.instances[i].edition = std::string(gf::kArtificialEdition);
    artificial.insert(corpus.instances[i].id);
  }
  auto cfg = quick_config(gf::Notation::lvlvpu, 3);
  cfg.threads = 2;
  const auto r = gf::cross_validate(corpus, cfg);
  ASSERT_EQ(r.folds.size(), 3u);
  for (const auto& f : r.folds) {
    EXPECT_EQ(f.models.size(), 3u);
    EXPECT_EQ(f.joints.size(), 3u);
    EXPECT_EQ(f.best_models.size(), 1u);
    EXPECT_NO_THROW(gf::audit_fold(f));
    for (const auto& id : f.test_ids) EXPECT_EQ(id.substr(0, f.edition.size()), f.edition);
    std::set<std::string> train(f.train_ids.begin(), f.train_ids.end());
    for (const auto& a : artificial) EXPECT_TRUE(train.contains(a));
    for (const auto* side : {&f.train_ids, &f.val_ids, &f.test_ids})
      for (const auto& id : *side) EXPECT_NE(id, excluded_id);
    for (const auto& id : f.val_ids) EXPECT_FALSE(artificial.contains(id));
    std::set<std::uint64_t> seeds;
    for (const auto& m : f.models) seeds.insert(m.seed);
    EXPECT_EQ(seeds.size(), 3u);
    EXPECT_NEAR(f.cer.mean + f.joint_test.mean, 100.0, 1e-9);
  }
  EXPECT_EQ(r.head_test[0].n, 9u);
  EXPECT_EQ(r.cer.n, 9u);

  const auto json = gf::to_json(r, true);
  EXPECT_EQ(json["folds"].size(), 3u);
  EXPECT_EQ(json["aggregated"]["cer"]["n"], 9);
  const auto mean = gf::mean_table_csv(r);
  EXPECT_EQ(std::count(mean.begin(), mean.end(), '\n'), 5);
  EXPECT_EQ(mean.substr(0, mean.find('\n')), "edition,val,val_std,test,test_std,cer,cer_std");
  const auto both = gf::mean_table_csv(r, &r);
  EXPECT_NE(both.find("val_nonart,val_nonart_std,val_art,val_art_std"), std::string::npos);
  const auto best = gf::best_table_csv(r, &r);
  // Every row has the header's column count.
  std::size_t commas = std::string::npos;
  std::istringstream rows(best);
  for (std::string line; std::getline(rows, line);) {
    const auto c = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (commas == std::string::npos) commas = c;
    EXPECT_EQ(c, commas) << line;
  }
}

TEST(CrossValidate, DeterministicAcrossThreadCounts) {
  const auto corpus = tiny_corpus(gf::Notation::lvlvpu, 4, 2);
  auto cfg = quick_config(gf::Notation::lvlvpu, 2);
  cfg.threads = 1;
  const auto a = gf::to_json(gf::cross_validate(corpus, cfg)).dump();
  cfg.threads = 3;
  const auto b = gf::to_json(gf::cross_validate(corpus, cfg)).dump();
  EXPECT_EQ(a, b);
}

TEST(CrossValidate, SuzipuPairsAllRepeats) {
  const auto corpus = tiny_corpus(gf::Notation::suzipu, 2, 2);
  auto cfg = quick_config(gf::Notation::suzipu, 2);
  const auto r = gf::cross_validate(corpus, cfg);
  ASSERT_EQ(r.folds.size(), 2u);
  for (const auto& f : r.folds) {
    EXPECT_EQ(f.models.size(), 4u);
    EXPECT_EQ(f.joints.size(), 4u);
    EXPECT_EQ(f.best.repeats, (std::vector<std::size_t>{f.heads[0].best_repeat, f.heads[1].best_repeat}));
    for (const auto& j : f.joints) {
      const double pitch = f.models[j.repeats[0]].test_accuracy;
      const double sec = f.models[2 + j.repeats[1]].test_accuracy;
      EXPECT_LE(j.test_accuracy, std::min(pitch, sec));
    }
  }
  EXPECT_EQ(r.cer.n, 8u);
  EXPECT_EQ(r.head_val[0].n, 4u);
  cfg.pairing = gf::Pairing::matched;
  EXPECT_EQ(gf::cross_validate(corpus, cfg).folds[0].joints.size(), 2u);
  const auto table = gf::mean_table_csv(r);
  EXPECT_EQ(table.substr(0, table.find('\n')),
            "edition,val_pitch,val_pitch_std,val_secondary,val_secondary_std,test_pitch,test_pitch_std,"
            "test_secondary,test_secondary_std,test_total,test_total_std,cer,cer_std");
}

TEST(CrossValidate, RejectsSingleEditionAndEmptyEditions) {
  const auto one = tiny_corpus(gf::Notation::lvlvpu, 2, 1);
  EXPECT_THROW((void)gf::cross_validate(one, quick_config(gf::Notation::lvlvpu, 1)), gf::Error);
  auto corpus = tiny_corpus(gf::Notation::lvlvpu, 2, 2);
  for (auto& g : corpus.instances)
    if (g.edition == corpus.instances[0].edition) g.excluded = true;
  EXPECT_THROW((void)gf::cross_validate(corpus, quick_config(gf::Notation::lvlvpu, 1)), gf::Error);
}

TEST(AuditFold, DetectsLeaks) {
  gf::FoldReport f;
  f.edition = "Lu";
  f.train_ids = {"a", "b"};
  f.val_ids = {"c"};
  f.test_ids = {"d"};
  EXPECT_NO_THROW(gf::audit_fold(f));
  f.val_ids.push_back("d");
  try {
    gf::audit_fold(f);
    FAIL();
  } catch (const gf::Error& e) {
    EXPECT_EQ(e.code(), gf::ErrorCode::invalid_state);
  }
}

// ---- Wilcoxon ----------------------------------------------------------------------

namespace {

// Two-sided p by listing every assignment of ranks to sample a.
double enumerate_p(std::span<const double> a, std::span<const double> b) {
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  const std::size_t n = a.size(), N = all.size();
  double ra = 0.0;
  for (double v : a) ra += static_cast<double>(std::lower_bound(all.begin(), all.end(), v) - all.begin() + 1);
  const double u_obs = ra - static_cast<double>(n * (n + 1)) / 2.0;
  double le = 0.0, ge = 0.0, total = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n) continue;
    double r = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      if (mask & (1u << i)) r += static_cast<double>(i + 1);
    const double u = r - static_cast<double>(n * (n + 1)) / 2.0;
    total += 1.0;
    if (u <= u_obs) le += 1.0;
    if (u >= u_obs) ge += 1.0;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

}  // namespace

TEST(Wilcoxon, KnownExactValues) {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  const auto r = gf::wilcoxon_rank_sum(a, b);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.u, 0.0);
  EXPECT_EQ(r.p, 0.1);
  EXPECT_EQ(gf::wilcoxon_rank_sum(b, a).p, 0.1);
  EXPECT_EQ(gf::wilcoxon_rank_sum(b, a).u, 9.0);
  EXPECT_EQ(gf::wilcoxon_rank_sum(std::vector<double>{1}, std::vector<double>{2}).p, 1.0);
}

TEST(Wilcoxon, ExactPathMatchesEnumeration) {
  gf::Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(6), m = 1 + rng.below(6);
    std::set<double> used;
    std::vector<double> a, b;
    while (a.size() < n || b.size() < m) {
      const double v = std::round(rng.normal() * 1000.0);
      if (!used.insert(v).second) continue;
      (a.size() < n ? a : b).push_back(v);
    }
    const auto r = gf::wilcoxon_rank_sum(a, b);
    ASSERT_TRUE(r.exact);
    ASSERT_EQ(r.p, enumerate_p(a, b)) << "trial " << trial;
  }
}

TEST(Wilcoxon, NormalApproximationOnLargeShiftedSamples) {
  gf::Rng rng(9);
  std::vector<double> a(50), b(50);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal() + 3.0;
  const auto r = gf::wilcoxon_rank_sum(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_LT(r.p, 0.01);
}

TEST(Wilcoxon, TiesUseCorrectedApproximation) {
  const std::vector<double> a{1, 2, 2, 3}, b{2, 3, 4, 4};
  const auto r = gf::wilcoxon_rank_sum(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_GT(r.p, 0.0);
  EXPECT_LE(r.p, 1.0);
  const std::vector<double> same{5, 5, 5};
  EXPECT_EQ(gf::wilcoxon_rank_sum(same, same).p, 1.0);
  EXPECT_THROW((void)gf::wilcoxon_rank_sum(std::vector<double>{}, same), gf::Error);
}

// ---- benchmark and threads ------------------------------------------------------------

TEST(Benchmark, SingleRepeatHasZeroStd) {
  const auto corpus = tiny_corpus(gf::Notation::lvlvpu, 1, 1);
  gf::Rng init(1);
  auto params = gf::build_classifier({.conv_channels = {4, 4, 4}, .fc1_width = 8, .n_classes = 17},
                                     gf::lvlv_vocabulary(), init);
  const gf::ClassifierParams* heads[] = {&params};
  const auto members = gf::all_members(corpus);
  const auto spec = gf::AugmentSpec::for_notation(gf::Notation::lvlvpu);
  const auto b = gf::benchmark_inference(heads, corpus, members, spec, 1);
  EXPECT_EQ(b.std_seconds, 0.0);
  EXPECT_GT(b.mean_seconds, 0.0);
  EXPECT_EQ(b.report.n_instances, 17u);
  const auto c = gf::benchmark_inference(heads, corpus, members, spec, 3);
  EXPECT_EQ(c.seconds.size(), 3u);
  EXPECT_EQ(c.report.joint_accuracy, b.report.joint_accuracy);
}

TEST(ParallelFor, RunsEveryIndexAndRethrowsFirstFailure) {
  std::vector<int> hits(100, 0);
  gf::parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  try {
    gf::parallel_for(10, 1, [](std::size_t i) {
      if (i >= 3) gf::fail(gf::ErrorCode::io, "job " + std::to_string(i));
    });
    FAIL();
  } catch (const gf::Error& e) {
    EXPECT_NE(std::string(e.what()).find("job 3"), std::string::npos);
  }
}
