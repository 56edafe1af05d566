#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/data.hpp"
#include "glyphforge/model.hpp"
#include "glyphforge/train.hpp"
#include "json.hpp"

namespace glyphforge {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  bool present = false;  // support > 0
};

struct F1Table {
  std::vector<std::string> vocabulary;
  std::vector<ClassMetrics> classes;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  /// Mean F1 over present classes (all of them, or those listed in `subset`).
  double macro_f1() const;
  double macro_f1(std::span<const std::size_t> subset) const;
};

F1Table per_class_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                     const std::vector<std::string>& vocabulary);

/// Classifier heads per notation: {pitch, secondary} or {lvlv}.
std::vector<LabelKey> head_keys(Notation n);
/// Label of the joint class: pitch * 7 + secondary for suzipu, lvlv otherwise.
LabelKey joint_key(Notation n);

struct HeadEval {
  LabelKey key = LabelKey::lvlv;
  double accuracy = 0.0;  // percent
  double ece = 0.0;
  double temperature = 1.0;
  std::vector<std::size_t> predictions;
  F1Table f1;
};

struct EvalReport {
  Notation notation = Notation::lvlvpu;
  std::size_t n_instances = 0;
  std::vector<HeadEval> heads;
  double joint_accuracy = 0.0;  // percent; both heads right for suzipu
  double cer = 0.0;             // 100 - joint_accuracy
  double joint_ece = 0.0;       // confidence = product of head confidences
  F1Table joint_f1;
};

/// Evaluates one logits tensor per head (in head_keys order) against the
/// members' labels.
EvalReport evaluate_logits(Notation notation, std::span<const Tensor> head_logits, const Corpus& corpus,
                           std::span<const std::size_t> members, std::span<const double> temperatures = {});

/// Full deterministic pass with the eval transform.
EvalReport evaluate(std::span<const ClassifierParams* const> heads, const Corpus& corpus,
                    std::span<const std::size_t> members, const AugmentSpec& augment,
                    std::span<const double> temperatures = {});

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const F1Table& t);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};

Stat summarize(std::span<const double> values);

// ---- cross-validation ------------------------------------------------------

enum class Pairing { all_pairs, matched };

struct CrossValConfig {
  ArchSpec arch{};
  TrainConfig train{};
  std::size_t repeats = 10;
  Pairing pairing = Pairing::all_pairs;
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool keep_best_models = true;
  std::function<void(const std::string&)> log;
};

struct ModelRun {
  LabelKey key = LabelKey::lvlv;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;  // percent
  double val_loss = 0.0;
  double test_accuracy = 0.0;
  std::string fingerprint;
};

struct JointRun {
  std::vector<std::size_t> repeats;  // one per head
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double cer = 0.0;
};

struct HeadSummary {
  LabelKey key = LabelKey::lvlv;
  Stat val_accuracy, test_accuracy;
  std::size_t best_repeat = 0;
  double best_val_accuracy = 0.0, best_test_accuracy = 0.0;
};

struct FoldReport {
  std::string edition;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::vector<ModelRun> models;
  std::vector<JointRun> joints;
  std::vector<HeadSummary> heads;
  Stat joint_val, joint_test, cer;
  JointRun best;  // best model of every head, evaluated together
  std::vector<ClassifierParams> best_models;
  // Audit trail of instance ids per role.
  std::vector<std::string> train_ids, val_ids, test_ids;
};

struct CrossValReport {
  Notation notation = Notation::lvlvpu;
  std::size_t repeats = 0;
  Pairing pairing = Pairing::all_pairs;
  std::vector<FoldReport> folds;
  // Over every model (heads) or joint sample of every fold.
  std::vector<Stat> head_val, head_test;
  Stat joint_val, joint_test, cer;
};

/// Leave-one-edition-out protocol. Artificial instances only ever join the
/// training side; excluded instances are left out everywhere.
CrossValReport cross_validate(const Corpus& corpus, const CrossValConfig& config);

/// Throws invalid_state if a test id or test-edition instance reached
/// training or validation.
void audit_fold(const FoldReport& fold);

nlohmann::json to_json(const CrossValReport& r, bool include_ids = false);
/// Mean +/- std table shaped like the published ones (editions, then
/// Aggregated). For lvlvpu, `with_artificial` adds the second column group.
std::string mean_table_csv(const CrossValReport& r, const CrossValReport* with_artificial = nullptr);
/// Best-by-validation table.
std::string best_table_csv(const CrossValReport& r, const CrossValReport* with_artificial = nullptr);

// ---- statistics and timing ---------------------------------------------------

struct RankSumResult {
  double u = 0.0;  // Mann-Whitney U of sample a
  double p = 1.0;  // two-sided
  bool exact = false;
};

/// Exact distribution when min(n, m) <= 8 and there are no ties; otherwise
/// the normal approximation with tie and continuity corrections.
RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b);

struct BenchResult {
  std::size_t repeats = 0;
  std::size_t n_instances = 0;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
  std::vector<double> seconds;
  EvalReport report;
};

/// Untimed warm-up evaluate, then `repeats` timed full passes (transform
/// and inference). Every timed pass must reproduce the warm-up metrics.
BenchResult benchmark_inference(std::span<const ClassifierParams* const> heads, const Corpus& corpus,
                                std::span<const std::size_t> members, const AugmentSpec& augment,
                                std::size_t repeats);

/// Runs fn(i) for i in [0, n) on `threads` workers; the first failure (by
/// index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace glyphforge
