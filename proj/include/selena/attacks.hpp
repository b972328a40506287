#pragma once

#include "selena/dataset.hpp"
#include "selena/mlp.hpp"
#include "selena/splitai.hpp"

#include <functional>
#include <string>
#include <vector>

namespace selena {

using BatchQueryFn = std::function<Matrix(const Eigen::Ref<const Matrix>&)>;
using SingleQueryFn = std::function<Vector(const Eigen::Ref<const Vector>&)>;

enum class ScoreKind {
  kCorrectness,
  kConfidence,
  kNegEntropy,
  kNegMentr,
  kNoiseRobustness,
  kL2Dist,
  kCEDist,
  kNnPosterior,
};

enum class Direction { kHigherMeansMember, kLowerMeansMember };
enum class ThresholdMode { kGlobal, kPerClass };

// Provenance tag: thresholds and attack models may only ever be fit on
// attacker-known data; accuracies are only ever reported on eval data.
enum class Lineage { kKnown, kEval };

// -sum_i p_i log p_i with probabilities clamped to [1e-12, 1] inside the log.
double entropy(const Eigen::Ref<const Vector>& pred);

// -(1 - p_y) log p_y - sum_{i != y} p_i log(1 - p_i), same clamp. Lower for
// confident correct predictions, so members score low.
double mentr(const Eigen::Ref<const Vector>& pred, int label);

struct MiaScore {
  double value = 0.0;
  Direction direction = Direction::kHigherMeansMember;
  ScoreKind kind = ScoreKind::kConfidence;
};

// Single-prediction membership signals. Entropy and Mentr are negated so
// that every returned score reads "higher means member". Kinds that need
// more than (pred, label) raise an error.
MiaScore mia_score(ScoreKind kind, const Eigen::Ref<const Vector>& pred, int label);

struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;
  Lineage lineage = Lineage::kKnown;
};

struct DecisionRule {
  ThresholdMode mode = ThresholdMode::kGlobal;
  Direction direction = Direction::kHigherMeansMember;
  double global_threshold = 0.0;
  std::vector<double> per_class;  // valid where has_class is set; else global fallback
  std::vector<char> has_class;
};

// Thresholds maximize balanced accuracy over the calibration scores,
// sweeping midpoints of adjacent distinct values plus sentinels; ties break
// toward the smaller threshold. Per-class thresholds need both member and
// nonmember calibration scores in a class, otherwise that class falls back
// to the global threshold.
DecisionRule calibrate_rule(const ScoreSet& member_scores, const ScoreSet& nonmember_scores,
                            int n_classes, ThresholdMode mode, Direction direction);

bool rule_says_member(const DecisionRule& rule, double score, int label);

// Balanced accuracy of a rule on two score sets, no lineage restriction
// (calibration uses it internally).
double rule_balanced_accuracy(const DecisionRule& rule, const ScoreSet& members,
                              const ScoreSet& nonmembers);

// (correct member calls + correct non-member calls) / total, eval sets only.
double attack_accuracy(const DecisionRule& rule, const ScoreSet& eval_members,
                       const ScoreSet& eval_nonmembers);

struct AttackEntry {
  std::string name;
  double accuracy = 0.0;
  std::string rule;  // human-readable decision rule description
  double queries_per_target = 0.0;
};

// Target predictions and labels over the four index sets of an EvalSplit.
struct AttackContext {
  Matrix known_m_pred, known_n_pred, eval_m_pred, eval_n_pred;
  std::vector<int> known_m_y, known_n_y, eval_m_y, eval_n_y;
  int n_classes = 0;
};

AttackContext build_attack_context(const BatchQueryFn& target, const EvalSplit& split);

// The four calibrated metric attacks alone (correctness, confidence,
// entropy, Mentr); cheap enough to run per training epoch.
std::vector<AttackEntry> metric_attacks(const AttackContext& ctx);

// Direct single-query suite: correctness, confidence, entropy and Mentr
// metrics (each reporting the max over both directions and both threshold
// modes) plus the trained attack classifier on [prediction, onehot(y)].
std::vector<AttackEntry> direct_attacks(const AttackContext& ctx, const TrainConfig& nn_cfg);

// Boundary-distance proxy for binary features: per flips value, score each
// target by the fraction of n_noise noisy copies still classified
// correctly, calibrate on the known sets, and report the best flips value.
AttackEntry attack_label_only_noise(const BatchQueryFn& target, const EvalSplit& split,
                                    const std::vector<int>& flips_list, int n_noise,
                                    std::uint64_t seed);

// One random bit flip per target, one query, then the metric suite on the
// noisy predictions; reports the best metric.
AttackEntry attack_indirect_noisy_single(const BatchQueryFn& target, const EvalSplit& split,
                                         std::uint64_t seed);

// Member iff all n_repeats responses are bit-identical.
AttackEntry attack_replay(const SingleQueryFn& target, const EvalSplit& split, int n_repeats);

// Shadow ensemble over the attacker-known members with fresh non-model
// indices; the estimated soft label for any query follows the usual
// adaptive inference rule of the shadow.
SplitAiModel train_shadow_splitai(const EvalSplit& split, int K, int L, const TrainConfig& cfg,
                                  std::uint64_t seed);

double l2_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

// Cross-entropy distance -sum_i ref_i log(clamp(pred_i)).
double ce_distance(const Eigen::Ref<const Vector>& pred, const Eigen::Ref<const Vector>& ref);

// The four shadow-based attacks. lambda mirrors the defender's soft-label
// mixing so the attacker's estimates target the deployed model. Entries:
// two attack classifiers (concatenated features; difference features) and
// the two calibrated distance attacks (L2; cross-entropy), each reporting
// the max over both directions and both threshold modes.
std::vector<AttackEntry> adaptive_attacks(const SplitAiModel& shadow, const BatchQueryFn& target,
                                          const EvalSplit& split, const TrainConfig& nn_cfg,
                                          double lambda, std::uint64_t seed);

// Largest accuracy in a set of entries; empty -> 0.5 baseline.
AttackEntry best_attack(const std::vector<AttackEntry>& entries);

}  // namespace selena
