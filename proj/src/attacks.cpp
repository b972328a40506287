#include "selena/attacks.hpp"

#include "selena/io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace selena {
namespace {

constexpr double kProbFloor = 1e-12;

double clamped_log(double p) { return std::log(std::min(1.0, std::max(kProbFloor, p))); }

void check_pred_label(const Eigen::Ref<const Vector>& pred, int label, const char* who) {
  if (pred.size() < 2) throw Error(std::string(who) + ": prediction needs at least 2 classes");
  if (label < 0 || label >= pred.size())
    throw Error(std::string(who) + ": label " + std::to_string(label) + " out of range for " +
                std::to_string(pred.size()) + " classes");
}

void check_score_set(const ScoreSet& s, const char* who) {
  if (s.scores.size() != s.labels.size())
    throw Error(std::string(who) + ": scores and labels differ in length");
  if (s.scores.empty()) throw Error(std::string(who) + ": empty score set");
}

std::size_t count_geq(const std::vector<double>& ascending, double t) {
  return static_cast<std::size_t>(ascending.end() -
                                  std::lower_bound(ascending.begin(), ascending.end(), t));
}

std::size_t count_leq(const std::vector<double>& ascending, double t) {
  return static_cast<std::size_t>(std::upper_bound(ascending.begin(), ascending.end(), t) -
                                  ascending.begin());
}

// Balanced accuracy of "member iff score >= tau" (or <= for the other
// direction) over two ascending score vectors.
double balanced_at(const std::vector<double>& m, const std::vector<double>& n, double tau,
                   Direction dir) {
  double tpr, fpr;
  if (dir == Direction::kHigherMeansMember) {
    tpr = static_cast<double>(count_geq(m, tau)) / static_cast<double>(m.size());
    fpr = static_cast<double>(count_geq(n, tau)) / static_cast<double>(n.size());
  } else {
    tpr = static_cast<double>(count_leq(m, tau)) / static_cast<double>(m.size());
    fpr = static_cast<double>(count_leq(n, tau)) / static_cast<double>(n.size());
  }
  return 0.5 * (tpr + (1.0 - fpr));
}

// Candidates are a sentinel below the smallest value, midpoints of adjacent
// distinct values, and a sentinel above the largest, scanned in ascending
// order so that ties resolve to the smaller threshold.
double best_threshold(std::vector<double> m, std::vector<double> n, Direction dir,
                      double* best_acc = nullptr) {
  std::sort(m.begin(), m.end());
  std::sort(n.begin(), n.end());
  std::vector<double> all;
  all.reserve(m.size() + n.size());
  all.insert(all.end(), m.begin(), m.end());
  all.insert(all.end(), n.begin(), n.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> cands;
  cands.reserve(all.size() + 1);
  cands.push_back(all.front() - 1.0);
  for (std::size_t i = 1; i < all.size(); ++i) cands.push_back(0.5 * (all[i - 1] + all[i]));
  cands.push_back(all.back() + 1.0);

  double tau = cands.front();
  double acc = -1.0;
  for (double c : cands) {
    const double a = balanced_at(m, n, c, dir);
    if (a > acc) {
      acc = a;
      tau = c;
    }
  }
  if (best_acc) *best_acc = acc;
  return tau;
}

std::string describe_rule(const DecisionRule& r) {
  std::ostringstream os;
  os << (r.mode == ThresholdMode::kGlobal ? "global" : "per_class") << ' '
     << (r.direction == Direction::kHigherMeansMember ? ">=" : "<=")
     << " tau=" << format_double(r.global_threshold);
  if (r.mode == ThresholdMode::kPerClass) {
    std::size_t have = 0;
    for (char c : r.has_class) have += (c != 0);
    os << " (" << have << "/" << r.has_class.size() << " class thresholds)";
  }
  return os.str();
}

struct MetricSets {
  ScoreSet km, kn, em, en;
  int n_classes = 0;
};

// Max over both directions and both threshold modes; thresholds come from
// the known sets only. Ties keep the earliest variant, so results are
// deterministic.
AttackEntry best_calibrated(const std::string& name, const MetricSets& s, double queries) {
  AttackEntry best{name, -1.0, "", queries};
  for (Direction dir : {Direction::kHigherMeansMember, Direction::kLowerMeansMember}) {
    for (ThresholdMode mode : {ThresholdMode::kGlobal, ThresholdMode::kPerClass}) {
      const DecisionRule rule = calibrate_rule(s.km, s.kn, s.n_classes, mode, dir);
      const double acc = attack_accuracy(rule, s.em, s.en);
      if (acc > best.accuracy) {
        best.accuracy = acc;
        best.rule = describe_rule(rule);
      }
    }
  }
  return best;
}

ScoreSet metric_scores(const Eigen::Ref<const Matrix>& pred, const std::vector<int>& labels,
                       ScoreKind kind, Lineage lineage) {
  ScoreSet out;
  out.lineage = lineage;
  out.labels = labels;
  out.scores.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.scores[i] = mia_score(kind, pred.row(static_cast<Index>(i)).transpose(), labels[i]).value;
  return out;
}

MetricSets metric_sets(const AttackContext& ctx, ScoreKind kind) {
  MetricSets s;
  s.km = metric_scores(ctx.known_m_pred, ctx.known_m_y, kind, Lineage::kKnown);
  s.kn = metric_scores(ctx.known_n_pred, ctx.known_n_y, kind, Lineage::kKnown);
  s.em = metric_scores(ctx.eval_m_pred, ctx.eval_m_y, kind, Lineage::kEval);
  s.en = metric_scores(ctx.eval_n_pred, ctx.eval_n_y, kind, Lineage::kEval);
  s.n_classes = ctx.n_classes;
  return s;
}

std::vector<int> labels_at(const Dataset& data, const std::vector<Index>& rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = data.labels[static_cast<std::size_t>(rows[i])];
  return out;
}

Matrix rows_at(const Dataset& data, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), data.d());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = data.features.row(rows[i]);
  return out;
}

// Binary classifier on attacker-known features; member is class 1 and the
// decision is the argmax. The batch size is clamped to the training-set
// size so small calibration sets stay valid.
AttackEntry nn_attack(const std::string& name, const Matrix& km, const Matrix& kn,
                      const Matrix& em, const Matrix& en, const TrainConfig& nn_cfg,
                      double queries) {
  Matrix X(km.rows() + kn.rows(), km.cols());
  X.topRows(km.rows()) = km;
  X.bottomRows(kn.rows()) = kn;
  std::vector<int> y(static_cast<std::size_t>(X.rows()), 0);
  for (Index i = 0; i < km.rows(); ++i) y[static_cast<std::size_t>(i)] = 1;

  TrainConfig cfg = nn_cfg;
  cfg.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(X.rows()));
  const Mlp net = train_hard(X, y, 2, cfg);

  const Matrix pm = net.predict_batch(em);
  const Matrix pn = net.predict_batch(en);
  Index correct = 0;
  for (Index i = 0; i < pm.rows(); ++i) correct += argmax_lowest(pm.row(i).transpose()) == 1;
  for (Index i = 0; i < pn.rows(); ++i) correct += argmax_lowest(pn.row(i).transpose()) == 0;
  const double acc = static_cast<double>(correct) / static_cast<double>(pm.rows() + pn.rows());
  return AttackEntry{name, acc, "argmax of attack classifier", queries};
}

void check_binary_features(const EvalSplit& split, const char* who) {
  if (split.train.feature_kind != FeatureKind::kBinary ||
      split.test.feature_kind != FeatureKind::kBinary)
    throw Error(std::string(who) + ": needs binary features");
}

Matrix hstack3(const Matrix& a, const Matrix& b, const Matrix& c) {
  Matrix out(a.rows(), a.cols() + b.cols() + c.cols());
  out.leftCols(a.cols()) = a;
  out.middleCols(a.cols(), b.cols()) = b;
  out.rightCols(c.cols()) = c;
  return out;
}

}  // namespace

double entropy(const Eigen::Ref<const Vector>& pred) {
  double h = 0.0;
  for (Index i = 0; i < pred.size(); ++i) h -= pred(i) * clamped_log(pred(i));
  return h;
}

double mentr(const Eigen::Ref<const Vector>& pred, int label) {
  check_pred_label(pred, label, "mentr");
  double m = -(1.0 - pred(label)) * clamped_log(pred(label));
  for (Index i = 0; i < pred.size(); ++i) {
    if (i == label) continue;
    m -= pred(i) * clamped_log(1.0 - pred(i));
  }
  return m;
}

MiaScore mia_score(ScoreKind kind, const Eigen::Ref<const Vector>& pred, int label) {
  check_pred_label(pred, label, "mia_score");
  MiaScore s;
  s.kind = kind;
  s.direction = Direction::kHigherMeansMember;
  switch (kind) {
    case ScoreKind::kCorrectness:
      s.value = argmax_lowest(pred) == label ? 1.0 : 0.0;
      return s;
    case ScoreKind::kConfidence:
      s.value = pred(label);
      return s;
    case ScoreKind::kNegEntropy:
      s.value = -entropy(pred);
      return s;
    case ScoreKind::kNegMentr:
      s.value = -mentr(pred, label);
      return s;
    case ScoreKind::kNoiseRobustness:
    case ScoreKind::kL2Dist:
    case ScoreKind::kCEDist:
    case ScoreKind::kNnPosterior:
      throw Error("mia_score: kind needs more inputs than a single prediction");
  }
  throw Error("mia_score: unknown kind");
}

DecisionRule calibrate_rule(const ScoreSet& member_scores, const ScoreSet& nonmember_scores,
                            int n_classes, ThresholdMode mode, Direction direction) {
  check_score_set(member_scores, "calibrate_rule");
  check_score_set(nonmember_scores, "calibrate_rule");
  if (member_scores.lineage != Lineage::kKnown || nonmember_scores.lineage != Lineage::kKnown)
    throw Error("calibrate_rule: thresholds may only be fit on attacker-known scores");
  if (n_classes < 1) throw Error("calibrate_rule: n_classes must be positive");
  for (int y : member_scores.labels)
    if (y < 0 || y >= n_classes) throw Error("calibrate_rule: label out of range");
  for (int y : nonmember_scores.labels)
    if (y < 0 || y >= n_classes) throw Error("calibrate_rule: label out of range");

  DecisionRule rule;
  rule.mode = mode;
  rule.direction = direction;
  rule.global_threshold = best_threshold(member_scores.scores, nonmember_scores.scores, direction);
  if (mode == ThresholdMode::kPerClass) {
    rule.per_class.assign(static_cast<std::size_t>(n_classes), 0.0);
    rule.has_class.assign(static_cast<std::size_t>(n_classes), 0);
    for (int y = 0; y < n_classes; ++y) {
      std::vector<double> m, n;
      for (std::size_t i = 0; i < member_scores.labels.size(); ++i)
        if (member_scores.labels[i] == y) m.push_back(member_scores.scores[i]);
      for (std::size_t i = 0; i < nonmember_scores.labels.size(); ++i)
        if (nonmember_scores.labels[i] == y) n.push_back(nonmember_scores.scores[i]);
      // A class threshold needs calibration scores on both sides; otherwise
      // the class keeps the global threshold.
      if (m.empty() || n.empty()) continue;
      rule.per_class[static_cast<std::size_t>(y)] = best_threshold(std::move(m), std::move(n), direction);
      rule.has_class[static_cast<std::size_t>(y)] = 1;
    }
  }
  return rule;
}

bool rule_says_member(const DecisionRule& rule, double score, int label) {
  double tau = rule.global_threshold;
  if (rule.mode == ThresholdMode::kPerClass && label >= 0 &&
      static_cast<std::size_t>(label) < rule.has_class.size() &&
      rule.has_class[static_cast<std::size_t>(label)])
    tau = rule.per_class[static_cast<std::size_t>(label)];
  return rule.direction == Direction::kHigherMeansMember ? score >= tau : score <= tau;
}

double rule_balanced_accuracy(const DecisionRule& rule, const ScoreSet& members,
                              const ScoreSet& nonmembers) {
  check_score_set(members, "rule_balanced_accuracy");
  check_score_set(nonmembers, "rule_balanced_accuracy");
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < members.scores.size(); ++i)
    tp += rule_says_member(rule, members.scores[i], members.labels[i]);
  for (std::size_t i = 0; i < nonmembers.scores.size(); ++i)
    tn += !rule_says_member(rule, nonmembers.scores[i], nonmembers.labels[i]);
  const double tpr = static_cast<double>(tp) / static_cast<double>(members.scores.size());
  const double tnr = static_cast<double>(tn) / static_cast<double>(nonmembers.scores.size());
  return 0.5 * (tpr + tnr);
}

double attack_accuracy(const DecisionRule& rule, const ScoreSet& eval_members,
                       const ScoreSet& eval_nonmembers) {
  check_score_set(eval_members, "attack_accuracy");
  check_score_set(eval_nonmembers, "attack_accuracy");
  if (eval_members.lineage != Lineage::kEval || eval_nonmembers.lineage != Lineage::kEval)
    throw Error("attack_accuracy: accuracy is only reported on eval scores");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_members.scores.size(); ++i)
    correct += rule_says_member(rule, eval_members.scores[i], eval_members.labels[i]);
  for (std::size_t i = 0; i < eval_nonmembers.scores.size(); ++i)
    correct += !rule_says_member(rule, eval_nonmembers.scores[i], eval_nonmembers.labels[i]);
  return static_cast<double>(correct) /
         static_cast<double>(eval_members.scores.size() + eval_nonmembers.scores.size());
}

AttackContext build_attack_context(const BatchQueryFn& target, const EvalSplit& split) {
  if (!target) throw Error("build_attack_context: empty query function");
  AttackContext ctx;
  ctx.n_classes = split.train.n_classes;
  ctx.known_m_pred = target(rows_at(split.train, split.known_members));
  ctx.known_n_pred = target(rows_at(split.test, split.known_nonmembers));
  ctx.eval_m_pred = target(rows_at(split.train, split.eval_members));
  ctx.eval_n_pred = target(rows_at(split.test, split.eval_nonmembers));
  ctx.known_m_y = labels_at(split.train, split.known_members);
  ctx.known_n_y = labels_at(split.test, split.known_nonmembers);
  ctx.eval_m_y = labels_at(split.train, split.eval_members);
  ctx.eval_n_y = labels_at(split.test, split.eval_nonmembers);
  return ctx;
}

std::vector<AttackEntry> metric_attacks(const AttackContext& ctx) {
  std::vector<AttackEntry> out;
  out.push_back(best_calibrated("direct_correctness", metric_sets(ctx, ScoreKind::kCorrectness), 1.0));
  out.push_back(best_calibrated("direct_confidence", metric_sets(ctx, ScoreKind::kConfidence), 1.0));
  out.push_back(best_calibrated("direct_entropy", metric_sets(ctx, ScoreKind::kNegEntropy), 1.0));
  out.push_back(best_calibrated("direct_mentr", metric_sets(ctx, ScoreKind::kNegMentr), 1.0));
  return out;
}

std::vector<AttackEntry> direct_attacks(const AttackContext& ctx, const TrainConfig& nn_cfg) {
  std::vector<AttackEntry> out = metric_attacks(ctx);

  const Matrix ym_k = one_hot(ctx.known_m_y, ctx.n_classes);
  const Matrix yn_k = one_hot(ctx.known_n_y, ctx.n_classes);
  const Matrix ym_e = one_hot(ctx.eval_m_y, ctx.n_classes);
  const Matrix yn_e = one_hot(ctx.eval_n_y, ctx.n_classes);
  auto concat = [](const Matrix& p, const Matrix& y) {
    Matrix f(p.rows(), p.cols() + y.cols());
    f.leftCols(p.cols()) = p;
    f.rightCols(y.cols()) = y;
    return f;
  };
  out.push_back(nn_attack("direct_nn", concat(ctx.known_m_pred, ym_k),
                          concat(ctx.known_n_pred, yn_k), concat(ctx.eval_m_pred, ym_e),
                          concat(ctx.eval_n_pred, yn_e), nn_cfg, 1.0));
  return out;
}

AttackEntry attack_label_only_noise(const BatchQueryFn& target, const EvalSplit& split,
                                    const std::vector<int>& flips_list, int n_noise,
                                    std::uint64_t seed) {
  check_binary_features(split, "attack_label_only_noise");
  if (!target) throw Error("attack_label_only_noise: empty query function");
  if (n_noise < 1) throw Error("attack_label_only_noise: n_noise must be positive");
  if (flips_list.empty()) throw Error("attack_label_only_noise: empty flips list");
  const Index d = split.train.d();
  for (int f : flips_list)
    if (f < 0 || f > d) throw Error("attack_label_only_noise: flips out of [0, d]");

  // Score = fraction of noisy copies still classified correctly. Stream
  // tag encodes (flips, set) so every score is reproducible in isolation.
  auto score_set = [&](const Dataset& src, const std::vector<Index>& idx, int f,
                       std::uint64_t stream, Lineage lineage) {
    Rng rng(stream);
    ScoreSet out;
    out.lineage = lineage;
    out.labels = labels_at(src, idx);
    out.scores.resize(idx.size());
    Matrix noisy(n_noise, d);
    for (std::size_t t = 0; t < idx.size(); ++t) {
      for (int c = 0; c < n_noise; ++c) {
        noisy.row(c) = src.features.row(idx[t]);
        for (std::size_t j : rng.sample_without_replacement(static_cast<std::size_t>(d),
                                                            static_cast<std::size_t>(f)))
          noisy(c, static_cast<Index>(j)) = 1.0 - noisy(c, static_cast<Index>(j));
      }
      const Matrix pred = target(noisy);
      int ok = 0;
      for (int c = 0; c < n_noise; ++c)
        ok += argmax_lowest(pred.row(c).transpose()) == out.labels[t];
      out.scores[t] = static_cast<double>(ok) / static_cast<double>(n_noise);
    }
    return out;
  };

  AttackEntry best{"label_only_noise", -1.0, "",
                   static_cast<double>(flips_list.size()) * static_cast<double>(n_noise)};
  for (int f : flips_list) {
    MetricSets s;
    s.n_classes = split.train.n_classes;
    const std::uint64_t base = static_cast<std::uint64_t>(f) * 4u;
    s.km = score_set(split.train, split.known_members, f, derive_seed(seed, base + 0), Lineage::kKnown);
    s.kn = score_set(split.test, split.known_nonmembers, f, derive_seed(seed, base + 1), Lineage::kKnown);
    s.em = score_set(split.train, split.eval_members, f, derive_seed(seed, base + 2), Lineage::kEval);
    s.en = score_set(split.test, split.eval_nonmembers, f, derive_seed(seed, base + 3), Lineage::kEval);
    const AttackEntry e = best_calibrated(best.name, s, best.queries_per_target);
    if (e.accuracy > best.accuracy) {
      best.accuracy = e.accuracy;
      best.rule = e.rule + ", flips=" + std::to_string(f);
    }
  }
  return best;
}

AttackEntry attack_indirect_noisy_single(const BatchQueryFn& target, const EvalSplit& split,
                                         std::uint64_t seed) {
  check_binary_features(split, "attack_indirect_noisy_single");
  if (!target) throw Error("attack_indirect_noisy_single: empty query function");
  const Index d = split.train.d();

  // One flipped bit per target, one query; the original sample is never sent.
  auto noisy_pred = [&](const Dataset& src, const std::vector<Index>& idx, std::uint64_t stream) {
    Rng rng(stream);
    Matrix X = rows_at(src, idx);
    for (Index r = 0; r < X.rows(); ++r) {
      const Index j = static_cast<Index>(rng.uniform_below(static_cast<std::uint64_t>(d)));
      X(r, j) = 1.0 - X(r, j);
    }
    return target(X);
  };

  AttackContext ctx;
  ctx.n_classes = split.train.n_classes;
  ctx.known_m_pred = noisy_pred(split.train, split.known_members, derive_seed(seed, 0));
  ctx.known_n_pred = noisy_pred(split.test, split.known_nonmembers, derive_seed(seed, 1));
  ctx.eval_m_pred = noisy_pred(split.train, split.eval_members, derive_seed(seed, 2));
  ctx.eval_n_pred = noisy_pred(split.test, split.eval_nonmembers, derive_seed(seed, 3));
  ctx.known_m_y = labels_at(split.train, split.known_members);
  ctx.known_n_y = labels_at(split.test, split.known_nonmembers);
  ctx.eval_m_y = labels_at(split.train, split.eval_members);
  ctx.eval_n_y = labels_at(split.test, split.eval_nonmembers);

  struct Named {
    ScoreKind kind;
    const char* label;
  };
  const Named kinds[] = {{ScoreKind::kCorrectness, "correctness"},
                         {ScoreKind::kConfidence, "confidence"},
                         {ScoreKind::kNegEntropy, "entropy"},
                         {ScoreKind::kNegMentr, "mentr"}};
  AttackEntry best{"indirect_noisy", -1.0, "", 1.0};
  for (const Named& k : kinds) {
    const AttackEntry e = best_calibrated(best.name, metric_sets(ctx, k.kind), 1.0);
    if (e.accuracy > best.accuracy) {
      best.accuracy = e.accuracy;
      best.rule = std::string("metric=") + k.label + ", " + e.rule;
    }
  }
  return best;
}

AttackEntry attack_replay(const SingleQueryFn& target, const EvalSplit& split, int n_repeats) {
  if (!target) throw Error("attack_replay: empty query function");
  if (n_repeats < 1) throw Error("attack_replay: n_repeats must be positive");

  // Fixed rule, so the known sets are never queried. Responses must match
  // bitwise; any numeric wobble counts as a fresh draw.
  auto stable = [&](const Eigen::Ref<const Vector>& x) {
    const Vector first = target(x);
    for (int r = 1; r < n_repeats; ++r) {
      const Vector v = target(x);
      if (v.size() != first.size() || !(v.array() == first.array()).all()) return false;
    }
    return true;
  };

  std::size_t correct = 0;
  for (Index i : split.eval_members) correct += stable(split.train.features.row(i).transpose());
  for (Index i : split.eval_nonmembers) correct += !stable(split.test.features.row(i).transpose());
  const double acc = static_cast<double>(correct) /
                     static_cast<double>(split.eval_members.size() + split.eval_nonmembers.size());
  return AttackEntry{"replay", acc, "member iff all responses bit-identical",
                     static_cast<double>(n_repeats)};
}

SplitAiModel train_shadow_splitai(const EvalSplit& split, int K, int L, const TrainConfig& cfg,
                                  std::uint64_t seed) {
  if (split.known_members.empty()) throw Error("train_shadow_splitai: no known members");
  return train_splitai(subset(split.train, split.known_members), K, L, cfg, seed);
}

double l2_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  if (a.size() != b.size()) throw Error("l2_distance: size mismatch");
  return (a - b).norm();
}

double ce_distance(const Eigen::Ref<const Vector>& pred, const Eigen::Ref<const Vector>& ref) {
  if (pred.size() != ref.size()) throw Error("ce_distance: size mismatch");
  double ce = 0.0;
  for (Index i = 0; i < pred.size(); ++i) ce -= ref(i) * clamped_log(pred(i));
  return ce;
}

std::vector<AttackEntry> adaptive_attacks(const SplitAiModel& shadow, const BatchQueryFn& target,
                                          const EvalSplit& split, const TrainConfig& nn_cfg,
                                          double lambda, std::uint64_t seed) {
  if (!target) throw Error("adaptive_attacks: empty query function");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("adaptive_attacks: lambda outside [0, 1]");
  const int k = shadow.n_classes;
  if (k != split.train.n_classes) throw Error("adaptive_attacks: class count mismatch");

  struct SetData {
    Matrix shadow_mix, target_pred, onehot;
    std::vector<int> labels;
    Lineage lineage;
  };
  // The shadow estimate mirrors the defender's soft-label mix, so the
  // attacker compares the target against what a member's response should be.
  auto build = [&](const Dataset& src, const std::vector<Index>& idx, std::uint64_t tag,
                   Lineage lineage) {
    SetData s;
    s.lineage = lineage;
    s.labels = labels_at(src, idx);
    const Matrix X = rows_at(src, idx);
    Rng rng(derive_seed(seed, tag));
    const Matrix est = splitai_infer_batch(shadow, X, rng);
    s.onehot = one_hot(s.labels, k);
    s.shadow_mix = (1.0 - lambda) * est + lambda * s.onehot;
    s.target_pred = target(X);
    return s;
  };
  const SetData km = build(split.train, split.known_members, 0, Lineage::kKnown);
  const SetData kn = build(split.test, split.known_nonmembers, 1, Lineage::kKnown);
  const SetData em = build(split.train, split.eval_members, 2, Lineage::kEval);
  const SetData en = build(split.test, split.eval_nonmembers, 3, Lineage::kEval);

  std::vector<AttackEntry> out;
  out.push_back(nn_attack("adaptive_nn1",
                          hstack3(km.shadow_mix, km.target_pred, km.onehot),
                          hstack3(kn.shadow_mix, kn.target_pred, kn.onehot),
                          hstack3(em.shadow_mix, em.target_pred, em.onehot),
                          hstack3(en.shadow_mix, en.target_pred, en.onehot), nn_cfg, 1.0));
  out.push_back(nn_attack("adaptive_nn2", km.shadow_mix - km.target_pred,
                          kn.shadow_mix - kn.target_pred, em.shadow_mix - em.target_pred,
                          en.shadow_mix - en.target_pred, nn_cfg, 1.0));

  auto dist_scores = [](const SetData& s, bool use_ce) {
    ScoreSet out_s;
    out_s.lineage = s.lineage;
    out_s.labels = s.labels;
    out_s.scores.resize(s.labels.size());
    for (Index i = 0; i < s.target_pred.rows(); ++i) {
      const Vector t = s.target_pred.row(i).transpose();
      const Vector r = s.shadow_mix.row(i).transpose();
      out_s.scores[static_cast<std::size_t>(i)] = use_ce ? ce_distance(t, r) : l2_distance(t, r);
    }
    return out_s;
  };
  for (bool use_ce : {false, true}) {
    MetricSets s;
    s.n_classes = k;
    s.km = dist_scores(km, use_ce);
    s.kn = dist_scores(kn, use_ce);
    s.em = dist_scores(em, use_ce);
    s.en = dist_scores(en, use_ce);
    out.push_back(best_calibrated(use_ce ? "adaptive_ce" : "adaptive_l2", s, 1.0));
  }
  return out;
}

AttackEntry best_attack(const std::vector<AttackEntry>& entries) {
  AttackEntry best{"none", 0.5, "baseline", 0.0};
  bool any = false;
  for (const AttackEntry& e : entries) {
    if (!any || e.accuracy > best.accuracy) {
      best = e;
      any = true;
    }
  }
  return best;
}

}  // namespace selena
