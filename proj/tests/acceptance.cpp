// Acceptance harness. One desk-scale experiment feeds most checks; the
// rest are exact combinatorial invariants and formula references. Each
// criterion prints one [PASS]/[FAIL] line with its pinned tolerances; the
// binary exits nonzero if any line fails. Honest failures stay visible:
// nothing here retries or reseeds to make a line turn green.

#include "selena/attacks.hpp"
#include "selena/game.hpp"
#include "selena/io.hpp"
#include "selena/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace selena;

int g_failures = 0;

void line(int idx, const std::string& title, bool pass, const std::string& detail) {
  std::printf("[%s] %2d. %s: %s\n", pass ? "PASS" : "FAIL", idx, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::optional<double> entry(const DefenseRow& row, const std::string& name) {
  for (const AttackEntry& e : row.attacks)
    if (e.name == name) return e.accuracy;
  return std::nullopt;
}

double best_prefixed(const DefenseRow& row, const std::vector<std::string>& prefixes) {
  double best = -1.0;
  for (const AttackEntry& e : row.attacks)
    for (const std::string& p : prefixes)
      if (e.name.rfind(p, 0) == 0) best = std::max(best, e.accuracy);
  return best;
}

double best_all(const DefenseRow& row) {
  double best = -1.0;
  for (const AttackEntry& e : row.attacks) best = std::max(best, e.accuracy);
  return best;
}

double stage_seconds(const RunReport& rep, const std::string& stage) {
  for (const StageTiming& t : rep.timings)
    if (t.stage == stage) return t.seconds;
  return -1.0;
}

ScoreSet make_scores(std::vector<double> s, std::vector<int> y, Lineage lin) {
  ScoreSet out;
  out.scores = std::move(s);
  out.labels = std::move(y);
  out.lineage = lin;
  return out;
}

// Max relative mismatch between the net's analytic gradient (recovered from
// one full-batch SGD step at two learning rates) and central differences.
double gradient_max_mismatch() {
  const Index n = 6;
  const int d = 4, k = 3;
  Rng r(91);
  Matrix X(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) X(i, j) = r.uniform(-1.0, 1.0);
  Matrix T(n, k);
  for (Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Index j = 0; j < k; ++j) {
      T(i, j) = r.uniform(0.05, 1.0);
      sum += T(i, j);
    }
    T.row(i) /= sum;
  }
  TrainConfig cfg;
  cfg.hidden_sizes = {5};
  cfg.activation = Activation::kTanh;
  cfg.optimizer = Optimizer::kSgd;
  cfg.epochs = 1;
  cfg.batch_size = static_cast<int>(n);
  cfg.seed = 17;
  const double lr1 = 0.25, lr2 = 0.125;
  cfg.learning_rate = lr1;
  const Mlp a = train_soft(X, T, cfg);
  cfg.learning_rate = lr2;
  const Mlp b = train_soft(X, T, cfg);

  Mlp net0 = a;
  std::vector<Matrix> gw(a.weights.size());
  std::vector<Vector> gb(a.weights.size());
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    gw[l] = (b.weights[l] - a.weights[l]) / (lr1 - lr2);
    gb[l] = (b.biases[l] - a.biases[l]) / (lr1 - lr2);
    net0.weights[l] = a.weights[l] + lr1 * gw[l];
    net0.biases[l] = a.biases[l] + lr1 * gb[l];
  }

  const double h = 1e-5;
  const auto loss_at = [&](const Mlp& m) { return soft_cross_entropy(m.predict_batch(X), T); };
  double worst = 0.0;
  const auto probe = [&](double analytic, double fd) {
    const double denom = 1e-4 * (std::abs(fd) + std::abs(analytic)) + 1e-7;
    worst = std::max(worst, std::abs(fd - analytic) / denom);
  };
  for (std::size_t l = 0; l < net0.weights.size(); ++l) {
    for (Index o = 0; o < net0.weights[l].rows(); ++o)
      for (Index i = 0; i < net0.weights[l].cols(); ++i) {
        Mlp plus = net0, minus = net0;
        plus.weights[l](o, i) += h;
        minus.weights[l](o, i) -= h;
        probe(gw[l](o, i), (loss_at(plus) - loss_at(minus)) / (2.0 * h));
      }
    for (Index o = 0; o < net0.biases[l].size(); ++o) {
      Mlp plus = net0, minus = net0;
      plus.biases[l][o] += h;
      minus.biases[l][o] -= h;
      probe(gb[l][o], (loss_at(plus) - loss_at(minus)) / (2.0 * h));
    }
  }
  return worst;  // <= 1 means every coordinate is inside the guard band
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();

  // Desk benchmark: the config defaults, two lambda endpoints, three
  // attacker-knowledge fractions (first one primary), game at alpha=0.1.
  ExperimentConfig cfg;
  cfg.seed = 1;
  cfg.out_dir = "acceptance_out";
  cfg.lambdas = {0.0, 1.0};
  cfg.knowledge_fractions = {0.5, 0.1, 0.9};
  cfg.game_alpha = 0.1;

  std::printf("desk benchmark: %d classes, %d features, %lld members, K=%d L=%d, seed=%llu\n",
              cfg.n_classes, cfg.n_features, static_cast<long long>(cfg.n_members), cfg.K,
              cfg.L, static_cast<unsigned long long>(cfg.seed));
  std::fflush(stdout);

  const RunReport rep = run_experiment(cfg);
  if (!rep.complete) {
    std::printf("[FAIL]  0. experiment pipeline: failed at stage %s: %s\n",
                rep.failed_stage.c_str(), rep.failure_message.c_str());
    return 1;
  }
  const DefenseRow& undef = rep.rows[0];
  const DefenseRow& splitai = rep.rows[1];
  const DefenseRow& aoao = rep.rows[2];
  const DefenseRow& sel0 = rep.rows[3];  // lambda = 0, the selena row
  const DefenseRow& sel1 = rep.rows[4];  // lambda = 1 endpoint

  // 1. Single-query game at n=25, K=5, L=2, 300 trials, best-metric
  // adversary: the 95% CI of the advantage must contain 0.5, within 5 min.
  {
    const double adv = rep.game.splitai_advantage;
    const double ci = rep.game.splitai_ci;
    const double secs = stage_seconds(rep, "game");
    const bool pass = rep.game.present && rep.game.trials == 300 && rep.game.n == 25 &&
                      std::abs(adv - 0.5) <= ci && secs >= 0.0 && secs <= 300.0;
    line(1, "single-query game vs split-ai stays at chance", pass,
         "advantage=" + fmt(adv) + " ci=" + fmt(ci) + " trials=" +
             std::to_string(rep.game.trials) + " stage=" + fmt(secs) + "s");
  }

  // 2. Best direct single-query attack vs adaptive split-ai in [0.48, 0.52].
  {
    const double best = best_prefixed(splitai, {"direct_"});
    line(2, "split-ai holds direct single-query attacks to chance", best >= 0.48 && best <= 0.52,
         "best_direct=" + fmt(best) + " target=[0.48, 0.52]");
  }

  // 3. Undefended model: train accuracy >= 0.99 and best direct >= 0.60.
  {
    const double best = best_prefixed(undef, {"direct_"});
    line(3, "undefended model memorizes and leaks", undef.train_acc >= 0.99 && best >= 0.60,
         "train_acc=" + fmt(undef.train_acc) + " best_direct=" + fmt(best) +
             " targets: >=0.99, >=0.60");
  }

  // 4. Best of direct+label-only+adaptive: selena at least 0.05 below
  // undefended, and selena's advantage over 0.5 at most half of undefended's.
  {
    const std::vector<std::string> fam = {"direct_", "label_only", "adaptive_"};
    const double bu = best_prefixed(undef, fam);
    const double bs = best_prefixed(sel0, fam);
    const bool drop = bs <= bu - 0.05;
    const bool factor = (bs - 0.5) <= 0.5 * (bu - 0.5);
    line(4, "selena cuts the best attack and halves the advantage", drop && factor,
         "undefended=" + fmt(bu) + " selena=" + fmt(bs) + " advantages: " + fmt(bu - 0.5) +
             " vs " + fmt(bs - 0.5));
  }

  // 5. Utility: selena test accuracy within 0.05 of undefended.
  {
    const bool pass = sel0.test_acc >= undef.test_acc - 0.05;
    line(5, "selena keeps test accuracy within 0.05 of undefended", pass,
         "undefended=" + fmt(undef.test_acc) + " selena=" + fmt(sel0.test_acc));
  }

  // 6. Averaging all sub-models leaks at least 0.05 more than the adaptive
  // view under the direct single-query family.
  {
    const double ba = best_prefixed(aoao, {"direct_"});
    const double bs = best_prefixed(splitai, {"direct_"});
    line(6, "average-over-all-outputs leaks more than adaptive inference", ba >= bs + 0.05,
         "aoao=" + fmt(ba) + " splitai=" + fmt(bs) + " target gap >= 0.05");
  }

  // 7. One-flip indirect neighbour probe: >= 0.55 vs split-ai; vs selena no
  // better than its best direct attack + 0.01.
  {
    const auto is = entry(splitai, "indirect_noisy");
    const auto ie = entry(sel0, "indirect_noisy");
    const double sd = best_prefixed(sel0, {"direct_"});
    const bool pass = is && ie && *is >= 0.55 && *ie <= sd + 0.01;
    line(7, "indirect probe leaks vs split-ai, not vs selena", pass,
         "splitai=" + fmt(is.value_or(-1)) + " selena=" + fmt(ie.value_or(-1)) +
             " selena_direct=" + fmt(sd));
  }

  // 8. Replay: >= 0.9 vs the stochastic split-ai view; exactly 0.5 vs the
  // deterministic selena model.
  {
    const auto rs = entry(splitai, "replay");
    const auto re = entry(sel0, "replay");
    const bool pass = rs && re && *rs >= 0.9 && *re == 0.5;
    line(8, "replay separates stochastic split-ai, not selena", pass,
         "splitai=" + fmt(rs.value_or(-1)) + " selena=" + fmt(re.value_or(-1)) +
             " (selena must be 0.5 exactly)");
  }

  // Criteria 9 and 11 probe the canonical artifacts directly; retrain them
  // once (deterministic, so identical to what the run used).
  const EvalSplit split = build_pipeline_split(cfg);
  const SplitAiModel model = train_splitai_model(cfg, split);

  // 9. Partition exactness on the full benchmark: subset sizes sum to
  // n(K-L), every sample sits in exactly K-L subsets, and every member
  // query evaluates exactly its L excluded sub-models. Zero violations.
  {
    const Index n = split.train.n();
    long long violations = 0;
    long long size_sum = 0;

    const std::vector<std::vector<Index>> subsets = build_subsets(split.train, model.idnon);
    std::vector<int> in_count(static_cast<std::size_t>(n), 0);
    for (const std::vector<Index>& s : subsets) {
      size_sum += static_cast<long long>(s.size());
      for (Index row : s) ++in_count[static_cast<std::size_t>(row)];
    }
    for (int c : in_count)
      if (c != cfg.K - cfg.L) ++violations;

    for (const std::vector<int>& ex : model.idnon.idnon)
      if (static_cast<int>(ex.size()) != cfg.L) ++violations;

    // Member trace: the adaptive path must evaluate exactly the excluded
    // sub-models, none of which contain the queried row.
    std::vector<std::vector<char>> contains(static_cast<std::size_t>(cfg.K),
                                            std::vector<char>(static_cast<std::size_t>(n), 0));
    for (std::size_t i = 0; i < subsets.size(); ++i)
      for (Index row : subsets[i]) contains[i][static_cast<std::size_t>(row)] = 1;
    Rng rng(4242);
    for (Index i = 0; i < n; ++i) {
      InferenceTrace trace;
      (void)splitai_infer(model, split.train.features.row(i).transpose(), rng, &trace);
      if (!trace.member_branch || trace.matched_sample != i ||
          trace.evaluated != model.idnon.idnon[static_cast<std::size_t>(i)])
        ++violations;
      for (int e : trace.evaluated)
        if (contains[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)]) ++violations;
    }

    const long long expect = static_cast<long long>(n) * (cfg.K - cfg.L);
    const bool pass = size_sum == expect && violations == 0;
    line(9, "partition bookkeeping exact, member queries avoid in-models", pass,
         "sum|subset|=" + std::to_string(size_sum) + " expected=" + std::to_string(expect) +
             " violations=" + std::to_string(violations));
  }

  // 10. Distillation advantage bound at alpha=0.1: measured selena game
  // advantage <= 0.5 + alpha + beta_hat + CI slack.
  {
    const double rhs = 0.5 + rep.game.alpha + rep.game.beta_hat + rep.game.selena_ci;
    line(10, "distillation advantage bound holds at alpha=0.1",
         rep.game.present && rep.game.bound_satisfied,
         "sqmi=" + fmt(rep.game.selena_advantage) + " <= 0.5+" + fmt(rep.game.alpha) + "+" +
             fmt(rep.game.beta_hat) + "+" + fmt(rep.game.selena_ci) + " = " + fmt(rhs));
  }

  // 11. Lambda endpoints: lambda=1 matches undefended within 0.02 on both
  // accuracies and best attack; lambda=0 reproduces the selena row exactly
  // under the same seeds; best attack at lambda=1 >= at lambda=0.
  {
    const double da = std::abs(sel1.train_acc - undef.train_acc);
    const double db = std::abs(sel1.test_acc - undef.test_acc);
    const double b1 = best_all(sel1);
    const double b0 = best_all(sel0);
    const double dc = std::abs(b1 - best_all(undef));
    const ProtectedModel redo = train_selena_model(cfg, model, split, 0.0);
    const double rtr = accuracy(redo.model, split.train.features, split.train.labels);
    const double rte = accuracy(redo.model, split.test.features, split.test.labels);
    const bool exact0 = rtr == sel0.train_acc && rte == sel0.test_acc;
    const bool pass = da <= 0.02 && db <= 0.02 && dc <= 0.02 && exact0 && b1 >= b0;
    line(11, "lambda endpoints: 1 matches undefended, 0 reproduces selena", pass,
         "|d_train|=" + fmt(da) + " |d_test|=" + fmt(db) + " |d_best|=" + fmt(dc) +
             " lambda0_exact=" + (exact0 ? "yes" : "no") + " best(1)=" + fmt(b1) +
             " best(0)=" + fmt(b0));
  }

  // 12. Adaptive attack accuracy non-decreasing in attacker knowledge
  // across fractions {0.1, 0.5, 0.9}, within 0.02 noise.
  {
    std::vector<SweepPoint> pts = rep.adaptive_sweep;
    std::sort(pts.begin(), pts.end(), [](const SweepPoint& a, const SweepPoint& b) {
      return a.knowledge_fraction < b.knowledge_fraction;
    });
    bool pass = pts.size() == 3;
    std::string detail;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i > 0 && pts[i].best_adaptive < pts[i - 1].best_adaptive - 0.02) pass = false;
      detail += (i ? " " : "") + fmt(pts[i].knowledge_fraction) + ":" + fmt(pts[i].best_adaptive);
    }
    line(12, "adaptive attack strengthens with attacker knowledge", pass, detail);
  }

  // 13. Formula references: metric golden values, gradient finite
  // differences, attack-accuracy trivial cases.
  {
    Vector p(3);
    p << 0.7, 0.2, 0.1;
    Vector uniform(4);
    uniform << 0.25, 0.25, 0.25, 0.25;
    Vector onehot(3);
    onehot << 0.0, 1.0, 0.0;
    bool ok = std::abs(entropy(p) - 0.80181855254333730856) <= 1e-12;
    ok = ok && std::abs(mentr(p, 0) - 0.16216724501024429495) <= 1e-12;
    ok = ok && std::abs(entropy(uniform) - std::log(4.0)) <= 1e-12;
    ok = ok && mentr(onehot, 1) == 0.0 && std::isfinite(mentr(onehot, 0)) &&
         mentr(onehot, 0) > 20.0;
    ok = ok && mia_score(ScoreKind::kConfidence, p, 2).value == 0.1;

    const double grad_worst = gradient_max_mismatch();
    ok = ok && grad_worst <= 1.0;

    const ScoreSet em = make_scores({0.9, 0.8, 0.7}, {0, 0, 0}, Lineage::kEval);
    const ScoreSet en = make_scores({0.3, 0.2, 0.1}, {0, 0, 0}, Lineage::kEval);
    const DecisionRule perfect{ThresholdMode::kGlobal, Direction::kHigherMeansMember, 0.5, {}, {}};
    const DecisionRule always{ThresholdMode::kGlobal, Direction::kHigherMeansMember, -1e9, {}, {}};
    ok = ok && attack_accuracy(perfect, em, en) == 1.0 && attack_accuracy(always, em, en) == 0.5;

    line(13, "metric formulas, gradients, accuracy formula match references", ok,
         "entropy/mentr to 1e-12, gradient guard ratio=" + fmt(grad_worst) +
             " (<=1), trivial accuracies exact");
  }

  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%d/13 criteria passed, total %.1f s (report in %s)\n", 13 - g_failures, total,
              cfg.out_dir.c_str());
  return g_failures == 0 ? 0 : 1;
}
