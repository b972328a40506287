#pragma once

#include "selena/attacks.hpp"
#include "selena/distill.hpp"
#include "selena/splitai.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace selena {

enum class GameLearner { kUndefended, kSplitai, kSelena };

std::string game_learner_name(GameLearner learner);
GameLearner parse_game_learner(const std::string& name);

// The adversary sees exactly one challenged sample, the model's single
// response to it, and the class label. The single-query restriction is
// structural: there is no model handle to query twice.
struct GameView {
  Vector x;
  Vector response;
  int label = 0;
};

using GameAdversary = std::function<bool(const GameView&)>;

// Remark-style stronger variant: the adversary picks the challenged index.
using IndexChooser = std::function<Index(const Dataset& pool, std::uint64_t trial_seed)>;

struct TrialRecord {
  std::uint64_t b_hash = 0;  // digest of the trial's secret selection bits
  Index challenged = -1;
  bool truth = false;  // b_i: was the challenged point trained on
  bool guess = false;
  bool correct = false;
  std::uint64_t model_fingerprint = 0;
  Vector response;
};

// Probe hook running at the end of a trial, after the guess is recorded.
struct TrialContext {
  Index challenged = -1;
  bool truth = false;
  const Vector& response;
  const Dataset& pool;
  const SplitAiModel* splitai;  // null for the undefended learner
  const Mlp* model;             // distilled or undefended; null for split-ai
  Rng& rng;
};

using TrialObserver = std::function<void(const TrialContext&)>;

// Deliberately tiny training preset so hundreds of per-trial retrainings
// stay within a desk-scale budget.
TrainConfig game_tiny_config();

struct GameOptions {
  int K = 5;
  int L = 2;
  TrainConfig train = game_tiny_config();
  double lambda = 0.0;           // soft-label mixing for the selena learner
  double timeout_seconds = 0.0;  // 0 disables the budget
  IndexChooser choose_index;     // empty: the challenger draws i uniformly
  TrialObserver observer;
};

struct SqmiEstimate {
  double advantage = 0.0;  // mean of the per-trial correct flags
  int trials = 0;          // completed trials
  double ci_halfwidth = 0.0;
  bool partial = false;  // timeout cut the run short
  GameLearner learner = GameLearner::kSplitai;
  Index n = 0;  // half pool size
  std::vector<TrialRecord> records;
};

// Uniform selection bits: exactly n ones out of two_n positions.
std::vector<char> sample_balanced_bits(Index two_n, Rng& rng);

std::uint64_t bits_hash(const std::vector<char>& bits);

// One security-game estimate. Per trial: fresh selection bits, a learner
// retrained from scratch on the selected half under a derived seed, one
// challenged index (uniform, or chosen by the adversary via the options
// hook), a single query, one guess. The advantage is the fraction of
// correct guesses with a binomial normal-approximation CI.
SqmiEstimate run_sqmi_game(GameLearner learner, const GameAdversary& adversary, const Dataset& X,
                           int trials, std::uint64_t seed, const GameOptions& options = {});

// Self-simulation adversary: trains n_models instances of the same learner
// configuration on random half-subsets of X, scores every pool point with
// the single-prediction metric suite, and keeps the metric and threshold
// rule with the best balanced accuracy on those simulations.
GameAdversary make_best_metric_adversary(const Dataset& X, GameLearner learner,
                                         const GameOptions& options, int n_models,
                                         std::uint64_t seed);

GameAdversary make_random_adversary(std::uint64_t seed);

// One trial per line: "b_hash challenged guess correct", hash in hex.
void save_transcript(const SqmiEstimate& estimate, const std::filesystem::path& path);

double confidence_deviation(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                            int label);

struct BoundCheck {
  double alpha = 0.0;
  double beta_hat = 0.0;      // fraction of challenge points deviating by more than alpha
  double sqmi_selena = 0.0;   // measured advantage of the best-metric adversary
  double ci_halfwidth = 0.0;
  int trials = 0;
  bool bound_satisfied = false;  // sqmi <= 0.5 + alpha + beta_hat + CI slack
};

// Stability proxy: per trial, compare the distilled model's
// confidence-at-true-label on the challenged point against a fresh
// split-ai response at the same point. This deviation stands in for the
// per-point TV distance, which single samples cannot estimate; the raw
// pieces are reported so the bound check stays interpretable.
BoundCheck check_distillation_bound(const Dataset& X, int K, int L, const TrainConfig& cfg,
                                    double lambda, double alpha, int trials, std::uint64_t seed);

// Probe-only inference over a caller-chosen sub-model index set. Lives in
// the game module so the deployed inference API never exposes sub-model
// selection; nothing on the CLI path can reach it.
Vector splitai_infer_forced(const SplitAiModel& model, const Eigen::Ref<const Vector>& x,
                            const std::vector<int>& submodel_indices);

struct PairProbeBucket {
  double threshold = 0.0;
  double pair_fraction = 0.0;  // members whose nearest opposite-label point is this close
  bool has_accuracy = false;   // false when the bucket holds no pair
  double accuracy = 0.0;
};

// For every member, brute-force the nearest differently-labeled non-member
// x', then query x' once under the member's excluded set and once under a
// random member's excluded set. Per distance bucket, the reported accuracy
// is how well the best single-prediction metric separates the two views.
std::vector<PairProbeBucket> correlated_pair_probe(const SplitAiModel& splitai,
                                                   const Dataset& members,
                                                   const Dataset& nonmembers,
                                                   const std::vector<double>& thresholds,
                                                   std::uint64_t seed);

}  // namespace selena
