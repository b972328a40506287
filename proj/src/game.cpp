#include "selena/game.hpp"

#include "selena/io.hpp"
#include "selena/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace selena {
namespace {

constexpr ScoreKind kMetricKinds[] = {ScoreKind::kConfidence, ScoreKind::kNegEntropy,
                                      ScoreKind::kNegMentr, ScoreKind::kCorrectness};

struct TrainedLearner {
  Mlp mlp;  // undefended or distilled
  SplitAiModel splitai;
  const SplitAiModel* splitai_ptr = nullptr;
  const Mlp* mlp_ptr = nullptr;
  std::uint64_t fingerprint = 0;
};

// One learner instance for one selection of the pool, all seeds derived
// from the trial seed so trials never share parameters.
TrainedLearner train_learner(GameLearner learner, const Dataset& S, const GameOptions& options,
                             std::uint64_t trial_seed) {
  TrainedLearner out;
  TrainConfig cfg = options.train;
  cfg.seed = derive_seed(trial_seed, 2);
  switch (learner) {
    case GameLearner::kUndefended:
      out.mlp = train_hard(S.features, S.labels, S.n_classes, cfg);
      out.mlp_ptr = &out.mlp;
      out.fingerprint = mlp_fingerprint(out.mlp);
      return out;
    case GameLearner::kSplitai:
      out.splitai = train_splitai(S, options.K, options.L, cfg, derive_seed(trial_seed, 3));
      out.splitai_ptr = &out.splitai;
      out.fingerprint = splitai_fingerprint(out.splitai);
      return out;
    case GameLearner::kSelena: {
      out.splitai = train_splitai(S, options.K, options.L, cfg, derive_seed(trial_seed, 3));
      TrainConfig distill_cfg = options.train;
      distill_cfg.seed = derive_seed(trial_seed, 4);
      Rng distill_rng(derive_seed(trial_seed, 5));
      out.mlp = self_distill(out.splitai, S, options.lambda, distill_cfg, distill_rng).model;
      out.splitai_ptr = &out.splitai;
      out.mlp_ptr = &out.mlp;
      out.fingerprint = mlp_fingerprint(out.mlp);
      return out;
    }
  }
  throw Error("train_learner: unknown learner");
}

Vector query_once(GameLearner learner, const TrainedLearner& trained,
                  const Eigen::Ref<const Vector>& x, Rng& rng) {
  if (learner == GameLearner::kSplitai) return splitai_infer(*trained.splitai_ptr, x, rng);
  return trained.mlp_ptr->predict(x);
}

void check_game_args(const Dataset& X, int trials, const GameOptions& options) {
  if (X.n() == 0 || X.n() % 2 != 0)
    throw Error("run_sqmi_game: pool size must be positive and even");
  if (trials < 100) throw Error("run_sqmi_game: need at least 100 trials");
  if (!(options.lambda >= 0.0 && options.lambda <= 1.0))
    throw Error("run_sqmi_game: lambda outside [0, 1]");
}

}  // namespace

std::string game_learner_name(GameLearner learner) {
  switch (learner) {
    case GameLearner::kUndefended: return "undefended";
    case GameLearner::kSplitai: return "splitai";
    case GameLearner::kSelena: return "selena";
  }
  throw Error("game_learner_name: unknown learner");
}

GameLearner parse_game_learner(const std::string& name) {
  if (name == "undefended") return GameLearner::kUndefended;
  if (name == "splitai") return GameLearner::kSplitai;
  if (name == "selena") return GameLearner::kSelena;
  throw Error("parse_game_learner: unknown learner '" + name + "'");
}

TrainConfig game_tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 1;  // random sub-model subsets can be very small
  cfg.learning_rate = 5e-3;
  cfg.hidden_sizes = {8};
  cfg.activation = Activation::kTanh;
  return cfg;
}

std::vector<char> sample_balanced_bits(Index two_n, Rng& rng) {
  if (two_n <= 0 || two_n % 2 != 0)
    throw Error("sample_balanced_bits: need a positive even count");
  std::vector<char> bits(static_cast<std::size_t>(two_n), 0);
  for (std::size_t i : rng.sample_without_replacement(static_cast<std::size_t>(two_n),
                                                      static_cast<std::size_t>(two_n / 2)))
    bits[i] = 1;
  return bits;
}

std::uint64_t bits_hash(const std::vector<char>& bits) {
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < bits.size(); ++i)
    h = mix64(h ^ (2 * i + static_cast<std::size_t>(bits[i] != 0)));
  return h;
}

SqmiEstimate run_sqmi_game(GameLearner learner, const GameAdversary& adversary, const Dataset& X,
                           int trials, std::uint64_t seed, const GameOptions& options) {
  if (!adversary) throw Error("run_sqmi_game: empty adversary");
  check_game_args(X, trials, options);
  const Index two_n = X.n();

  SqmiEstimate est;
  est.learner = learner;
  est.n = two_n / 2;
  est.records.reserve(static_cast<std::size_t>(trials));
  const auto start = std::chrono::steady_clock::now();
  std::size_t correct_count = 0;

  for (int t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(seed, static_cast<std::uint64_t>(t));
    Rng rng(trial_seed);
    const std::vector<char> b = sample_balanced_bits(two_n, rng);
    std::vector<Index> selected;
    selected.reserve(static_cast<std::size_t>(two_n / 2));
    for (Index i = 0; i < two_n; ++i)
      if (b[static_cast<std::size_t>(i)]) selected.push_back(i);

    const Dataset S = subset(X, selected);
    const TrainedLearner trained = train_learner(learner, S, options, trial_seed);

    Index challenged;
    if (options.choose_index) {
      challenged = options.choose_index(X, trial_seed);
      if (challenged < 0 || challenged >= two_n)
        throw Error("run_sqmi_game: chosen index out of range");
    } else {
      challenged = static_cast<Index>(rng.uniform_below(static_cast<std::uint64_t>(two_n)));
    }

    const Vector x = X.features.row(challenged).transpose();
    const Vector response = query_once(learner, trained, x, rng);
    const bool truth = b[static_cast<std::size_t>(challenged)] != 0;
    const bool guess = adversary(GameView{x, response, X.labels[static_cast<std::size_t>(challenged)]});

    TrialRecord rec;
    rec.b_hash = bits_hash(b);
    rec.challenged = challenged;
    rec.truth = truth;
    rec.guess = guess;
    rec.correct = guess == truth;
    rec.model_fingerprint = trained.fingerprint;
    rec.response = response;
    correct_count += rec.correct;
    est.records.push_back(std::move(rec));

    if (options.observer)
      options.observer(TrialContext{challenged, truth, est.records.back().response, X,
                                    trained.splitai_ptr, trained.mlp_ptr, rng});

    if (options.timeout_seconds > 0.0) {
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      if (elapsed.count() > options.timeout_seconds && t + 1 < trials) {
        est.partial = true;
        break;
      }
    }
  }

  est.trials = static_cast<int>(est.records.size());
  est.advantage = static_cast<double>(correct_count) / static_cast<double>(est.trials);
  est.ci_halfwidth = binomial_ci_halfwidth(est.advantage, est.trials);
  return est;
}

GameAdversary make_best_metric_adversary(const Dataset& X, GameLearner learner,
                                         const GameOptions& options, int n_models,
                                         std::uint64_t seed) {
  if (n_models < 1) throw Error("make_best_metric_adversary: need at least one model");
  if (X.n() == 0 || X.n() % 2 != 0)
    throw Error("make_best_metric_adversary: pool size must be positive and even");
  const Index two_n = X.n();
  constexpr std::size_t kKinds = sizeof(kMetricKinds) / sizeof(kMetricKinds[0]);

  ScoreSet member_pool[kKinds], nonmember_pool[kKinds];
  for (std::size_t k = 0; k < kKinds; ++k) {
    member_pool[k].lineage = Lineage::kKnown;
    nonmember_pool[k].lineage = Lineage::kKnown;
  }

  // Self-simulation: the adversary may query its own replicas freely; the
  // single-query restriction binds only in the real game.
  for (int j = 0; j < n_models; ++j) {
    const std::uint64_t sim_seed = derive_seed(seed, static_cast<std::uint64_t>(j));
    Rng rng(sim_seed);
    const std::vector<char> b = sample_balanced_bits(two_n, rng);
    std::vector<Index> selected;
    for (Index i = 0; i < two_n; ++i)
      if (b[static_cast<std::size_t>(i)]) selected.push_back(i);
    const TrainedLearner trained = train_learner(learner, subset(X, selected), options, sim_seed);

    for (Index i = 0; i < two_n; ++i) {
      const Vector response = query_once(learner, trained, X.features.row(i).transpose(), rng);
      const int label = X.labels[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < kKinds; ++k) {
        ScoreSet& dst = b[static_cast<std::size_t>(i)] ? member_pool[k] : nonmember_pool[k];
        dst.scores.push_back(mia_score(kMetricKinds[k], response, label).value);
        dst.labels.push_back(label);
      }
    }
  }

  ScoreKind best_kind = kMetricKinds[0];
  DecisionRule best_rule;
  double best_acc = -1.0;
  for (std::size_t k = 0; k < kKinds; ++k) {
    for (Direction dir : {Direction::kHigherMeansMember, Direction::kLowerMeansMember}) {
      for (ThresholdMode mode : {ThresholdMode::kGlobal, ThresholdMode::kPerClass}) {
        const DecisionRule rule =
            calibrate_rule(member_pool[k], nonmember_pool[k], X.n_classes, mode, dir);
        const double acc = rule_balanced_accuracy(rule, member_pool[k], nonmember_pool[k]);
        if (acc > best_acc) {
          best_acc = acc;
          best_kind = kMetricKinds[k];
          best_rule = rule;
        }
      }
    }
  }

  return [best_kind, best_rule](const GameView& view) {
    return rule_says_member(best_rule, mia_score(best_kind, view.response, view.label).value,
                            view.label);
  };
}

GameAdversary make_random_adversary(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng](const GameView&) { return rng->bernoulli(0.5); };
}

void save_transcript(const SqmiEstimate& estimate, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const TrialRecord& r : estimate.records)
    os << hex64(r.b_hash) << ' ' << r.challenged << ' ' << int(r.guess) << ' ' << int(r.correct)
       << '\n';
  atomic_write_file(path, os.str());
}

double confidence_deviation(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                            int label) {
  if (a.size() != b.size()) throw Error("confidence_deviation: size mismatch");
  if (label < 0 || label >= a.size()) throw Error("confidence_deviation: label out of range");
  return std::abs(a(label) - b(label));
}

BoundCheck check_distillation_bound(const Dataset& X, int K, int L, const TrainConfig& cfg,
                                    double lambda, double alpha, int trials, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw Error("check_distillation_bound: alpha outside (0, 1]");

  GameOptions options;
  options.K = K;
  options.L = L;
  options.train = cfg;
  options.lambda = lambda;

  int deviating = 0;
  options.observer = [&deviating, alpha](const TrialContext& ctx) {
    const Vector fresh =
        splitai_infer(*ctx.splitai, ctx.pool.features.row(ctx.challenged).transpose(), ctx.rng);
    const int label = ctx.pool.labels[static_cast<std::size_t>(ctx.challenged)];
    if (confidence_deviation(ctx.response, fresh, label) > alpha) ++deviating;
  };

  const GameAdversary adversary = make_best_metric_adversary(
      X, GameLearner::kSelena, options, 8, derive_seed(seed, 1001));
  const SqmiEstimate est =
      run_sqmi_game(GameLearner::kSelena, adversary, X, trials, derive_seed(seed, 1002), options);

  BoundCheck out;
  out.alpha = alpha;
  out.beta_hat =
      est.trials > 0 ? static_cast<double>(deviating) / static_cast<double>(est.trials) : 0.0;
  out.sqmi_selena = est.advantage;
  out.ci_halfwidth = est.ci_halfwidth;
  out.trials = est.trials;
  out.bound_satisfied = est.advantage <= 0.5 + alpha + out.beta_hat + est.ci_halfwidth;
  return out;
}

Vector splitai_infer_forced(const SplitAiModel& model, const Eigen::Ref<const Vector>& x,
                            const std::vector<int>& submodel_indices) {
  if (model.submodels.empty()) throw Error("splitai_infer_forced: untrained model");
  if (submodel_indices.empty()) throw Error("splitai_infer_forced: empty index set");
  std::vector<char> seen(model.submodels.size(), 0);
  Vector acc = Vector::Zero(model.submodels[0].n_out());
  for (int i : submodel_indices) {
    if (i < 0 || i >= static_cast<int>(model.submodels.size()))
      throw Error("splitai_infer_forced: index out of range");
    if (seen[static_cast<std::size_t>(i)]++)
      throw Error("splitai_infer_forced: duplicate index");
    acc += model.submodels[static_cast<std::size_t>(i)].predict(x);
  }
  return acc / static_cast<Scalar>(submodel_indices.size());
}

std::vector<PairProbeBucket> correlated_pair_probe(const SplitAiModel& splitai,
                                                   const Dataset& members,
                                                   const Dataset& nonmembers,
                                                   const std::vector<double>& thresholds,
                                                   std::uint64_t seed) {
  if (members.n() != splitai.n_train() ||
      dataset_fingerprint(members) != splitai.dataset_fingerprint)
    throw Error("correlated_pair_probe: members must be the ensemble's training set");
  if (nonmembers.n() == 0) throw Error("correlated_pair_probe: empty non-member set");

  struct Pair {
    double dist;
    Vector member_view, nonmember_view;
    int label;
  };
  std::vector<Pair> pairs;
  Rng rng(seed);
  const Index n_train = members.n();

  for (Index s = 0; s < n_train; ++s) {
    // Nearest differently-labeled non-member, brute force.
    Index best = -1;
    double best_sq = std::numeric_limits<double>::infinity();
    for (Index t = 0; t < nonmembers.n(); ++t) {
      if (nonmembers.labels[static_cast<std::size_t>(t)] ==
          members.labels[static_cast<std::size_t>(s)])
        continue;
      const double sq = (members.features.row(s) - nonmembers.features.row(t)).squaredNorm();
      if (sq < best_sq) {
        best_sq = sq;
        best = t;
      }
    }
    if (best < 0) continue;

    const Vector xp = nonmembers.features.row(best).transpose();
    const std::size_t su = static_cast<std::size_t>(s);
    const Index r = static_cast<Index>(rng.uniform_below(static_cast<std::uint64_t>(n_train)));
    Pair p;
    p.dist = std::sqrt(best_sq);
    p.member_view = splitai_infer_forced(splitai, xp, splitai.idnon.idnon[su]);
    p.nonmember_view =
        splitai_infer_forced(splitai, xp, splitai.idnon.idnon[static_cast<std::size_t>(r)]);
    p.label = nonmembers.labels[static_cast<std::size_t>(best)];
    pairs.push_back(std::move(p));
  }

  std::vector<PairProbeBucket> out;
  for (double thr : thresholds) {
    PairProbeBucket bucket;
    bucket.threshold = thr;
    std::vector<std::size_t> in_bucket;
    for (std::size_t p = 0; p < pairs.size(); ++p)
      if (pairs[p].dist <= thr) in_bucket.push_back(p);
    bucket.pair_fraction =
        static_cast<double>(in_bucket.size()) / static_cast<double>(members.n());
    if (!in_bucket.empty()) {
      // In-sample separability of the two views under the best metric,
      // direction and threshold mode; a probe, not a generalization claim.
      double best_acc = -1.0;
      for (ScoreKind kind : kMetricKinds) {
        ScoreSet mv, nv;
        mv.lineage = nv.lineage = Lineage::kKnown;
        for (std::size_t p : in_bucket) {
          mv.scores.push_back(mia_score(kind, pairs[p].member_view, pairs[p].label).value);
          mv.labels.push_back(pairs[p].label);
          nv.scores.push_back(mia_score(kind, pairs[p].nonmember_view, pairs[p].label).value);
          nv.labels.push_back(pairs[p].label);
        }
        for (Direction dir : {Direction::kHigherMeansMember, Direction::kLowerMeansMember}) {
          for (ThresholdMode mode : {ThresholdMode::kGlobal, ThresholdMode::kPerClass}) {
            const DecisionRule rule = calibrate_rule(mv, nv, members.n_classes, mode, dir);
            best_acc = std::max(best_acc, rule_balanced_accuracy(rule, mv, nv));
          }
        }
      }
      bucket.has_accuracy = true;
      bucket.accuracy = best_acc;
    }
    out.push_back(bucket);
  }
  return out;
}

}  // namespace selena
