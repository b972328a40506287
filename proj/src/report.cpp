#include "selena/report.hpp"

#include "selena/distill.hpp"
#include "selena/game.hpp"
#include "selena/io.hpp"
#include "selena/splitai.hpp"

#include "config_json.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

namespace selena {
namespace {

using nlohmann::json;

const char* const kConfigKeys[] = {
    "seed",          "out_dir",          "dataset_csv",
    "n_classes",     "n_features",       "n_members",
    "n_nonmembers",  "flip_noise",       "K",
    "L",             "lambdas",          "knowledge_fractions",
    "submodel_train", "undefended_train", "distill_train",
    "attack_nn_train", "run_direct",     "run_label_only",
    "run_indirect",  "run_replay",       "run_adaptive",
    "attack_n_noise", "attack_flips_min", "attack_flips_max",
    "attack_flips_step", "attack_replay_repeats", "early_stopping_sweep",
    "run_game",      "game_n",           "game_K",
    "game_L",        "game_trials",      "game_alpha",
};

json config_to_json_obj(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["dataset_csv"] = cfg.dataset_csv;
  j["n_classes"] = cfg.n_classes;
  j["n_features"] = cfg.n_features;
  j["n_members"] = cfg.n_members;
  j["n_nonmembers"] = cfg.n_nonmembers;
  j["flip_noise"] = cfg.flip_noise;
  j["K"] = cfg.K;
  j["L"] = cfg.L;
  j["lambdas"] = cfg.lambdas;
  j["knowledge_fractions"] = cfg.knowledge_fractions;
  j["submodel_train"] = detail::train_config_to_json(cfg.submodel_train);
  j["undefended_train"] = detail::train_config_to_json(cfg.undefended_train);
  j["distill_train"] = detail::train_config_to_json(cfg.distill_train);
  j["attack_nn_train"] = detail::train_config_to_json(cfg.attack_nn_train);
  j["run_direct"] = cfg.run_direct;
  j["run_label_only"] = cfg.run_label_only;
  j["run_indirect"] = cfg.run_indirect;
  j["run_replay"] = cfg.run_replay;
  j["run_adaptive"] = cfg.run_adaptive;
  j["attack_n_noise"] = cfg.attack_n_noise;
  j["attack_flips_min"] = cfg.attack_flips_min;
  j["attack_flips_max"] = cfg.attack_flips_max;
  j["attack_flips_step"] = cfg.attack_flips_step;
  j["attack_replay_repeats"] = cfg.attack_replay_repeats;
  j["early_stopping_sweep"] = cfg.early_stopping_sweep;
  j["run_game"] = cfg.run_game;
  j["game_n"] = cfg.game_n;
  j["game_K"] = cfg.game_K;
  j["game_L"] = cfg.game_L;
  j["game_trials"] = cfg.game_trials;
  j["game_alpha"] = cfg.game_alpha;
  return j;
}

template <class T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ExperimentConfig config_from_json_obj(const json& j) {
  if (!j.is_object()) throw Error("config: expected a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(std::begin(kConfigKeys), std::end(kConfigKeys),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw Error("config: unknown key \"" + item.key() + "\"");
  }
  ExperimentConfig cfg;
  read_key(j, "seed", cfg.seed);
  read_key(j, "out_dir", cfg.out_dir);
  read_key(j, "dataset_csv", cfg.dataset_csv);
  read_key(j, "n_classes", cfg.n_classes);
  read_key(j, "n_features", cfg.n_features);
  read_key(j, "n_members", cfg.n_members);
  read_key(j, "n_nonmembers", cfg.n_nonmembers);
  read_key(j, "flip_noise", cfg.flip_noise);
  read_key(j, "K", cfg.K);
  read_key(j, "L", cfg.L);
  read_key(j, "lambdas", cfg.lambdas);
  read_key(j, "knowledge_fractions", cfg.knowledge_fractions);
  if (j.contains("submodel_train"))
    cfg.submodel_train = detail::train_config_from_json(j.at("submodel_train"));
  if (j.contains("undefended_train"))
    cfg.undefended_train = detail::train_config_from_json(j.at("undefended_train"));
  if (j.contains("distill_train"))
    cfg.distill_train = detail::train_config_from_json(j.at("distill_train"));
  if (j.contains("attack_nn_train"))
    cfg.attack_nn_train = detail::train_config_from_json(j.at("attack_nn_train"));
  read_key(j, "run_direct", cfg.run_direct);
  read_key(j, "run_label_only", cfg.run_label_only);
  read_key(j, "run_indirect", cfg.run_indirect);
  read_key(j, "run_replay", cfg.run_replay);
  read_key(j, "run_adaptive", cfg.run_adaptive);
  read_key(j, "attack_n_noise", cfg.attack_n_noise);
  read_key(j, "attack_flips_min", cfg.attack_flips_min);
  read_key(j, "attack_flips_max", cfg.attack_flips_max);
  read_key(j, "attack_flips_step", cfg.attack_flips_step);
  read_key(j, "attack_replay_repeats", cfg.attack_replay_repeats);
  read_key(j, "early_stopping_sweep", cfg.early_stopping_sweep);
  read_key(j, "run_game", cfg.run_game);
  read_key(j, "game_n", cfg.game_n);
  read_key(j, "game_K", cfg.game_K);
  read_key(j, "game_L", cfg.game_L);
  read_key(j, "game_trials", cfg.game_trials);
  read_key(j, "game_alpha", cfg.game_alpha);
  return cfg;
}

std::vector<int> flips_list(const ExperimentConfig& cfg) {
  std::vector<int> out;
  for (int f = cfg.attack_flips_min; f <= cfg.attack_flips_max; f += cfg.attack_flips_step)
    out.push_back(f);
  return out;
}

std::optional<double> best_prefixed(const std::vector<AttackEntry>& entries,
                                    const std::string& prefix) {
  std::optional<double> best;
  for (const AttackEntry& e : entries) {
    if (!e.name.starts_with(prefix)) continue;
    if (!best || e.accuracy > *best) best = e.accuracy;
  }
  return best;
}

std::optional<double> best_overall(const std::vector<AttackEntry>& entries) {
  if (entries.empty()) return std::nullopt;
  return best_attack(entries).accuracy;
}

std::string row_label(const DefenseRow& row) {
  if (row.defense != defense_name(DefenseKind::kSelena)) return row.defense;
  return row.defense + "(lambda=" + format_double(row.lambda) + ")";
}

constexpr const char* kAbsentCell = "—";

std::string cell(const std::optional<double>& v) {
  return v ? format_double(*v) : kAbsentCell;
}

// Column widths count code points, not bytes, so the absent-cell dash does
// not skew the padding.
std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return w;
}

// Query functions an attack run holds on a deployed view of a defense. The
// factory hands out a fresh pair per attack so each attack sees its own
// surrogate-draw stream and toggling one attack never shifts another.
struct TargetFns {
  BatchQueryFn batch;
  SingleQueryFn single;
};

using TargetFactory = std::function<TargetFns(std::uint64_t seed)>;

TargetFactory mlp_target(const Mlp& model) {
  return [&model](std::uint64_t) {
    return TargetFns{
        [&model](const Eigen::Ref<const Matrix>& X) { return model.predict_batch(X); },
        [&model](const Eigen::Ref<const Vector>& x) { return model.predict(x); }};
  };
}

TargetFactory splitai_target(const SplitAiModel& model) {
  return [&model](std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    return TargetFns{
        [&model, rng](const Eigen::Ref<const Matrix>& X) {
          return splitai_infer_batch(model, X, *rng);
        },
        [&model, rng](const Eigen::Ref<const Vector>& x) {
          return splitai_infer(model, x, *rng);
        }};
  };
}

TargetFactory aoao_target(const SplitAiModel& model) {
  return [&model](std::uint64_t) {
    return TargetFns{
        [&model](const Eigen::Ref<const Matrix>& X) {
          return splitai_infer_all_average_batch(model, X);
        },
        [&model](const Eigen::Ref<const Vector>& x) {
          return splitai_infer_all_average(model, x);
        }};
  };
}

// One defense's attack suite. Every attack gets its own derived seed for
// both the query stream and its internal randomness, so toggles and row
// order never shift another attack's numbers.
std::vector<AttackEntry> suite_for(const ExperimentConfig& cfg, const EvalSplit& split,
                                   const TargetFactory& make, bool allow_label_only,
                                   double adaptive_lambda, const SplitAiModel* shadow,
                                   std::uint64_t base) {
  std::vector<AttackEntry> out;
  if (cfg.run_direct) {
    const TargetFns fns = make(derive_seed(base, 0));
    const AttackContext ctx = build_attack_context(fns.batch, split);
    for (AttackEntry& e : direct_attacks(ctx, cfg.attack_nn_train)) out.push_back(std::move(e));
  }
  if (cfg.run_label_only && allow_label_only) {
    const TargetFns fns = make(derive_seed(base, 1));
    out.push_back(attack_label_only_noise(fns.batch, split, flips_list(cfg),
                                          cfg.attack_n_noise, derive_seed(base, 2)));
  }
  if (cfg.run_indirect) {
    const TargetFns fns = make(derive_seed(base, 3));
    out.push_back(attack_indirect_noisy_single(fns.batch, split, derive_seed(base, 4)));
  }
  if (cfg.run_replay) {
    const TargetFns fns = make(derive_seed(base, 5));
    out.push_back(attack_replay(fns.single, split, cfg.attack_replay_repeats));
  }
  if (cfg.run_adaptive && shadow != nullptr) {
    const TargetFns fns = make(derive_seed(base, 6));
    for (AttackEntry& e : adaptive_attacks(*shadow, fns.batch, split, cfg.attack_nn_train,
                                           adaptive_lambda, derive_seed(base, 7)))
      out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) throw Error("config: out_dir must not be empty");
  if (cfg.n_classes < 2) throw Error("config: n_classes must be at least 2");
  if (cfg.n_features < 1) throw Error("config: n_features must be positive");
  if (cfg.n_members < 1 || cfg.n_nonmembers < 1)
    throw Error("config: member and non-member counts must be positive");
  if (cfg.flip_noise < 0.0 || cfg.flip_noise > 1.0)
    throw Error("config: flip_noise must lie in [0, 1]");
  if (cfg.L < 1 || cfg.K <= cfg.L) throw Error("config: need K > L >= 1");
  if (cfg.lambdas.empty()) throw Error("config: lambdas must not be empty");
  for (double l : cfg.lambdas)
    if (l < 0.0 || l > 1.0) throw Error("config: every lambda must lie in [0, 1]");
  if (cfg.knowledge_fractions.empty())
    throw Error("config: knowledge_fractions must not be empty");
  for (double f : cfg.knowledge_fractions)
    if (f <= 0.0 || f >= 1.0)
      throw Error("config: every knowledge fraction must lie in (0, 1)");
  for (const TrainConfig* t : {&cfg.submodel_train, &cfg.undefended_train, &cfg.distill_train,
                               &cfg.attack_nn_train}) {
    if (t->epochs < 1 || t->batch_size < 1)
      throw Error("config: train configs need positive epochs and batch size");
  }
  if (cfg.attack_n_noise < 1) throw Error("config: attack_n_noise must be positive");
  if (cfg.attack_flips_min < 0 || cfg.attack_flips_max < cfg.attack_flips_min)
    throw Error("config: need 0 <= attack_flips_min <= attack_flips_max");
  if (cfg.attack_flips_step < 1) throw Error("config: attack_flips_step must be positive");
  if (cfg.attack_replay_repeats < 1)
    throw Error("config: attack_replay_repeats must be positive");
  if (cfg.run_game) {
    if (cfg.game_n < 1) throw Error("config: game_n must be positive");
    if (cfg.game_L < 1 || cfg.game_K <= cfg.game_L)
      throw Error("config: need game_K > game_L >= 1");
    if (cfg.game_trials < 100) throw Error("config: game_trials must be at least 100");
    if (cfg.game_alpha <= 0.0 || cfg.game_alpha > 1.0)
      throw Error("config: game_alpha must lie in (0, 1]");
  }
}

std::string config_json(const ExperimentConfig& cfg) {
  return config_to_json_obj(cfg).dump(2) + "\n";
}

ExperimentConfig config_from_json_string(const std::string& text) {
  try {
    return config_from_json_obj(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return config_from_json_string(read_file(path));
}

void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  atomic_write_file(path, config_json(cfg));
}

std::string defense_name(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kUndefended: return "undefended";
    case DefenseKind::kSplitai: return "splitai";
    case DefenseKind::kAoao: return "aoao";
    case DefenseKind::kSelena: return "selena";
  }
  throw Error("defense_name: unknown kind");
}

DefenseKind parse_defense(const std::string& name) {
  for (DefenseKind kind : {DefenseKind::kUndefended, DefenseKind::kSplitai, DefenseKind::kAoao,
                           DefenseKind::kSelena}) {
    if (name == defense_name(kind)) return kind;
  }
  throw Error("parse_defense: unknown defense \"" + name + "\"");
}

double query_accuracy(const BatchQueryFn& model, const Dataset& data) {
  if (!model) throw Error("query_accuracy: empty query function");
  if (data.n() == 0) throw Error("query_accuracy: empty dataset");
  const Matrix pred = model(data.features);
  if (pred.rows() != data.n()) throw Error("query_accuracy: prediction row count mismatch");
  Index correct = 0;
  for (Index i = 0; i < data.n(); ++i) {
    correct += argmax_lowest(pred.row(i).transpose()) ==
               static_cast<Index>(data.labels[static_cast<std::size_t>(i)]);
  }
  return static_cast<double>(correct) / static_cast<double>(data.n());
}

double compute_gap(const BatchQueryFn& model, const Dataset& train, const Dataset& test) {
  return query_accuracy(model, train) - query_accuracy(model, test);
}

std::vector<int> snapshot_schedule(int epochs) {
  if (epochs < 1) throw Error("snapshot_schedule: epochs must be positive");
  std::vector<int> out;
  if (epochs <= 100) {
    for (int e = 1; e <= epochs; ++e) out.push_back(e);
    return out;
  }
  for (int e = 5; e <= epochs; e += 5) out.push_back(e);
  if (epochs % 5 != 0) out.push_back(epochs);
  return out;
}

EvalSplit build_pipeline_split(const ExperimentConfig& cfg) {
  validate_config(cfg);
  Dataset all;
  if (cfg.dataset_csv.empty()) {
    const Index per_class =
        (cfg.n_members + cfg.n_nonmembers + cfg.n_classes - 1) / cfg.n_classes;
    all = generate_synthetic(cfg.n_classes, cfg.n_features, static_cast<int>(per_class),
                             cfg.flip_noise, derive_seed(cfg.seed, kSeedData));
  } else {
    all = load_csv(cfg.dataset_csv, cfg.n_classes);
  }
  auto [members, nonmembers] = member_nonmember_split(all, cfg.n_members, cfg.n_nonmembers,
                                                      derive_seed(cfg.seed, kSeedMemberSplit));
  return make_eval_split(std::move(members), std::move(nonmembers),
                         cfg.knowledge_fractions.front(),
                         derive_seed(cfg.seed, kSeedEvalSplit));
}

Mlp train_undefended_model(const ExperimentConfig& cfg, const EvalSplit& split,
                           const EpochCallback& on_epoch) {
  return train_hard(split.train.features, split.train.labels, split.train.n_classes,
                    cfg.undefended_train, on_epoch);
}

SplitAiModel train_splitai_model(const ExperimentConfig& cfg, const EvalSplit& split) {
  return train_splitai(split.train, cfg.K, cfg.L, cfg.submodel_train,
                       derive_seed(cfg.seed, kSeedSplitai));
}

ProtectedModel train_selena_model(const ExperimentConfig& cfg, const SplitAiModel& splitai,
                                  const EvalSplit& split, double lambda) {
  Rng rng(derive_seed(cfg.seed, kSeedDistill));
  return self_distill(splitai, split.train, lambda, cfg.distill_train, rng);
}

std::vector<AttackEntry> attack_defense(const ExperimentConfig& cfg, DefenseKind kind) {
  const EvalSplit split = build_pipeline_split(cfg);
  SplitAiModel shadow;
  const SplitAiModel* shadow_ptr = nullptr;
  if (cfg.run_adaptive) {
    shadow = train_shadow_splitai(split, cfg.K, cfg.L, cfg.submodel_train,
                                  derive_seed(derive_seed(cfg.seed, kSeedShadow), 0));
    shadow_ptr = &shadow;
  }
  const std::uint64_t root = derive_seed(cfg.seed, kSeedAttack);
  switch (kind) {
    case DefenseKind::kUndefended: {
      const Mlp model = train_undefended_model(cfg, split);
      return suite_for(cfg, split, mlp_target(model), true, 1.0, shadow_ptr,
                       derive_seed(root, 0));
    }
    case DefenseKind::kSplitai: {
      const SplitAiModel model = train_splitai_model(cfg, split);
      return suite_for(cfg, split, splitai_target(model), false, 0.0, shadow_ptr,
                       derive_seed(root, 1));
    }
    case DefenseKind::kAoao: {
      const SplitAiModel model = train_splitai_model(cfg, split);
      return suite_for(cfg, split, aoao_target(model), false, 0.0, shadow_ptr,
                       derive_seed(root, 2));
    }
    case DefenseKind::kSelena: {
      const SplitAiModel base = train_splitai_model(cfg, split);
      const ProtectedModel model = train_selena_model(cfg, base, split, cfg.lambdas.front());
      return suite_for(cfg, split, mlp_target(model.model), true, cfg.lambdas.front(),
                       shadow_ptr, derive_seed(root, 3));
    }
  }
  throw Error("attack_defense: unknown defense");
}

Dataset build_game_pool(const ExperimentConfig& cfg) {
  const Index two_n = 2 * cfg.game_n;
  const Index per_class = (two_n + cfg.n_classes - 1) / cfg.n_classes;
  const std::uint64_t seed = derive_seed(cfg.seed, kSeedGamePool);
  Dataset all = generate_synthetic(cfg.n_classes, cfg.n_features, static_cast<int>(per_class),
                                   cfg.flip_noise, seed);
  if (all.n() == two_n) return all;
  Rng rng(derive_seed(seed, 1));
  std::vector<std::size_t> draw =
      rng.sample_without_replacement(static_cast<std::size_t>(all.n()),
                                     static_cast<std::size_t>(two_n));
  std::vector<Index> rows(draw.begin(), draw.end());
  std::sort(rows.begin(), rows.end());
  return subset(all, rows);
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  RunReport report;
  report.config = cfg;

  using Clock = std::chrono::steady_clock;
  const auto run_stage = [&report](const std::string& name, const std::function<void()>& body) {
    if (!report.failed_stage.empty()) return;
    const auto t0 = Clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      report.failed_stage = name;
      report.failure_message = e.what();
    }
    report.timings.push_back(
        {name, std::chrono::duration<double>(Clock::now() - t0).count()});
  };

  EvalSplit split;
  Mlp undefended;
  SplitAiModel splitai;
  SplitAiModel shadow;
  std::vector<ProtectedModel> selena;
  std::size_t undef_row = 0, splitai_row = 0, aoao_row = 0;
  std::vector<std::size_t> selena_rows;

  const auto push_row = [&report](const std::string& defense, double lambda, double train_acc,
                                  double test_acc) {
    DefenseRow row;
    row.defense = defense;
    row.lambda = lambda;
    row.train_acc = train_acc;
    row.test_acc = test_acc;
    row.gap = train_acc - test_acc;
    report.rows.push_back(row);
    return report.rows.size() - 1;
  };

  const std::uint64_t attack_root = derive_seed(cfg.seed, kSeedAttack);
  const auto attack_row = [&](std::size_t row_idx, const TargetFactory& make,
                              bool allow_label_only, double adaptive_lambda,
                              std::uint64_t base) {
    report.rows[row_idx].attacks =
        suite_for(cfg, split, make, allow_label_only, adaptive_lambda,
                  cfg.run_adaptive ? &shadow : nullptr, base);
  };

  run_stage("data", [&] { split = build_pipeline_split(cfg); });

  run_stage("undefended", [&] {
    EpochCallback on_epoch;
    std::set<int> snaps;
    if (cfg.early_stopping_sweep) {
      const std::vector<int> schedule = snapshot_schedule(cfg.undefended_train.epochs);
      snaps.insert(schedule.begin(), schedule.end());
      on_epoch = [&](int epoch, const Mlp& net) {
        if (snaps.count(epoch) == 0) return;
        EpochSnapshot s;
        s.epoch = epoch;
        s.train_acc = accuracy(net, split.train.features, split.train.labels);
        s.test_acc = accuracy(net, split.test.features, split.test.labels);
        const BatchQueryFn fn = [&net](const Eigen::Ref<const Matrix>& X) {
          return net.predict_batch(X);
        };
        s.best_direct = best_attack(metric_attacks(build_attack_context(fn, split))).accuracy;
        report.early_stopping.push_back(s);
      };
    }
    undefended = train_undefended_model(cfg, split, on_epoch);
    undef_row = push_row(defense_name(DefenseKind::kUndefended), 0.0,
                         accuracy(undefended, split.train.features, split.train.labels),
                         accuracy(undefended, split.test.features, split.test.labels));
  });

  run_stage("shadow", [&] {
    if (!cfg.run_adaptive) return;
    shadow = train_shadow_splitai(split, cfg.K, cfg.L, cfg.submodel_train,
                                  derive_seed(derive_seed(cfg.seed, kSeedShadow), 0));
  });

  run_stage("attacks.undefended", [&] {
    // The undefended model trains on plain labels, which is the lambda = 1
    // endpoint of the soft-label mix, so that is what the adaptive
    // attacker's estimates assume here.
    attack_row(undef_row, mlp_target(undefended), true, 1.0, derive_seed(attack_root, 0));
  });

  run_stage("splitai", [&] {
    splitai = train_splitai_model(cfg, split);
    Rng acc_rng(derive_seed(cfg.seed, kSeedAccuracy));
    const BatchQueryFn fn = [&](const Eigen::Ref<const Matrix>& X) {
      return splitai_infer_batch(splitai, X, acc_rng);
    };
    const double train_acc = query_accuracy(fn, split.train);
    const double test_acc = query_accuracy(fn, split.test);
    splitai_row = push_row(defense_name(DefenseKind::kSplitai), 0.0, train_acc, test_acc);
  });

  run_stage("attacks.splitai", [&] {
    // Label-only noise needs |flips| * n_noise ensemble evaluations per
    // target; the desk budget keeps it to the single-model defenses.
    attack_row(splitai_row, splitai_target(splitai), false, 0.0, derive_seed(attack_root, 1));
  });

  run_stage("aoao", [&] {
    const BatchQueryFn fn = [&](const Eigen::Ref<const Matrix>& X) {
      return splitai_infer_all_average_batch(splitai, X);
    };
    aoao_row = push_row(defense_name(DefenseKind::kAoao), 0.0, query_accuracy(fn, split.train),
                        query_accuracy(fn, split.test));
  });

  run_stage("attacks.aoao", [&] {
    attack_row(aoao_row, aoao_target(splitai), false, 0.0, derive_seed(attack_root, 2));
  });

  for (std::size_t li = 0; li < cfg.lambdas.size(); ++li) {
    const double lambda = cfg.lambdas[li];
    const std::string tag = "selena lambda=" + format_double(lambda);
    run_stage(tag, [&] {
      selena.push_back(train_selena_model(cfg, splitai, split, lambda));
      const Mlp& model = selena.back().model;
      selena_rows.push_back(push_row(defense_name(DefenseKind::kSelena), lambda,
                                     accuracy(model, split.train.features, split.train.labels),
                                     accuracy(model, split.test.features, split.test.labels)));
    });
    run_stage("attacks." + tag, [&] {
      attack_row(selena_rows[li], mlp_target(selena[li].model), true, lambda,
                 derive_seed(attack_root, 3 + static_cast<std::uint64_t>(li)));
    });
  }

  run_stage("adaptive_sweep", [&] {
    if (!cfg.run_adaptive) return;
    const double lambda0 = cfg.lambdas.front();
    const Mlp& target = selena.front().model;
    for (std::size_t j = 0; j < cfg.knowledge_fractions.size(); ++j) {
      SweepPoint p;
      p.knowledge_fraction = cfg.knowledge_fractions[j];
      if (j == 0) {
        // The primary fraction is exactly the main selena row's setting.
        const auto best = best_prefixed(report.rows[selena_rows.front()].attacks, "adaptive_");
        if (!best) throw Error("adaptive_sweep: primary selena row has no adaptive entries");
        p.best_adaptive = *best;
      } else {
        const EvalSplit sj =
            make_eval_split(split.train, split.test, cfg.knowledge_fractions[j],
                            derive_seed(cfg.seed, kSeedEvalSplit));
        const SplitAiModel sh =
            train_shadow_splitai(sj, cfg.K, cfg.L, cfg.submodel_train,
                                 derive_seed(derive_seed(cfg.seed, kSeedShadow),
                                             static_cast<std::uint64_t>(j)));
        const BatchQueryFn fn = [&target](const Eigen::Ref<const Matrix>& X) {
          return target.predict_batch(X);
        };
        const auto entries =
            adaptive_attacks(sh, fn, sj, cfg.attack_nn_train, lambda0,
                             derive_seed(derive_seed(cfg.seed, kSeedSweep),
                                         static_cast<std::uint64_t>(j)));
        p.best_adaptive = best_attack(entries).accuracy;
      }
      report.adaptive_sweep.push_back(p);
    }
  });

  run_stage("game", [&] {
    if (!cfg.run_game) return;
    const Dataset pool = build_game_pool(cfg);
    GameOptions opt;
    opt.K = cfg.game_K;
    opt.L = cfg.game_L;
    const GameAdversary adv =
        make_best_metric_adversary(pool, GameLearner::kSplitai, opt, 8,
                                   derive_seed(cfg.seed, kSeedGameAdversary));
    const SqmiEstimate est = run_sqmi_game(GameLearner::kSplitai, adv, pool, cfg.game_trials,
                                           derive_seed(cfg.seed, kSeedGameRun), opt);
    const BoundCheck bound = check_distillation_bound(
        pool, cfg.game_K, cfg.game_L, game_tiny_config(), cfg.lambdas.front(), cfg.game_alpha,
        cfg.game_trials, derive_seed(cfg.seed, kSeedGameBound));
    GameSection g;
    g.present = true;
    g.n = est.n;
    g.trials = est.trials;
    g.splitai_advantage = est.advantage;
    g.splitai_ci = est.ci_halfwidth;
    g.alpha = bound.alpha;
    g.beta_hat = bound.beta_hat;
    g.selena_advantage = bound.sqmi_selena;
    g.selena_ci = bound.ci_halfwidth;
    g.bound_satisfied = bound.bound_satisfied;
    report.game = g;
  });

  report.complete = report.failed_stage.empty();
  emit_report(report);
  return report;
}

std::string report_json(const RunReport& report) {
  json j;
  j["schema_version"] = report.schema_version;
  j["complete"] = report.complete;
  j["failed_stage"] = report.failed_stage;
  j["failure_message"] = report.failure_message;
  j["config"] = config_to_json_obj(report.config);

  json rows = json::array();
  for (const DefenseRow& r : report.rows) {
    json jr;
    jr["defense"] = r.defense;
    jr["lambda"] = r.lambda;
    jr["train_acc"] = r.train_acc;
    jr["test_acc"] = r.test_acc;
    jr["gap"] = r.gap;
    json attacks = json::array();
    for (const AttackEntry& e : r.attacks) {
      attacks.push_back({{"name", e.name},
                         {"accuracy", e.accuracy},
                         {"rule", e.rule},
                         {"queries_per_target", e.queries_per_target}});
    }
    jr["attacks"] = attacks;
    rows.push_back(jr);
  }
  j["rows"] = rows;

  json snaps = json::array();
  for (const EpochSnapshot& s : report.early_stopping) {
    snaps.push_back({{"epoch", s.epoch},
                     {"train_acc", s.train_acc},
                     {"test_acc", s.test_acc},
                     {"best_direct", s.best_direct}});
  }
  j["early_stopping"] = snaps;

  json sweep = json::array();
  for (const SweepPoint& p : report.adaptive_sweep) {
    sweep.push_back({{"knowledge_fraction", p.knowledge_fraction},
                     {"best_adaptive", p.best_adaptive}});
  }
  j["adaptive_sweep"] = sweep;

  if (report.game.present) {
    j["game"] = {{"n", report.game.n},
                 {"trials", report.game.trials},
                 {"splitai_advantage", report.game.splitai_advantage},
                 {"splitai_ci", report.game.splitai_ci},
                 {"alpha", report.game.alpha},
                 {"beta_hat", report.game.beta_hat},
                 {"selena_advantage", report.game.selena_advantage},
                 {"selena_ci", report.game.selena_ci},
                 {"bound_satisfied", report.game.bound_satisfied}};
  } else {
    j["game"] = nullptr;
  }
  return j.dump(2) + "\n";
}

RunReport report_from_json_string(const std::string& text) try {
  const json j = json::parse(text);
  RunReport report;
  report.schema_version = j.at("schema_version").get<int>();
  if (report.schema_version != 1) throw Error("report: unsupported schema version");
  report.complete = j.at("complete").get<bool>();
  report.failed_stage = j.at("failed_stage").get<std::string>();
  report.failure_message = j.at("failure_message").get<std::string>();
  report.config = config_from_json_obj(j.at("config"));
  for (const json& jr : j.at("rows")) {
    DefenseRow r;
    r.defense = jr.at("defense").get<std::string>();
    r.lambda = jr.at("lambda").get<double>();
    r.train_acc = jr.at("train_acc").get<double>();
    r.test_acc = jr.at("test_acc").get<double>();
    r.gap = jr.at("gap").get<double>();
    for (const json& je : jr.at("attacks")) {
      AttackEntry e;
      e.name = je.at("name").get<std::string>();
      e.accuracy = je.at("accuracy").get<double>();
      e.rule = je.at("rule").get<std::string>();
      e.queries_per_target = je.at("queries_per_target").get<double>();
      r.attacks.push_back(std::move(e));
    }
    report.rows.push_back(std::move(r));
  }
  for (const json& js : j.at("early_stopping")) {
    EpochSnapshot s;
    s.epoch = js.at("epoch").get<int>();
    s.train_acc = js.at("train_acc").get<double>();
    s.test_acc = js.at("test_acc").get<double>();
    s.best_direct = js.at("best_direct").get<double>();
    report.early_stopping.push_back(s);
  }
  for (const json& jp : j.at("adaptive_sweep")) {
    SweepPoint p;
    p.knowledge_fraction = jp.at("knowledge_fraction").get<double>();
    p.best_adaptive = jp.at("best_adaptive").get<double>();
    report.adaptive_sweep.push_back(p);
  }
  const json& jg = j.at("game");
  if (!jg.is_null()) {
    report.game.present = true;
    report.game.n = jg.at("n").get<Index>();
    report.game.trials = jg.at("trials").get<int>();
    report.game.splitai_advantage = jg.at("splitai_advantage").get<double>();
    report.game.splitai_ci = jg.at("splitai_ci").get<double>();
    report.game.alpha = jg.at("alpha").get<double>();
    report.game.beta_hat = jg.at("beta_hat").get<double>();
    report.game.selena_advantage = jg.at("selena_advantage").get<double>();
    report.game.selena_ci = jg.at("selena_ci").get<double>();
    report.game.bound_satisfied = jg.at("bound_satisfied").get<bool>();
  }
  return report;
} catch (const json::exception& e) {
  throw Error(std::string("report: ") + e.what());
}

std::string report_text_table(const RunReport& report) {
  const std::vector<std::string> header = {"defense",     "train_acc",       "test_acc",
                                           "best_direct", "best_label_only", "best_adaptive",
                                           "best_attack"};
  std::vector<std::vector<std::string>> lines{header};
  for (const DefenseRow& r : report.rows) {
    lines.push_back({row_label(r), format_double(r.train_acc), format_double(r.test_acc),
                     cell(best_prefixed(r.attacks, "direct_")),
                     cell(best_prefixed(r.attacks, "label_only")),
                     cell(best_prefixed(r.attacks, "adaptive_")),
                     cell(best_overall(r.attacks))});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : lines) {
    for (std::size_t c = 0; c < line.size(); ++c)
      width[c] = std::max(width[c], display_width(line[c]));
  }
  std::ostringstream os;
  for (const auto& line : lines) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c > 0) os << "  ";
      os << line[c];
      if (c + 1 < line.size()) os << std::string(width[c] - display_width(line[c]), ' ');
    }
    os << "\n";
  }

  os << "\ngeneralization gap:";
  for (const DefenseRow& r : report.rows) os << " " << row_label(r) << "=" << format_double(r.gap);
  os << "\n";
  if (!report.early_stopping.empty()) {
    os << "early stopping: " << report.early_stopping.size()
       << " snapshots (epoch train_acc test_acc best_direct in report.json)\n";
  }
  if (!report.adaptive_sweep.empty()) {
    os << "adaptive sweep:";
    for (const SweepPoint& p : report.adaptive_sweep) {
      os << " alpha_know=" << format_double(p.knowledge_fraction) << ":"
         << format_double(p.best_adaptive);
    }
    os << "\n";
  }
  if (report.game.present) {
    os << "game: splitai advantage " << format_double(report.game.splitai_advantage) << " +- "
       << format_double(report.game.splitai_ci) << " over " << report.game.trials
       << " trials (n=" << report.game.n << ")\n";
    os << "bound: alpha " << format_double(report.game.alpha) << " beta_hat "
       << format_double(report.game.beta_hat) << " selena advantage "
       << format_double(report.game.selena_advantage) << " +- "
       << format_double(report.game.selena_ci)
       << (report.game.bound_satisfied ? " within bound" : " EXCEEDS bound") << "\n";
  }
  if (!report.complete) {
    os << "INCOMPLETE: failed at stage " << report.failed_stage << ": "
       << report.failure_message << "\n";
  }
  return os.str();
}

std::string report_csv(const RunReport& report) {
  std::ostringstream os;
  os << "defense,lambda,train_acc,test_acc,gap,best_direct,best_label_only,best_indirect,"
        "best_replay,best_adaptive,best_attack\n";
  const auto csv_cell = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  // One row per defense and lambda value, lambda-invariant defenses
  // repeated, so the row count is exactly defenses x lambdas even for
  // partial reports (missing rows keep their value cells empty).
  for (DefenseKind kind : {DefenseKind::kUndefended, DefenseKind::kSplitai, DefenseKind::kAoao,
                           DefenseKind::kSelena}) {
    const std::string name = defense_name(kind);
    for (double lambda : report.config.lambdas) {
      const DefenseRow* row = nullptr;
      for (const DefenseRow& r : report.rows) {
        if (r.defense != name) continue;
        if (kind == DefenseKind::kSelena && r.lambda != lambda) continue;
        row = &r;
        break;
      }
      os << name << "," << format_double(lambda);
      if (row) {
        os << "," << format_double(row->train_acc) << "," << format_double(row->test_acc) << ","
           << format_double(row->gap) << "," << csv_cell(best_prefixed(row->attacks, "direct_"))
           << "," << csv_cell(best_prefixed(row->attacks, "label_only")) << ","
           << csv_cell(best_prefixed(row->attacks, "indirect")) << ","
           << csv_cell(best_prefixed(row->attacks, "replay")) << ","
           << csv_cell(best_prefixed(row->attacks, "adaptive_")) << ","
           << csv_cell(best_overall(row->attacks));
      } else {
        os << ",,,,,,,,,";
      }
      os << "\n";
    }
  }
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const RunReport& report,
                                               const ReportFormats& formats,
                                               const std::filesystem::path& out_dir) {
  const std::filesystem::path dir =
      out_dir.empty() ? std::filesystem::path(report.config.out_dir) : out_dir;
  if (dir.empty()) throw Error("emit_report: no output directory");
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  if (formats.json) {
    atomic_write_file(dir / "report.json", report_json(report));
    written.push_back(dir / "report.json");
  }
  if (formats.text_table) {
    atomic_write_file(dir / "report.txt", report_text_table(report));
    written.push_back(dir / "report.txt");
  }
  if (formats.csv) {
    atomic_write_file(dir / "report.csv", report_csv(report));
    written.push_back(dir / "report.csv");
  }
  if (!report.timings.empty()) {
    std::ostringstream os;
    for (const StageTiming& t : report.timings)
      os << format_double(t.seconds) << "\t" << t.stage << "\n";
    atomic_write_file(dir / "timings.txt", os.str());
    written.push_back(dir / "timings.txt");
  }
  return written;
}

}  // namespace selena
