// Command-line front end. Every subcommand resolves an ExperimentConfig
// the same way: defaults, then --config file, then explicit flags, so a
// flag always wins over the file and the file always wins over defaults.
// Flags mirror config field names; the nested train configs (submodel_train,
// undefended_train, distill_train, attack_nn_train) are file-only.

#include "selena/game.hpp"
#include "selena/io.hpp"
#include "selena/report.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace {

namespace fs = std::filesystem;
using selena::ExperimentConfig;

// Registers one CLI option per mirrored config field and remembers how to
// copy it, so resolve() can apply exactly the flags the user passed on top
// of the file (or default) config.
struct ConfigFlags {
  std::string config_path;
  ExperimentConfig v;
  std::vector<std::pair<std::string, std::function<void(ExperimentConfig&, const ExperimentConfig&)>>>
      copies;

  template <class T>
  CLI::Option* opt(CLI::App& cmd, const std::string& name, T ExperimentConfig::*field,
                   const std::string& help) {
    CLI::Option* o = cmd.add_option(name, v.*field, help);
    copies.emplace_back(name, [field](ExperimentConfig& dst, const ExperimentConfig& src) {
      dst.*field = src.*field;
    });
    return o;
  }

  void register_all(CLI::App& cmd) {
    cmd.add_option("--config", config_path,
                   "JSON config; keys are config field names, nested train configs live here")
        ->check(CLI::ExistingFile);
    opt(cmd, "--seed", &ExperimentConfig::seed, "master seed; every stage derives from it");
    opt(cmd, "--out-dir", &ExperimentConfig::out_dir, "report output directory");
    opt(cmd, "--dataset-csv", &ExperimentConfig::dataset_csv,
        "dataset CSV; empty uses the synthetic generator");
    opt(cmd, "--n-classes", &ExperimentConfig::n_classes, "number of classes");
    opt(cmd, "--n-features", &ExperimentConfig::n_features, "feature dimension");
    opt(cmd, "--n-members", &ExperimentConfig::n_members, "training-set size");
    opt(cmd, "--n-nonmembers", &ExperimentConfig::n_nonmembers, "held-out set size");
    opt(cmd, "--flip-noise", &ExperimentConfig::flip_noise,
        "synthetic label-flip rate controlling task hardness");
    opt(cmd, "--K", &ExperimentConfig::K, "split-ai sub-model count");
    opt(cmd, "--L", &ExperimentConfig::L, "sub-models excluding each sample");
    opt(cmd, "--lambdas", &ExperimentConfig::lambdas,
        "soft-label mixing weights; one selena row per value");
    opt(cmd, "--knowledge-fractions", &ExperimentConfig::knowledge_fractions,
        "attacker knowledge fractions; first is the primary");
    opt(cmd, "--run-direct", &ExperimentConfig::run_direct, "run direct attacks (0/1)");
    opt(cmd, "--run-label-only", &ExperimentConfig::run_label_only,
        "run the label-only noise attack (0/1)");
    opt(cmd, "--run-indirect", &ExperimentConfig::run_indirect,
        "run the indirect neighbour attack (0/1)");
    opt(cmd, "--run-replay", &ExperimentConfig::run_replay, "run the replay attack (0/1)");
    opt(cmd, "--run-adaptive", &ExperimentConfig::run_adaptive,
        "run shadow-ensemble adaptive attacks (0/1)");
    opt(cmd, "--attack-n-noise", &ExperimentConfig::attack_n_noise,
        "noisy variants per target in the label-only attack");
    opt(cmd, "--attack-flips-min", &ExperimentConfig::attack_flips_min,
        "smallest feature-flip count probed");
    opt(cmd, "--attack-flips-max", &ExperimentConfig::attack_flips_max,
        "largest feature-flip count probed");
    opt(cmd, "--attack-flips-step", &ExperimentConfig::attack_flips_step,
        "stride through the flip counts");
    opt(cmd, "--attack-replay-repeats", &ExperimentConfig::attack_replay_repeats,
        "repeat queries per target in the replay attack");
    opt(cmd, "--early-stopping-sweep", &ExperimentConfig::early_stopping_sweep,
        "record per-epoch undefended snapshots (0/1)");
    opt(cmd, "--run-game", &ExperimentConfig::run_game,
        "run the single-query membership game (0/1)");
    opt(cmd, "--game-n", &ExperimentConfig::game_n, "game pool half-size");
    opt(cmd, "--game-K", &ExperimentConfig::game_K, "game learner sub-model count");
    opt(cmd, "--game-L", &ExperimentConfig::game_L, "game exclusions per sample");
    opt(cmd, "--game-trials", &ExperimentConfig::game_trials, "game trials");
    opt(cmd, "--game-alpha", &ExperimentConfig::game_alpha,
        "stability tolerance in the distillation bound");
  }

  ExperimentConfig resolve(const CLI::App& cmd) const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{}
                                               : selena::load_experiment_config(config_path);
    for (const auto& [name, copy] : copies)
      if (cmd.count(name) > 0) copy(cfg, v);
    return cfg;
  }
};

std::string fmt_acc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_kv(const std::string& key, const std::string& value) {
  std::cout << key;
  for (std::size_t i = key.size(); i < 22; ++i) std::cout << ' ';
  std::cout << value << "\n";
}

void print_entries(const std::vector<selena::AttackEntry>& entries) {
  std::size_t name_w = 4, rule_w = 4;
  for (const selena::AttackEntry& e : entries) {
    name_w = std::max(name_w, e.name.size());
    rule_w = std::max(rule_w, e.rule.size());
  }
  const auto pad = [](const std::string& s, std::size_t w) {
    std::cout << s << std::string(w - s.size() + 2, ' ');
  };
  pad("name", name_w);
  pad("accuracy", 8);
  pad("queries", 7);
  std::cout << "rule\n";
  for (const selena::AttackEntry& e : entries) {
    pad(e.name, name_w);
    pad(fmt_acc(e.accuracy), 8);
    pad(selena::format_double(e.queries_per_target), 7);
    std::cout << e.rule << "\n";
  }
  if (!entries.empty()) {
    const selena::AttackEntry best = selena::best_attack(entries);
    std::cout << "best: " << best.name << " " << fmt_acc(best.accuracy) << "\n";
  }
}

void write_entries_json(const std::vector<selena::AttackEntry>& entries, const fs::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const selena::AttackEntry& e : entries) {
    arr.push_back({{"name", e.name},
                   {"accuracy", e.accuracy},
                   {"rule", e.rule},
                   {"queries_per_target", e.queries_per_target}});
  }
  selena::atomic_write_file(path, arr.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"split-ai ensemble + self-distillation membership-inference defense toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  // gen-data
  struct GenArgs {
    std::string out;
    int n_classes = 10, n_features = 100, n_per_class = 40;
    double flip_noise = 0.4;
    std::uint64_t seed = 1;
  };
  auto gen_args = std::make_shared<GenArgs>();
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset CSV");
  gen->add_option("--out", gen_args->out, "output CSV path")->required();
  gen->add_option("--n-classes", gen_args->n_classes, "number of classes");
  gen->add_option("--n-features", gen_args->n_features, "feature dimension");
  gen->add_option("--n-per-class", gen_args->n_per_class, "samples per class");
  gen->add_option("--flip-noise", gen_args->flip_noise, "label-flip rate");
  gen->add_option("--seed", gen_args->seed, "generator seed");
  gen->callback([gen_args] {
    const selena::Dataset data =
        selena::generate_synthetic(gen_args->n_classes, gen_args->n_features,
                                   gen_args->n_per_class, gen_args->flip_noise, gen_args->seed);
    if (const fs::path dir = fs::path(gen_args->out).parent_path(); !dir.empty())
      fs::create_directories(dir);
    selena::save_csv(data, gen_args->out);
    std::cout << "wrote " << data.n() << " rows (" << data.n_classes << " classes, "
              << data.d() << " features) to " << gen_args->out << "\n";
  });

  // train
  struct TrainArgs {
    ConfigFlags cf;
    std::string defense = "undefended";
    std::string out;
    double lambda = 0.0;
  };
  auto train_args = std::make_shared<TrainArgs>();
  CLI::App* train = app.add_subcommand("train", "train one defense and save its artifact");
  train_args->cf.register_all(*train);
  train->add_option("--defense", train_args->defense, "which defense to train")
      ->check(CLI::IsMember({"undefended", "splitai", "selena"}));
  train->add_option("--out", train_args->out, "artifact directory")->required();
  train->add_option("--lambda", train_args->lambda,
                    "selena soft-label mix; default is the config's first lambda");
  train->callback([train_args, train] {
    const ExperimentConfig cfg = train_args->cf.resolve(*train);
    const selena::EvalSplit split = selena::build_pipeline_split(cfg);
    const selena::DefenseKind kind = selena::parse_defense(train_args->defense);
    const fs::path out = train_args->out;
    fs::create_directories(out);
    double train_acc = 0.0, test_acc = 0.0;
    if (kind == selena::DefenseKind::kUndefended) {
      const selena::Mlp model = selena::train_undefended_model(cfg, split);
      selena::save_mlp(model, out / "model.bin");
      train_acc = selena::accuracy(model, split.train.features, split.train.labels);
      test_acc = selena::accuracy(model, split.test.features, split.test.labels);
    } else if (kind == selena::DefenseKind::kSplitai) {
      const selena::SplitAiModel model = selena::train_splitai_model(cfg, split);
      selena::save_splitai(model, out);
      // The same adaptive-view measurement the report's splitai row uses.
      selena::Rng rng(selena::derive_seed(cfg.seed, selena::kSeedAccuracy));
      const selena::BatchQueryFn fn = [&](const Eigen::Ref<const selena::Matrix>& X) {
        return selena::splitai_infer_batch(model, X, rng);
      };
      train_acc = selena::query_accuracy(fn, split.train);
      test_acc = selena::query_accuracy(fn, split.test);
    } else {
      const double lambda =
          train->count("--lambda") > 0 ? train_args->lambda : cfg.lambdas.front();
      const selena::SplitAiModel base = selena::train_splitai_model(cfg, split);
      const selena::ProtectedModel model = selena::train_selena_model(cfg, base, split, lambda);
      selena::save_protected(model, out);
      train_acc = selena::accuracy(model.model, split.train.features, split.train.labels);
      test_acc = selena::accuracy(model.model, split.test.features, split.test.labels);
      print_kv("defense", train_args->defense);
      print_kv("lambda", selena::format_double(lambda));
    }
    if (kind != selena::DefenseKind::kSelena) print_kv("defense", train_args->defense);
    print_kv("train_acc", fmt_acc(train_acc));
    print_kv("test_acc", fmt_acc(test_acc));
    print_kv("gap", fmt_acc(train_acc - test_acc));
    print_kv("saved", out.string());
  });

  // attack
  struct AttackArgs {
    ConfigFlags cf;
    std::string defense = "undefended";
    std::string out;
  };
  auto attack_args = std::make_shared<AttackArgs>();
  CLI::App* attack = app.add_subcommand(
      "attack", "retrain one defense from the config and run the enabled attack suites");
  attack_args->cf.register_all(*attack);
  attack->add_option("--defense", attack_args->defense, "which defense to attack")
      ->check(CLI::IsMember({"undefended", "splitai", "aoao", "selena"}));
  attack->add_option("--out", attack_args->out, "optional JSON file for the attack entries");
  attack->callback([attack_args, attack] {
    const ExperimentConfig cfg = attack_args->cf.resolve(*attack);
    const std::vector<selena::AttackEntry> entries =
        selena::attack_defense(cfg, selena::parse_defense(attack_args->defense));
    print_entries(entries);
    if (!attack_args->out.empty()) {
      if (const fs::path dir = fs::path(attack_args->out).parent_path(); !dir.empty())
        fs::create_directories(dir);
      write_entries_json(entries, attack_args->out);
      std::cout << "entries written to " << attack_args->out << "\n";
    }
  });

  // game
  struct GameArgs {
    ConfigFlags cf;
    std::string learner = "splitai";
    std::string adversary = "best-metric";
    int adversary_models = 8;
    std::string transcript;
    bool bound = false;
    double lambda = 0.0;
  };
  auto game_args = std::make_shared<GameArgs>();
  CLI::App* game = app.add_subcommand(
      "game", "estimate single-query membership advantage on a fresh synthetic pool");
  game_args->cf.register_all(*game);
  game->add_option("--learner", game_args->learner, "challenged learner")
      ->check(CLI::IsMember({"undefended", "splitai", "selena"}));
  game->add_option("--adversary", game_args->adversary, "guessing strategy")
      ->check(CLI::IsMember({"best-metric", "random"}));
  game->add_option("--adversary-models", game_args->adversary_models,
                   "simulations behind the best-metric adversary");
  game->add_option("--transcript", game_args->transcript, "optional per-trial transcript file");
  game->add_flag("--bound", game_args->bound,
                 "also check the distillation advantage bound at game-alpha");
  game->add_option("--lambda", game_args->lambda,
                   "selena learner soft-label mix; default is the config's first lambda");
  game->callback([game_args, game] {
    const ExperimentConfig cfg = game_args->cf.resolve(*game);
    selena::validate_config(cfg);
    const selena::Dataset pool = selena::build_game_pool(cfg);
    selena::GameOptions opt;
    opt.K = cfg.game_K;
    opt.L = cfg.game_L;
    opt.lambda = game->count("--lambda") > 0 ? game_args->lambda : cfg.lambdas.front();
    const selena::GameLearner learner = selena::parse_game_learner(game_args->learner);
    const selena::GameAdversary adv =
        game_args->adversary == "random"
            ? selena::make_random_adversary(
                  selena::derive_seed(cfg.seed, selena::kSeedGameAdversary))
            : selena::make_best_metric_adversary(
                  pool, learner, opt, game_args->adversary_models,
                  selena::derive_seed(cfg.seed, selena::kSeedGameAdversary));
    const selena::SqmiEstimate est =
        selena::run_sqmi_game(learner, adv, pool, cfg.game_trials,
                              selena::derive_seed(cfg.seed, selena::kSeedGameRun), opt);
    print_kv("learner", game_args->learner);
    print_kv("adversary", game_args->adversary);
    print_kv("n", std::to_string(est.n));
    print_kv("trials", std::to_string(est.trials));
    print_kv("advantage", fmt_acc(est.advantage));
    print_kv("ci_halfwidth", fmt_acc(est.ci_halfwidth));
    if (est.partial) print_kv("partial", "true (timeout)");
    if (!game_args->transcript.empty()) {
      selena::save_transcript(est, game_args->transcript);
      print_kv("transcript", game_args->transcript);
    }
    if (game_args->bound) {
      const selena::BoundCheck b = selena::check_distillation_bound(
          pool, cfg.game_K, cfg.game_L, selena::game_tiny_config(), opt.lambda, cfg.game_alpha,
          cfg.game_trials, selena::derive_seed(cfg.seed, selena::kSeedGameBound));
      print_kv("alpha", selena::format_double(b.alpha));
      print_kv("beta_hat", fmt_acc(b.beta_hat));
      print_kv("selena_advantage", fmt_acc(b.sqmi_selena));
      print_kv("bound", b.bound_satisfied ? "within 0.5 + alpha + beta_hat + CI"
                                          : "EXCEEDS 0.5 + alpha + beta_hat + CI");
    }
  });

  // report
  struct ReportArgs {
    std::string in;
    std::string out_dir;
    bool json = true, txt = true, csv = true;
  };
  auto report_args = std::make_shared<ReportArgs>();
  CLI::App* report = app.add_subcommand("report", "re-emit report files from a report.json");
  report->add_option("--in", report_args->in, "existing report.json")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--out-dir", report_args->out_dir, "directory for the emitted files")
      ->required();
  report->add_option("--json", report_args->json, "emit report.json (0/1)");
  report->add_option("--txt", report_args->txt, "emit report.txt (0/1)");
  report->add_option("--csv", report_args->csv, "emit report.csv (0/1)");
  report->callback([report_args] {
    const selena::RunReport rep =
        selena::report_from_json_string(selena::read_file(report_args->in));
    selena::ReportFormats formats;
    formats.json = report_args->json;
    formats.text_table = report_args->txt;
    formats.csv = report_args->csv;
    const auto paths = selena::emit_report(rep, formats, report_args->out_dir);
    std::cout << selena::report_text_table(rep);
    for (const fs::path& p : paths) std::cout << "wrote " << p.string() << "\n";
  });

  // run
  auto run_flags = std::make_shared<ConfigFlags>();
  CLI::App* run = app.add_subcommand("run", "run the full experiment and emit the report");
  run_flags->register_all(*run);
  run->get_option("--seed")->required();
  run->callback([run_flags, run, &exit_code] {
    const ExperimentConfig cfg = run_flags->resolve(*run);
    const selena::RunReport rep = selena::run_experiment(cfg);
    std::cout << selena::report_text_table(rep);
    std::cout << "report written to " << cfg.out_dir << "\n";
    if (!rep.complete) exit_code = 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
