#pragma once

#include "selena/attacks.hpp"
#include "selena/dataset.hpp"
#include "selena/distill.hpp"
#include "selena/mlp.hpp"
#include "selena/splitai.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace selena {

// Everything a run depends on. The JSON config file uses exactly these
// field names as keys; unknown keys are rejected, missing keys keep their
// defaults. Together with the code version, a config fully determines a
// run: every model trained, every attack and the emitted report bytes.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  // A non-empty CSV path replaces the synthetic generator.
  std::string dataset_csv;
  int n_classes = 10;
  int n_features = 100;
  Index n_members = 2000;
  Index n_nonmembers = 2000;
  double flip_noise = 0.4;

  int K = 25;
  int L = 10;
  std::vector<double> lambdas{0.0};
  // First entry is the primary attacker-knowledge fraction used for every
  // defense row; the rest extend the adaptive-attack sweep.
  std::vector<double> knowledge_fractions{0.5};

  // The ensemble overrides the sub-model seed per member, and the default
  // distillation config deliberately equals the undefended one so the
  // lambda = 1 endpoint retrains the undefended model bit for bit.
  TrainConfig submodel_train{.epochs = 40, .batch_size = 64, .seed = 11,
                             .hidden_sizes = {128}, .activation = Activation::kRelu};
  TrainConfig undefended_train{.epochs = 150, .batch_size = 64, .seed = 12,
                               .hidden_sizes = {256}, .activation = Activation::kRelu};
  TrainConfig distill_train{.epochs = 150, .batch_size = 64, .seed = 12,
                            .hidden_sizes = {256}, .activation = Activation::kRelu};
  TrainConfig attack_nn_train{.epochs = 30, .batch_size = 64, .seed = 14,
                              .hidden_sizes = {64, 64}, .activation = Activation::kRelu};

  bool run_direct = true;
  bool run_label_only = true;
  bool run_indirect = true;
  bool run_replay = true;
  bool run_adaptive = true;
  int attack_n_noise = 100;
  int attack_flips_min = 1;
  int attack_flips_max = 30;
  int attack_flips_step = 1;
  int attack_replay_repeats = 3;

  bool early_stopping_sweep = true;

  bool run_game = true;
  Index game_n = 25;
  int game_K = 5;
  int game_L = 2;
  int game_trials = 300;
  double game_alpha = 0.1;
};

void validate_config(const ExperimentConfig& cfg);

// Stage tags under the top-level config seed. Every stage of a run draws
// its randomness from derive_seed(cfg.seed, tag), so one config seed
// rotates the whole pipeline and any single stage can be reproduced in
// isolation (the CLI subcommands rely on this to match report numbers).
enum SeedTag : std::uint64_t {
  kSeedData = 1,
  kSeedMemberSplit = 2,
  kSeedEvalSplit = 3,
  kSeedSplitai = 4,
  kSeedDistill = 5,
  kSeedAccuracy = 6,
  kSeedShadow = 7,
  kSeedAttack = 8,
  kSeedSweep = 9,
  kSeedGamePool = 10,
  kSeedGameAdversary = 11,
  kSeedGameRun = 12,
  kSeedGameBound = 13,
};

std::string config_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json_string(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

enum class DefenseKind { kUndefended, kSplitai, kAoao, kSelena };

std::string defense_name(DefenseKind kind);
DefenseKind parse_defense(const std::string& name);

struct DefenseRow {
  std::string defense;
  double lambda = 0.0;  // soft-label mixing; meaningful for selena rows
  double train_acc = 0.0;
  double test_acc = 0.0;
  double gap = 0.0;  // train_acc - test_acc, the exact same doubles
  std::vector<AttackEntry> attacks;
};

struct EpochSnapshot {
  int epoch = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double best_direct = 0.0;  // metric suite only; the classifier is too
                             // costly per epoch
};

struct SweepPoint {
  double knowledge_fraction = 0.0;
  double best_adaptive = 0.0;
};

struct GameSection {
  bool present = false;
  Index n = 0;
  int trials = 0;
  double splitai_advantage = 0.0;
  double splitai_ci = 0.0;
  double alpha = 0.0;
  double beta_hat = 0.0;
  double selena_advantage = 0.0;
  double selena_ci = 0.0;
  bool bound_satisfied = false;
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RunReport {
  int schema_version = 1;
  ExperimentConfig config;
  std::vector<DefenseRow> rows;
  std::vector<EpochSnapshot> early_stopping;
  std::vector<SweepPoint> adaptive_sweep;
  GameSection game;
  // Wall-clock only; kept out of report.json so reruns of one config stay
  // byte-identical. emit_report writes them to timings.txt instead.
  std::vector<StageTiming> timings;
  std::string failed_stage;  // empty on success
  std::string failure_message;
  bool complete = false;
};

// Fraction of argmax hits over one batched query of the whole set.
double query_accuracy(const BatchQueryFn& model, const Dataset& data);

// accuracy(train) - accuracy(test).
double compute_gap(const BatchQueryFn& model, const Dataset& train, const Dataset& test);

// 1-based epochs at which the early-stopping sweep snapshots the model:
// every epoch up to 100-epoch runs, every 5th beyond that, final always.
std::vector<int> snapshot_schedule(int epochs);

// Deterministic data stage shared by every subcommand: synthetic samples
// (or the configured CSV) split into members/non-members, then the
// attacker-knowledge split at the primary fraction.
EvalSplit build_pipeline_split(const ExperimentConfig& cfg);

// Canonical per-stage artifacts, shared by run_experiment and the CLI so
// both train identical models from one config.
Mlp train_undefended_model(const ExperimentConfig& cfg, const EvalSplit& split,
                           const EpochCallback& on_epoch = {});
SplitAiModel train_splitai_model(const ExperimentConfig& cfg, const EvalSplit& split);
ProtectedModel train_selena_model(const ExperimentConfig& cfg, const SplitAiModel& splitai,
                                  const EvalSplit& split, double lambda);

// The attack suite of one defense row, retrained deterministically from
// the config; entries equal the matching row of run_experiment's report.
// Selena means the first configured lambda.
std::vector<AttackEntry> attack_defense(const ExperimentConfig& cfg, DefenseKind kind);

// Fresh pool of exactly 2 * game_n samples for the single-query game.
Dataset build_game_pool(const ExperimentConfig& cfg);

// Full pipeline: undefended baseline (with per-epoch snapshots when the
// sweep is enabled), Split-AI, the average-over-all-outputs view, SELENA
// per lambda, the enabled attack suites against each, the adaptive
// knowledge sweep and the single-query game. Any stage failure stops the
// pipeline and marks the report; the report (partial or not) is always
// emitted into cfg.out_dir before returning.
RunReport run_experiment(const ExperimentConfig& cfg);

struct ReportFormats {
  bool json = true;
  bool text_table = true;
  bool csv = true;
};

std::string report_json(const RunReport& report);
RunReport report_from_json_string(const std::string& text);
std::string report_text_table(const RunReport& report);
std::string report_csv(const RunReport& report);

// Writes the requested formats (report.json / report.txt / report.csv,
// plus timings.txt when timings exist) atomically; empty out_dir falls
// back to report.config.out_dir. Returns the written paths.
std::vector<std::filesystem::path> emit_report(const RunReport& report,
                                               const ReportFormats& formats = {},
                                               const std::filesystem::path& out_dir = {});

}  // namespace selena
