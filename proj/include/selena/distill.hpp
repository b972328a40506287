#pragma once

#include "selena/splitai.hpp"

#include <filesystem>

namespace selena {

struct SoftLabelSet {
  Matrix targets;  // one ConfidenceVector per training row
  std::uint64_t splitai_seed = 0;
  double lambda = 0.0;
};

struct ProtectedModel {
  Mlp model;
  double lambda = 0.0;
  TrainConfig train_config;
  std::uint64_t splitai_seed = 0;
  std::uint64_t dataset_fingerprint = 0;
};

// (1 - lambda) * response + lambda * onehot(label).
Vector mix_soft_label(const Eigen::Ref<const Vector>& response, int label, int n_classes,
                      double lambda);

// Queries splitai exactly once per training row. Every query must hit the
// member branch (the rows are the ensemble's own training set); a miss means
// the dataset is not the one splitai was trained on and raises an error.
SoftLabelSet compute_soft_labels(const SplitAiModel& splitai, const Dataset& data, double lambda,
                                 Rng& rng);

// Trains the protected model on the features with the mixed soft labels,
// using cfg verbatim. With lambda = 1 the targets are exact one-hots, so the
// result is bitwise identical to plain supervised training under the same
// config. Inference on the result never consults splitai.
ProtectedModel self_distill(const SplitAiModel& splitai, const Dataset& data, double lambda,
                            const TrainConfig& cfg, Rng& rng);

// Directory layout: manifest.json (lambda, seeds, dataset fingerprint,
// config snapshot) + model.bin.
void save_protected(const ProtectedModel& model, const std::filesystem::path& dir);
ProtectedModel load_protected(const std::filesystem::path& dir);

}  // namespace selena
