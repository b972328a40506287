#pragma once

#include "selena/dataset.hpp"
#include "selena/mlp.hpp"
#include "selena/rng.hpp"
#include "selena/types.hpp"

#include <filesystem>
#include <unordered_map>
#include <vector>

namespace selena {

// Per training sample: the L sub-model indices whose training subsets
// exclude it.
struct NonModelIndexTable {
  int K = 0;
  int L = 0;
  std::vector<std::vector<int>> idnon;  // sorted, exactly L distinct entries each
};

// Uniform without-replacement draw of L indices per sample.
NonModelIndexTable assign_non_model_indices(Index n_samples, int K, int L, std::uint64_t seed);

// Subset i = all sample indices whose idnon set excludes i, so every sample
// lands in exactly K - L subsets.
std::vector<std::vector<Index>> build_subsets(const Dataset& data,
                                              const NonModelIndexTable& idnon);

struct InferenceTrace {
  bool member_branch = false;
  Index matched_sample = -1;    // training row hit by the exact-match lookup
  Index surrogate_sample = -1;  // random training row drawn on the non-member path
  std::vector<int> evaluated;   // sub-model indices actually queried
};

struct SplitAiModel {
  std::vector<Mlp> submodels;
  NonModelIndexTable idnon;
  // Canonical feature key -> training row. Duplicated features with the same
  // label share the first occurrence's entry.
  std::unordered_map<std::string, Index> member_index;
  std::uint64_t seed = 0;
  std::uint64_t dataset_fingerprint = 0;
  int n_classes = 0;

  Index n_train() const { return static_cast<Index>(idnon.idnon.size()); }
};

// Trains the K sub-models independently: sub-model i uses the derived seed
// stream of (seed, i); the index table uses (seed, K).
SplitAiModel train_splitai(const Dataset& data, int K, int L, const TrainConfig& cfg,
                           std::uint64_t seed);

// Adaptive inference. Exact-match member: average the predictions of the L
// excluded sub-models; in-model sub-models are never evaluated. Anything
// else: draw a uniform training row from rng and use its excluded set. The
// caller owns rng, so concurrent use needs one source per caller.
Vector splitai_infer(const SplitAiModel& model, const Eigen::Ref<const Vector>& x, Rng& rng,
                     InferenceTrace* trace = nullptr);

Matrix splitai_infer_batch(const SplitAiModel& model, const Eigen::Ref<const Matrix>& X,
                           Rng& rng, std::vector<InferenceTrace>* traces = nullptr);

// Average-of-all-outputs baseline: mean over all K sub-models, deterministic.
Vector splitai_infer_all_average(const SplitAiModel& model, const Eigen::Ref<const Vector>& x);

Matrix splitai_infer_all_average_batch(const SplitAiModel& model,
                                       const Eigen::Ref<const Matrix>& X);

// Directory layout: manifest.json, submodel_###.bin, idnon.json, and the
// canonical member keys (member_keys.bin) that rebuild the exact-match map.
void save_splitai(const SplitAiModel& model, const std::filesystem::path& dir);
SplitAiModel load_splitai(const std::filesystem::path& dir);

std::uint64_t splitai_fingerprint(const SplitAiModel& model);

}  // namespace selena
