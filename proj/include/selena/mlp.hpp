#pragma once

#include "selena/rng.hpp"
#include "selena/types.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace selena {

enum class Activation { kTanh, kRelu };
enum class Optimizer { kSgd, kAdam };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& s);
std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

struct AdamParams {
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  Scalar learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::kAdam;
  AdamParams adam;
  std::uint64_t seed = 1;
  std::vector<int> hidden_sizes{64};
  Activation activation = Activation::kTanh;
};

// Row-stochastic softmax with per-row max shift.
Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits);

// Argmax with ties broken toward the lowest index.
Index argmax_lowest(const Eigen::Ref<const Vector>& v);

// Mean over rows of -sum_i target_i * log(prob_i), probabilities clamped to
// [1e-12, 1] before the log.
double soft_cross_entropy(const Eigen::Ref<const Matrix>& probs,
                          const Eigen::Ref<const Matrix>& targets);

Matrix one_hot(const std::vector<int>& labels, int n_classes);

// Feed-forward softmax classifier. Layer l maps fan_in -> fan_out with
// weight [fan_out x fan_in] and bias [fan_out]; hidden layers apply the
// activation, the last layer feeds softmax. Immutable after training, so
// concurrent predict calls are safe.
struct Mlp {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::kTanh;

  Index n_in() const { return weights.empty() ? 0 : weights.front().cols(); }
  Index n_out() const { return weights.empty() ? 0 : weights.back().rows(); }

  Matrix predict_batch(const Eigen::Ref<const Matrix>& X) const;
  Vector predict(const Eigen::Ref<const Vector>& x) const;
};

struct TrainStats {
  std::vector<double> epoch_loss;  // full-set loss after each epoch
};

using EpochCallback = std::function<void(int epoch, const Mlp& net)>;

// Minibatch SGD/Adam on soft probability targets. Deterministic in
// (X, targets, cfg): weight init and the per-epoch shuffle both draw from
// Rng(cfg.seed). The batch remainder is kept as a short final batch.
Mlp train_soft(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& targets,
               const TrainConfig& cfg, const EpochCallback& on_epoch = {},
               TrainStats* stats = nullptr);

// Hard-label training: one-hot encodes and defers to train_soft, so a soft
// target set that happens to be exactly one-hot trains identically.
Mlp train_hard(const Eigen::Ref<const Matrix>& X, const std::vector<int>& labels, int n_classes,
               const TrainConfig& cfg, const EpochCallback& on_epoch = {},
               TrainStats* stats = nullptr);

double accuracy(const Mlp& model, const Eigen::Ref<const Matrix>& X,
                const std::vector<int>& labels);

// Binary parameter format (little-endian): magic "SLNM", u32 version,
// u8 activation, u32 layer count, then per layer u64 rows, u64 cols, the
// weight matrix row-major, and the bias vector, all raw doubles. Raw bytes
// make the round-trip bit-exact.
void save_mlp(const Mlp& model, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

// 64-bit digest of the parameter bytes; used to compare models cheaply.
std::uint64_t mlp_fingerprint(const Mlp& model);

}  // namespace selena
