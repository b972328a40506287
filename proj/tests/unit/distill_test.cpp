#include "selena/distill.hpp"

#include "selena/dataset.hpp"
#include "selena/types.hpp"

#include "doctest.h"

#include <filesystem>

using namespace selena;

namespace {

TrainConfig small_cfg() {
  TrainConfig cfg;
  cfg.hidden_sizes = {16};
  cfg.epochs = 15;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.005;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("soft label mixing follows the convex formula") {
  Vector resp(2);
  resp << 0.6, 0.4;
  const Vector mixed = mix_soft_label(resp, 0, 2, 0.5);
  CHECK(mixed[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(mixed[1] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(mix_soft_label(resp, 0, 2, 1.5), Error);
  CHECK_THROWS_AS(mix_soft_label(resp, 0, 2, -0.1), Error);
  CHECK_THROWS_AS(mix_soft_label(resp, 2, 2, 0.5), Error);
}

TEST_CASE("lambda endpoints produce exact one-hots and exact ensemble outputs") {
  const Dataset d = generate_synthetic(3, 12, 20, 0.25, 3);
  const SplitAiModel splitai = train_splitai(d, 4, 2, small_cfg(), 21);

  Rng rng(1);
  const SoftLabelSet hard = compute_soft_labels(splitai, d, 1.0, rng);
  const Matrix expect = one_hot(d.labels, d.n_classes);
  CHECK((hard.targets.array() == expect.array()).all());

  const SoftLabelSet pure = compute_soft_labels(splitai, d, 0.0, rng);
  Rng probe(99);
  for (Index i = 0; i < d.n(); i += 13) {
    const Vector resp = splitai_infer(splitai, d.features.row(i).transpose(), probe);
    CHECK((pure.targets.row(i).transpose().array() == resp.array()).all());
  }

  for (double lam : {0.0, 0.3, 1.0}) {
    const SoftLabelSet s = compute_soft_labels(splitai, d, lam, rng);
    for (Index i = 0; i < d.n(); ++i) {
      CHECK(s.targets.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(s.targets.row(i).minCoeff() >= 0.0);
    }
  }
  CHECK_THROWS_AS(compute_soft_labels(splitai, d, 1.1, rng), Error);
}

TEST_CASE("soft labels demand the ensemble's own training rows") {
  const Dataset d = generate_synthetic(3, 12, 20, 0.25, 3);
  const Dataset other = generate_synthetic(3, 12, 20, 0.25, 4);
  const SplitAiModel splitai = train_splitai(d, 4, 2, small_cfg(), 21);
  Rng rng(1);
  CHECK_THROWS_AS(compute_soft_labels(splitai, other, 0.0, rng), Error);
}

TEST_CASE("lambda=1 distillation equals plain supervised training bit for bit") {
  const Dataset d = generate_synthetic(3, 12, 30, 0.25, 5);
  const TrainConfig cfg = small_cfg();
  const SplitAiModel splitai = train_splitai(d, 4, 2, cfg, 33);
  Rng rng(2);
  const ProtectedModel distilled = self_distill(splitai, d, 1.0, cfg, rng);
  const Mlp plain = train_hard(d.features, d.labels, d.n_classes, cfg);
  REQUIRE(distilled.model.weights.size() == plain.weights.size());
  for (std::size_t l = 0; l < plain.weights.size(); ++l) {
    CHECK((distilled.model.weights[l].array() == plain.weights[l].array()).all());
    CHECK((distilled.model.biases[l].array() == plain.biases[l].array()).all());
  }
}

TEST_CASE("the distilled model is deterministic under repeated queries") {
  const Dataset d = generate_synthetic(3, 12, 20, 0.25, 8);
  const SplitAiModel splitai = train_splitai(d, 4, 2, small_cfg(), 11);
  Rng rng(3);
  const ProtectedModel p = self_distill(splitai, d, 0.0, small_cfg(), rng);
  const Vector x = d.features.row(5).transpose();
  const Vector a = p.model.predict(x);
  const Vector b = p.model.predict(x);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("distilled training accuracy tracks soft-label argmax agreement") {
  const Dataset d = generate_synthetic(3, 20, 100, 0.3, 17);  // n = 300
  TrainConfig cfg = small_cfg();
  cfg.hidden_sizes = {32};
  cfg.epochs = 40;
  cfg.batch_size = 32;
  const SplitAiModel splitai = train_splitai(d, 5, 2, cfg, 29);

  Rng rng(4);
  const SoftLabelSet soft = compute_soft_labels(splitai, d, 0.0, rng);
  double agree = 0.0;
  for (Index i = 0; i < d.n(); ++i) {
    if (argmax_lowest(soft.targets.row(i).transpose()) == d.labels[static_cast<std::size_t>(i)]) {
      agree += 1.0;
    }
  }
  agree /= static_cast<double>(d.n());

  TrainConfig distill_cfg = cfg;
  distill_cfg.epochs = 80;
  const ProtectedModel p = self_distill(splitai, d, 0.0, distill_cfg, rng);
  const double acc = accuracy(p.model, d.features, d.labels);
  CHECK(std::abs(acc - agree) <= 0.1);
}

TEST_CASE("protected model persistence round-trips") {
  const Dataset d = generate_synthetic(3, 12, 20, 0.25, 6);
  const SplitAiModel splitai = train_splitai(d, 4, 2, small_cfg(), 13);
  Rng rng(5);
  const ProtectedModel p = self_distill(splitai, d, 0.25, small_cfg(), rng);

  const auto dir = std::filesystem::temp_directory_path() / "selena_protected_roundtrip";
  std::filesystem::remove_all(dir);
  save_protected(p, dir);
  const ProtectedModel back = load_protected(dir);
  CHECK(back.lambda == 0.25);
  CHECK(back.splitai_seed == p.splitai_seed);
  CHECK(back.dataset_fingerprint == p.dataset_fingerprint);
  CHECK(back.train_config.epochs == p.train_config.epochs);
  CHECK(back.train_config.seed == p.train_config.seed);
  CHECK(mlp_fingerprint(back.model) == mlp_fingerprint(p.model));
  std::filesystem::remove_all(dir);
}
