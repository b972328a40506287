#pragma once

#include "selena/types.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace selena {

enum class FeatureKind { kBinary, kReal };

struct Dataset {
  Matrix features;  // n x d, one sample per row
  std::vector<int> labels;
  int n_classes = 0;
  FeatureKind feature_kind = FeatureKind::kReal;

  Index n() const { return features.rows(); }
  Index d() const { return features.cols(); }
};

// Per class: one random binary prototype; each sample is the prototype with
// every bit independently flipped with probability flip_noise. Samples are
// emitted class-blocked. Prototypes are drawn before any sample, so they
// depend only on (n_classes, n_features, seed).
Dataset generate_synthetic(int n_classes, int n_features, int n_per_class, double flip_noise,
                           std::uint64_t seed);

// CSV with header "f0,...,f{d-1},label"; doubles in shortest round-trip form.
void save_csv(const Dataset& data, const std::filesystem::path& path);

// declared_classes < 0 infers k as max label + 1. feature_kind is binary iff
// every feature value is exactly 0 or 1.
Dataset load_csv(const std::filesystem::path& path, int declared_classes = -1);

Dataset subset(const Dataset& data, const std::vector<Index>& rows);

// Shuffled split into members/nonmembers; leftover rows are dropped.
std::pair<Dataset, Dataset> member_nonmember_split(const Dataset& all, Index n_members,
                                                   Index n_nonmembers, std::uint64_t seed);

// Canonical feature-row key: each value rounded to 9 decimal places and
// packed as little-endian int64 bytes, making exact-match lookup well
// defined for real features (binary features are exact already).
template <class Derived>
std::string canonical_key(const Eigen::DenseBase<Derived>& row) {
  std::string out(static_cast<std::size_t>(row.size()) * 8, '\0');
  for (Index i = 0; i < row.size(); ++i) {
    const std::int64_t v = std::llround(static_cast<double>(row(i)) * 1e9);
    std::memcpy(out.data() + static_cast<std::size_t>(i) * 8, &v, 8);
  }
  return out;
}

std::uint64_t dataset_fingerprint(const Dataset& data);

struct EvalSplit {
  Dataset train;  // members
  Dataset test;   // non-members
  std::vector<Index> known_members, known_nonmembers;  // attacker-known indices
  std::vector<Index> eval_members, eval_nonmembers;    // balanced evaluation sets
  double knowledge_fraction = 0.5;
};

// Attacker-known sets are uniform subsets of floor(fraction * n); the eval
// sets are the complements, balanced by down-sampling the larger side with
// the same seed stream. All four index lists are sorted.
EvalSplit make_eval_split(Dataset members, Dataset nonmembers, double knowledge_fraction,
                          std::uint64_t seed);

}  // namespace selena
