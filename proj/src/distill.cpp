#include "selena/distill.hpp"

#include "selena/io.hpp"

#include "config_json.hpp"
#include "json.hpp"

#include <sstream>

namespace selena {

namespace {

using nlohmann::json;

}  // namespace

Vector mix_soft_label(const Eigen::Ref<const Vector>& response, int label, int n_classes,
                      double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw Error("mix_soft_label: lambda must lie in [0, 1]");
  if (label < 0 || label >= n_classes) throw Error("mix_soft_label: label out of range");
  Vector out = (1.0 - lambda) * response;
  out[label] += lambda;
  return out;
}

SoftLabelSet compute_soft_labels(const SplitAiModel& splitai, const Dataset& data, double lambda,
                                 Rng& rng) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw Error("compute_soft_labels: lambda must lie in [0, 1]");
  }
  SoftLabelSet out;
  out.splitai_seed = splitai.seed;
  out.lambda = lambda;
  out.targets.resize(data.n(), data.n_classes);
  Index member_queries = 0;
  for (Index i = 0; i < data.n(); ++i) {
    InferenceTrace trace;
    const Vector response = splitai_infer(splitai, data.features.row(i).transpose(), rng, &trace);
    if (!trace.member_branch) {
      std::ostringstream msg;
      msg << "compute_soft_labels: row " << i << " missed the member branch; the dataset"
          << " is not the ensemble's training set";
      throw Error(msg.str());
    }
    ++member_queries;
    out.targets.row(i) =
        mix_soft_label(response, data.labels[static_cast<std::size_t>(i)], data.n_classes, lambda)
            .transpose();
  }
  // Single-query discipline: exactly one member-path query per training row.
  if (member_queries != data.n()) throw Error("compute_soft_labels: query accounting failed");
  return out;
}

ProtectedModel self_distill(const SplitAiModel& splitai, const Dataset& data, double lambda,
                            const TrainConfig& cfg, Rng& rng) {
  const SoftLabelSet soft = compute_soft_labels(splitai, data, lambda, rng);
  ProtectedModel out;
  out.model = train_soft(data.features, soft.targets, cfg);
  out.lambda = lambda;
  out.train_config = cfg;
  out.splitai_seed = splitai.seed;
  out.dataset_fingerprint = splitai.dataset_fingerprint;
  return out;
}

void save_protected(const ProtectedModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["kind"] = "protected";
  manifest["lambda"] = model.lambda;
  manifest["splitai_seed"] = model.splitai_seed;
  manifest["dataset_fingerprint"] = hex64(model.dataset_fingerprint);
  manifest["train_config"] = detail::train_config_to_json(model.train_config);
  manifest["model_file"] = "model.bin";
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  save_mlp(model.model, dir / "model.bin");
}

ProtectedModel load_protected(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  if (manifest.at("kind").get<std::string>() != "protected") {
    throw Error("load_protected: " + dir.string() + " does not hold a protected model");
  }
  if (manifest.at("format_version").get<int>() != 1) {
    throw Error("load_protected: unsupported format version");
  }
  ProtectedModel out;
  out.lambda = manifest.at("lambda").get<double>();
  out.splitai_seed = manifest.at("splitai_seed").get<std::uint64_t>();
  out.dataset_fingerprint =
      std::stoull(manifest.at("dataset_fingerprint").get<std::string>(), nullptr, 16);
  out.train_config = detail::train_config_from_json(manifest.at("train_config"));
  out.model = load_mlp(dir / manifest.at("model_file").get<std::string>());
  return out;
}

}  // namespace selena
