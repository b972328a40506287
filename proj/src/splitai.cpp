#include "selena/splitai.hpp"

#include "selena/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace selena {

namespace {

using nlohmann::json;

std::string submodel_filename(int i) {
  std::ostringstream name;
  name << "submodel_";
  if (i < 100) name << '0';
  if (i < 10) name << '0';
  name << i << ".bin";
  return name.str();
}

std::unordered_map<std::string, Index> build_member_index(const Dataset& data) {
  std::unordered_map<std::string, Index> index;
  index.reserve(static_cast<std::size_t>(data.n()));
  for (Index i = 0; i < data.n(); ++i) {
    const std::string key = canonical_key(data.features.row(i));
    auto [it, inserted] = index.try_emplace(key, i);
    if (!inserted) {
      const int prev = data.labels[static_cast<std::size_t>(it->second)];
      const int cur = data.labels[static_cast<std::size_t>(i)];
      if (prev != cur) {
        std::ostringstream msg;
        msg << "train_splitai: rows " << it->second << " and " << i
            << " share features but carry labels " << prev << " and " << cur
            << "; exact-match membership would be ambiguous";
        throw Error(msg.str());
      }
    }
  }
  return index;
}

Vector average_over(const SplitAiModel& model, const Eigen::Ref<const Vector>& x,
                    const std::vector<int>& indices, InferenceTrace* trace) {
  Vector acc = Vector::Zero(model.submodels[0].n_out());
  for (int i : indices) {
    acc += model.submodels[static_cast<std::size_t>(i)].predict(x);
    if (trace) trace->evaluated.push_back(i);
  }
  return acc / static_cast<Scalar>(indices.size());
}

}  // namespace

NonModelIndexTable assign_non_model_indices(Index n_samples, int K, int L, std::uint64_t seed) {
  if (n_samples < 1) throw Error("assign_non_model_indices: need at least one sample");
  if (L <= 0) throw Error("assign_non_model_indices: L must be positive");
  if (L >= K) throw Error("assign_non_model_indices: L must be smaller than K");

  NonModelIndexTable table;
  table.K = K;
  table.L = L;
  table.idnon.resize(static_cast<std::size_t>(n_samples));
  Rng rng(seed);
  for (Index s = 0; s < n_samples; ++s) {
    const auto draw = rng.sample_without_replacement(static_cast<std::size_t>(K),
                                                     static_cast<std::size_t>(L));
    std::vector<int> ids(draw.begin(), draw.end());
    std::sort(ids.begin(), ids.end());
    table.idnon[static_cast<std::size_t>(s)] = std::move(ids);
  }
  return table;
}

std::vector<std::vector<Index>> build_subsets(const Dataset& data,
                                              const NonModelIndexTable& idnon) {
  if (static_cast<Index>(idnon.idnon.size()) != data.n()) {
    throw Error("build_subsets: index table does not cover the dataset");
  }
  std::vector<std::vector<Index>> subsets(static_cast<std::size_t>(idnon.K));
  for (Index s = 0; s < data.n(); ++s) {
    const auto& excluded = idnon.idnon[static_cast<std::size_t>(s)];
    for (int i = 0; i < idnon.K; ++i) {
      if (!std::binary_search(excluded.begin(), excluded.end(), i)) {
        subsets[static_cast<std::size_t>(i)].push_back(s);
      }
    }
  }
  return subsets;
}

SplitAiModel train_splitai(const Dataset& data, int K, int L, const TrainConfig& cfg,
                           std::uint64_t seed) {
  if (data.n() < 1) throw Error("train_splitai: empty dataset");

  SplitAiModel model;
  model.seed = seed;
  model.n_classes = data.n_classes;
  model.dataset_fingerprint = selena::dataset_fingerprint(data);
  model.idnon = assign_non_model_indices(data.n(), K, L, derive_seed(seed, K));
  model.member_index = build_member_index(data);

  const auto subsets = build_subsets(data, model.idnon);
  for (int i = 0; i < K; ++i) {
    if (subsets[static_cast<std::size_t>(i)].empty()) {
      std::ostringstream msg;
      msg << "train_splitai: subset " << i << " is empty; use more samples or smaller K/L";
      throw Error(msg.str());
    }
  }

  model.submodels.reserve(static_cast<std::size_t>(K));
  for (int i = 0; i < K; ++i) {
    const Dataset part = subset(data, subsets[static_cast<std::size_t>(i)]);
    TrainConfig sub_cfg = cfg;
    sub_cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    model.submodels.push_back(train_hard(part.features, part.labels, data.n_classes, sub_cfg));
  }
  return model;
}

Vector splitai_infer(const SplitAiModel& model, const Eigen::Ref<const Vector>& x, Rng& rng,
                     InferenceTrace* trace) {
  if (model.submodels.empty()) throw Error("splitai_infer: untrained model");
  const auto it = model.member_index.find(canonical_key(x));
  if (it != model.member_index.end()) {
    if (trace) {
      trace->member_branch = true;
      trace->matched_sample = it->second;
    }
    return average_over(model, x, model.idnon.idnon[static_cast<std::size_t>(it->second)],
                        trace);
  }
  const Index surrogate = static_cast<Index>(
      rng.uniform_below(static_cast<std::uint64_t>(model.n_train())));
  if (trace) {
    trace->member_branch = false;
    trace->surrogate_sample = surrogate;
  }
  return average_over(model, x, model.idnon.idnon[static_cast<std::size_t>(surrogate)], trace);
}

Matrix splitai_infer_batch(const SplitAiModel& model, const Eigen::Ref<const Matrix>& X,
                           Rng& rng, std::vector<InferenceTrace>* traces) {
  Matrix out(X.rows(), model.submodels.empty() ? 0 : model.submodels[0].n_out());
  if (traces) traces->assign(static_cast<std::size_t>(X.rows()), InferenceTrace{});
  for (Index r = 0; r < X.rows(); ++r) {
    InferenceTrace* t = traces ? &(*traces)[static_cast<std::size_t>(r)] : nullptr;
    out.row(r) = splitai_infer(model, X.row(r).transpose(), rng, t).transpose();
  }
  return out;
}

Vector splitai_infer_all_average(const SplitAiModel& model, const Eigen::Ref<const Vector>& x) {
  if (model.submodels.empty()) throw Error("splitai_infer_all_average: untrained model");
  Vector acc = Vector::Zero(model.submodels[0].n_out());
  for (const Mlp& m : model.submodels) acc += m.predict(x);
  return acc / static_cast<Scalar>(model.submodels.size());
}

Matrix splitai_infer_all_average_batch(const SplitAiModel& model,
                                       const Eigen::Ref<const Matrix>& X) {
  if (model.submodels.empty()) throw Error("splitai_infer_all_average: untrained model");
  Matrix acc = Matrix::Zero(X.rows(), model.submodels[0].n_out());
  for (const Mlp& m : model.submodels) acc += m.predict_batch(X);
  return acc / static_cast<Scalar>(model.submodels.size());
}

void save_splitai(const SplitAiModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  json manifest;
  manifest["format_version"] = 1;
  manifest["kind"] = "splitai";
  manifest["K"] = model.idnon.K;
  manifest["L"] = model.idnon.L;
  manifest["seed"] = model.seed;
  manifest["dataset_fingerprint"] = hex64(model.dataset_fingerprint);
  manifest["n_classes"] = model.n_classes;
  manifest["n_train"] = model.n_train();
  manifest["idnon_file"] = "idnon.json";
  manifest["member_keys_file"] = "member_keys.bin";
  json files = json::array();
  for (int i = 0; i < model.idnon.K; ++i) files.push_back(submodel_filename(i));
  manifest["submodel_files"] = files;
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  json idnon = json::array();
  for (const auto& ids : model.idnon.idnon) idnon.push_back(ids);
  atomic_write_file(dir / "idnon.json", idnon.dump() + "\n");

  // Member keys, ordered by training row, fixed key width.
  std::string keys;
  std::vector<std::pair<Index, const std::string*>> ordered;
  ordered.reserve(model.member_index.size());
  for (const auto& [key, row] : model.member_index) ordered.emplace_back(row, &key);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string blob;
  for (const auto& [row, key] : ordered) {
    std::uint64_t r = static_cast<std::uint64_t>(row);
    blob.append(reinterpret_cast<const char*>(&r), 8);
    std::uint64_t len = key->size();
    blob.append(reinterpret_cast<const char*>(&len), 8);
    blob.append(*key);
  }
  atomic_write_file(dir / "member_keys.bin", blob);

  for (int i = 0; i < model.idnon.K; ++i) {
    save_mlp(model.submodels[static_cast<std::size_t>(i)], dir / submodel_filename(i));
  }
}

SplitAiModel load_splitai(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  if (manifest.at("kind").get<std::string>() != "splitai") {
    throw Error("load_splitai: " + dir.string() + " does not hold a splitai model");
  }
  if (manifest.at("format_version").get<int>() != 1) {
    throw Error("load_splitai: unsupported format version");
  }

  SplitAiModel model;
  model.idnon.K = manifest.at("K").get<int>();
  model.idnon.L = manifest.at("L").get<int>();
  model.seed = manifest.at("seed").get<std::uint64_t>();
  model.dataset_fingerprint =
      std::stoull(manifest.at("dataset_fingerprint").get<std::string>(), nullptr, 16);
  model.n_classes = manifest.at("n_classes").get<int>();

  const json idnon = json::parse(read_file(dir / manifest.at("idnon_file").get<std::string>()));
  for (const auto& ids : idnon) {
    model.idnon.idnon.push_back(ids.get<std::vector<int>>());
  }

  const std::string blob =
      read_file(dir / manifest.at("member_keys_file").get<std::string>());
  std::size_t pos = 0;
  while (pos + 16 <= blob.size()) {
    std::uint64_t row, len;
    std::memcpy(&row, blob.data() + pos, 8);
    std::memcpy(&len, blob.data() + pos + 8, 8);
    pos += 16;
    if (pos + len > blob.size()) throw Error("load_splitai: truncated member key file");
    model.member_index.emplace(blob.substr(pos, len), static_cast<Index>(row));
    pos += len;
  }

  for (const auto& f : manifest.at("submodel_files")) {
    model.submodels.push_back(load_mlp(dir / f.get<std::string>()));
  }
  if (static_cast<int>(model.submodels.size()) != model.idnon.K) {
    throw Error("load_splitai: sub-model count does not match K");
  }
  return model;
}

std::uint64_t splitai_fingerprint(const SplitAiModel& model) {
  std::uint64_t h = mix64(model.seed);
  for (const Mlp& m : model.submodels) h = mix64(h ^ mlp_fingerprint(m));
  for (const auto& ids : model.idnon.idnon) {
    for (int i : ids) h = mix64(h ^ static_cast<std::uint64_t>(i));
  }
  return h;
}

}  // namespace selena
