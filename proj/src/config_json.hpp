#pragma once

#include "selena/mlp.hpp"

#include "json.hpp"

namespace selena {
namespace detail {

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["optimizer"] = optimizer_name(cfg.optimizer);
  j["adam"] = {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}};
  j["seed"] = cfg.seed;
  j["hidden_sizes"] = cfg.hidden_sizes;
  j["activation"] = activation_name(cfg.activation);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  const nlohmann::json& adam = j.at("adam");
  cfg.adam.beta1 = adam.at("beta1").get<double>();
  cfg.adam.beta2 = adam.at("beta2").get<double>();
  cfg.adam.eps = adam.at("eps").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  cfg.activation = parse_activation(j.at("activation").get<std::string>());
  return cfg;
}

}  // namespace detail
}  // namespace selena
