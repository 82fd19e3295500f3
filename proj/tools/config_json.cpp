#include "config_json.hpp"

#include <cstdint>
#include <cstdio>
#include <stdexcept>

namespace gncd::cli {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const trainer::TrainConfig& c) {
  ordered_json j;
  j["alpha"] = c.weights.alpha;
  j["beta"] = c.weights.beta;
  j["gamma"] = c.weights.gamma;
  j["tau"] = c.weights.tau;
  j["tau_a"] = c.weights.tau_a;
  j["eta"] = c.eta;
  j["k"] = c.k;
  j["quantile_level"] = c.quantile_level;
  j["memory_size"] = c.memory_size;
  j["n_neg"] = c.n_neg;
  j["batch_size"] = c.batch_size;
  j["epochs_stage1"] = c.epochs_stage1;
  j["epochs_stage2"] = c.epochs_stage2;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["ema_momentum"] = c.ema_momentum;
  j["view_noise_sigma"] = c.view_noise_sigma;
  j["prompt_init_sigma"] = c.prompt_init_sigma;
  j["anchor_weight"] = c.anchor_weight;
  j["anchor_epochs"] = c.anchor_epochs;
  j["val_fraction"] = c.val_fraction;
  j["head"] = c.head == trainer::HeadKind::kIdentity ? "identity" : "random";
  j["cknn"] = c.cknn;
  j["ap"] = c.ap;
  j["semi_priori"] = c.semi_priori;
  j["semicl"] = c.semicl;
  j["seed"] = c.seed;
  return j;
}

void apply_json(const json& j, trainer::TrainConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") c.weights.alpha = v.get<double>();
    else if (key == "beta") c.weights.beta = v.get<double>();
    else if (key == "gamma") c.weights.gamma = v.get<double>();
    else if (key == "tau") c.weights.tau = v.get<double>();
    else if (key == "tau_a") c.weights.tau_a = v.get<double>();
    else if (key == "eta") c.eta = v.get<int>();
    else if (key == "k") c.k = v.is_string() && v.get<std::string>() == "auto" ? 0 : v.get<std::size_t>();
    else if (key == "quantile_level") c.quantile_level = v.get<double>();
    else if (key == "memory_size") c.memory_size = v.get<std::size_t>();
    else if (key == "n_neg") c.n_neg = v.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "epochs_stage1") c.epochs_stage1 = v.get<int>();
    else if (key == "epochs_stage2") c.epochs_stage2 = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "momentum") c.momentum = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "ema_momentum") c.ema_momentum = v.get<double>();
    else if (key == "view_noise_sigma") c.view_noise_sigma = v.get<double>();
    else if (key == "prompt_init_sigma") c.prompt_init_sigma = v.get<double>();
    else if (key == "anchor_weight") c.anchor_weight = v.get<double>();
    else if (key == "anchor_epochs") c.anchor_epochs = v.get<double>();
    else if (key == "val_fraction") c.val_fraction = v.get<double>();
    else if (key == "head") {
      const auto h = v.get<std::string>();
      if (h == "identity") c.head = trainer::HeadKind::kIdentity;
      else if (h == "random") c.head = trainer::HeadKind::kRandomLinear;
      else throw std::invalid_argument("config: head must be \"identity\" or \"random\"");
    }
    else if (key == "cknn") c.cknn = v.get<bool>();
    else if (key == "ap") c.ap = v.get<bool>();
    else if (key == "semi_priori") c.semi_priori = v.get<bool>();
    else if (key == "semicl") c.semicl = v.get<bool>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("config: unknown key \"" + key + "\"");
  }
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gncd::cli
