#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "gpvs/gp.hpp"
#include "gpvs/seq2seq.hpp"

namespace gpvs {

/// Invalid configuration or usage; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Run configuration. Defaults mirror the reference training recipe:
/// learning rate 1e-4, early-stop patience 10 epochs, KL coefficient fixed
/// at 1 with no annealing, beam size 10.
struct RunConfig {
  std::string task = "copy";      // copy | synonym
  std::string variant = "gp";     // deterministic | normal | gp
  double v = 1.0;
  double r = 1.0;
  double sigma2 = 0.1;
  std::string mean_mode = "identity";
  std::size_t vocab = 0;          // 0 = take from the vocabulary file
  std::size_t embed = 32;
  std::size_t hidden = 64;
  std::size_t latent = 64;
  bool projection = false;
  double lr = 1e-4;
  int epochs = 30;
  int batch_size = 32;
  int patience = 10;
  std::uint64_t seed = 1;
  double tau = 1.0;
  int beam = 10;
  int max_len = 16;
  std::string corpus_dir;
  std::string out_dir;

  static nlohmann::json defaults_json() { return RunConfig{}.to_json(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["variant"] = variant;
    j["v"] = v;
    j["r"] = r;
    j["sigma2"] = sigma2;
    j["mean_mode"] = mean_mode;
    j["vocab"] = vocab;
    j["embed"] = embed;
    j["hidden"] = hidden;
    j["latent"] = latent;
    j["projection"] = projection;
    j["lr"] = lr;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["patience"] = patience;
    j["seed"] = seed;
    j["tau"] = tau;
    j["beam"] = beam;
    j["max_len"] = max_len;
    j["corpus_dir"] = corpus_dir;
    j["out_dir"] = out_dir;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      c.task = j.value("task", c.task);
      c.variant = j.value("variant", c.variant);
      c.v = j.value("v", c.v);
      c.r = j.value("r", c.r);
      c.sigma2 = j.value("sigma2", c.sigma2);
      c.mean_mode = j.value("mean_mode", c.mean_mode);
      c.vocab = j.value("vocab", c.vocab);
      c.embed = j.value("embed", c.embed);
      c.hidden = j.value("hidden", c.hidden);
      c.latent = j.value("latent", c.latent);
      c.projection = j.value("projection", c.projection);
      c.lr = j.value("lr", c.lr);
      c.epochs = j.value("epochs", c.epochs);
      c.batch_size = j.value("batch_size", c.batch_size);
      c.patience = j.value("patience", c.patience);
      c.seed = j.value("seed", c.seed);
      c.tau = j.value("tau", c.tau);
      c.beam = j.value("beam", c.beam);
      c.max_len = j.value("max_len", c.max_len);
      c.corpus_dir = j.value("corpus_dir", c.corpus_dir);
      c.out_dir = j.value("out_dir", c.out_dir);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (task != "copy" && task != "synonym") throw ConfigError("task must be copy|synonym");
    if (variant != "deterministic" && variant != "normal" && variant != "gp")
      throw ConfigError("variant must be deterministic|normal|gp");
    if (variant == "gp") {
      try {
        (void)GpPriorSpec::checked(v, r, sigma2, mean_mode_from_string(mean_mode));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      if (latent != hidden && !projection)
        throw ConfigError("gp variant needs latent == hidden or projection=true");
    }
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (beam < 1) throw ConfigError("beam must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (tau < 0.0) throw ConfigError("tau must be >= 0");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
  }

  ModelConfig model_config(std::size_t vocab_size_from_file) const {
    ModelConfig mc;
    mc.vocab_size = vocab ? vocab : vocab_size_from_file;
    if (vocab && vocab != vocab_size_from_file)
      throw ConfigError("config vocab=" + std::to_string(vocab) +
                        " does not match vocabulary file size " +
                        std::to_string(vocab_size_from_file));
    mc.embed_dim = embed;
    mc.hidden_dim = hidden;
    mc.latent_dim = latent;
    mc.variant = variant_from_string(variant);
    mc.projection = projection;
    if (mc.variant == Variant::gp)
      mc.gp = GpPriorSpec::checked(v, r, sigma2, mean_mode_from_string(mean_mode));
    return mc;
  }
};

/// Load a JSON config file, overlay `--set key=value` pairs, and parse.
/// Values are parsed as JSON literals when possible, otherwise as strings.
inline RunConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides,
                             nlohmann::json* effective_out = nullptr) {
  nlohmann::json merged = RunConfig::defaults_json();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file: " + path);
    nlohmann::json file_json;
    try {
      f >> file_json;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    for (const auto& [key, value] : file_json.items()) {
      if (!merged.contains(key)) throw ConfigError("unknown config key: " + key);
      merged[key] = value;
    }
  }
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    if (!merged.contains(key)) throw ConfigError("unknown config key: " + key);
    nlohmann::json parsed = nlohmann::json::parse(raw, nullptr, false);
    if (parsed.is_discarded() || parsed.is_string() != merged[key].is_string()) {
      if (merged[key].is_string())
        parsed = raw;
      else if (parsed.is_discarded())
        throw ConfigError("cannot parse value for " + key + ": " + raw);
    }
    merged[key] = parsed;
  }
  RunConfig cfg = RunConfig::from_json(merged);
  if (effective_out) *effective_out = cfg.to_json();
  return cfg;
}

}  // namespace gpvs
