#include "dream/config.hpp"

#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "dream/tokenizer.hpp"

namespace dream {

using nlohmann::json;

namespace {

[[noreturn]] void type_error(const std::string& key, const char* want) {
  throw ConfigError("config key '" + key + "' must be " + want);
}

void read(const json& v, const std::string& key, int& out) {
  if (!v.is_number_integer()) type_error(key, "an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) type_error(key, "a 32-bit integer");
  out = static_cast<int>(x);
}
void read(const json& v, const std::string& key, std::int64_t& out) {
  if (!v.is_number_integer()) type_error(key, "an integer");
  out = v.get<std::int64_t>();
}
void read(const json& v, const std::string& key, std::uint64_t& out) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    type_error(key, "a non-negative integer");
  }
  out = v.get<std::uint64_t>();
}
void read(const json& v, const std::string& key, double& out) {
  if (!v.is_number()) type_error(key, "a number");
  out = v.get<double>();
}
void read(const json& v, const std::string& key, bool& out) {
  if (!v.is_boolean()) type_error(key, "true or false");
  out = v.get<bool>();
}
void read(const json& v, const std::string& key, std::vector<double>& out) {
  if (!v.is_array()) type_error(key, "an array of numbers");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_number()) type_error(key, "an array of numbers");
    out.push_back(e.get<double>());
  }
}

struct Key {
  std::string name;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename Ref>
Key field(std::string name, Ref ref) {
  return {name, [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const json& v) { read(v, name, ref(c)); }};
}

template <typename Enum>
Key choice(std::string name, Enum RunConfig::*, std::function<Enum&(RunConfig&)> ref,
           std::vector<std::pair<std::string, Enum>> names) {
  return {name,
          [ref, names](const RunConfig& c) {
            const Enum e = ref(const_cast<RunConfig&>(c));
            for (const auto& [n, v] : names) {
              if (v == e) return json(n);
            }
            return json();
          },
          [ref, names, name](RunConfig& c, const json& v) {
            if (!v.is_string()) type_error(name, "a string");
            for (const auto& [n, e] : names) {
              if (v.get<std::string>() == n) {
                ref(c) = e;
                return;
              }
            }
            std::string allowed;
            for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
            throw ConfigError("config key '" + name + "' must be one of " + allowed);
          }};
}

#define DREAM_REF(path) [](RunConfig& c) -> auto& { return c.path; }

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back(field("train.epochs", DREAM_REF(train.epochs)));
    k.push_back(field("train.max_steps", DREAM_REF(train.max_steps)));
    k.push_back(field("train.samples_per_epoch", DREAM_REF(train.samples_per_epoch)));
    k.push_back(field("train.batch_size", DREAM_REF(train.batch_size)));
    k.push_back(field("train.lr", DREAM_REF(train.lr)));
    k.push_back(field("train.lr_warmup_epochs", DREAM_REF(train.lr_warmup_epochs)));
    k.push_back(field("train.lambda", DREAM_REF(train.lambda)));
    k.push_back(field("train.diffusion_weight", DREAM_REF(train.diffusion_weight)));
    k.push_back(field("train.ema_decay", DREAM_REF(train.ema_decay)));
    k.push_back(field("train.label_dropout", DREAM_REF(train.label_dropout)));
    k.push_back(field("train.n_noise", DREAM_REF(train.n_noise)));
    k.push_back(field("train.hflip", DREAM_REF(train.hflip)));
    k.push_back(field("train.image_side", DREAM_REF(train.image_side)));
    k.push_back(field("train.seed", DREAM_REF(train.seed)));
    k.push_back(field("train.data_seed", DREAM_REF(train.data_seed)));
    k.push_back(field("train.timesteps", DREAM_REF(train.timesteps)));
    k.push_back(field("train.schedule_offset", DREAM_REF(train.schedule_offset)));
    k.push_back(field("train.val_every", DREAM_REF(train.val_every)));
    k.push_back(field("train.val_samples", DREAM_REF(train.val_samples)));

    k.push_back(field("optim.beta1", DREAM_REF(train.optim.beta1)));
    k.push_back(field("optim.beta2", DREAM_REF(train.optim.beta2)));
    k.push_back(field("optim.eps", DREAM_REF(train.optim.eps)));
    k.push_back(field("optim.weight_decay", DREAM_REF(train.optim.weight_decay)));
    k.push_back(field("optim.clip_norm", DREAM_REF(train.optim.clip_norm)));

    k.push_back(choice<ScheduleKind>("mask.kind", nullptr, DREAM_REF(train.mask.kind),
                                     {{"WM", ScheduleKind::warmup},
                                      {"FX", ScheduleKind::fixed},
                                      {"UNI", ScheduleKind::uniform},
                                      {"CD", ScheduleKind::cooldown}}));
    k.push_back(field("mask.sigma", DREAM_REF(train.mask.sigma)));
    k.push_back(field("mask.warmup_epochs", DREAM_REF(train.mask.warmup_epochs)));
    k.push_back(field("mask.min", DREAM_REF(train.mask.min_ratio)));
    k.push_back(field("mask.max", DREAM_REF(train.mask.max_ratio)));
    k.push_back(field("mask.gamma", DREAM_REF(train.mask.gamma)));
    k.push_back(field("mask.phi", DREAM_REF(train.mask.phi)));

    k.push_back(field("model.enc_blocks", DREAM_REF(train.model.enc_blocks)));
    k.push_back(field("model.dec_blocks", DREAM_REF(train.model.dec_blocks)));
    k.push_back(field("model.width", DREAM_REF(train.model.width)));
    k.push_back(field("model.heads", DREAM_REF(train.model.heads)));
    k.push_back(field("model.mlp_ratio", DREAM_REF(train.model.mlp_ratio)));
    k.push_back(field("model.buffer_tokens", DREAM_REF(train.model.buffer_tokens)));
    k.push_back(field("model.head_layers", DREAM_REF(train.model.head_layers)));
    k.push_back(field("model.contrastive_dim", DREAM_REF(train.model.contrastive_dim)));
    k.push_back(field("model.cond_dim", DREAM_REF(train.model.cond_dim)));
    k.push_back(field("model.text_blocks", DREAM_REF(train.model.text_blocks)));
    k.push_back(field("model.clip_loss_layer", DREAM_REF(train.model.clip_loss_layer)));
    k.push_back(choice<ClipTokens>("model.clip_tokens", nullptr, DREAM_REF(train.model.clip_tokens),
                                   {{"all", ClipTokens::all}, {"buffer", ClipTokens::buffer}}));
    k.push_back(field("model.init_std", DREAM_REF(train.model.init_std)));
    k.push_back(field("model.zero_init_head_output", DREAM_REF(train.model.zero_init_head_output)));

    k.push_back(field("decode.steps", DREAM_REF(decode.steps)));
    k.push_back(field("decode.temperature", DREAM_REF(decode.temperature)));
    k.push_back(field("decode.cfg", DREAM_REF(decode.cfg)));
    k.push_back(choice<CfgSchedule>("decode.cfg_schedule", nullptr, DREAM_REF(decode.cfg_schedule),
                                    {{"constant", CfgSchedule::constant}, {"linear", CfgSchedule::linear}}));
    k.push_back(field("decode.inference_steps", DREAM_REF(decode.inference_steps)));
    k.push_back(field("decode.k", DREAM_REF(decode.k)));
    k.push_back(field("decode.t_switch", DREAM_REF(decode.t_switch)));
    k.push_back(field("decode.nfe_budget", DREAM_REF(decode.nfe_budget)));
    k.push_back(field("decode.clip_denoised", DREAM_REF(decode.clip_denoised)));
    k.push_back(field("decode.seed", DREAM_REF(decode.seed)));

    k.push_back(field("eval.probe_train_samples", DREAM_REF(eval.probe_train_samples)));
    k.push_back(field("eval.probe_test_samples", DREAM_REF(eval.probe_test_samples)));
    k.push_back(field("eval.retrieval_samples", DREAM_REF(eval.retrieval_samples)));
    k.push_back(field("eval.mask_grid", DREAM_REF(eval.mask_grid)));
    k.push_back(field("eval.probe_iterations", DREAM_REF(eval.probe_iterations)));
    k.push_back(field("eval.probe_l2", DREAM_REF(eval.probe_l2)));
    k.push_back(field("eval.seed", DREAM_REF(eval.seed)));
    return k;
  }();
  return keys;
}

#undef DREAM_REF

void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string name = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, name, out);
    } else {
      out.emplace_back(name, *it);
    }
  }
}

bool in_train_subset(const std::string& key) {
  return key.rfind("train.", 0) == 0 || key.rfind("optim.", 0) == 0 || key.rfind("mask.", 0) == 0 ||
         key.rfind("model.", 0) == 0;
}

RunConfig parse_filtered(const json& doc, bool train_only) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  std::vector<std::pair<std::string, json>> entries;
  flatten(doc, "", entries);
  RunConfig cfg;
  std::vector<std::string> seen;
  for (const auto& [name, value] : entries) {
    const auto& keys = registry();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return k.name == name; });
    if (it == keys.end() || (train_only && !in_train_subset(name))) throw ConfigError("unknown config key '" + name + "'");
    if (std::find(seen.begin(), seen.end(), name) != seen.end()) throw ConfigError("config key '" + name + "' given twice");
    seen.push_back(name);
    it->set(cfg, value);
  }
  derive_model_shape(cfg.train);
  try {
    cfg.train.validate();
    if (!train_only) cfg.eval.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!train_only) {
    try {
      cfg.decode.validate();
    } catch (const InfeasibleBudget&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return cfg;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) out.push_back(k.name);
  return out;
}

void derive_model_shape(TrainConfig& config) {
  const TokenizerConfig tok;
  if (config.image_side <= 0 || config.image_side % tok.pixels_per_token() != 0) {
    throw ConfigError("train.image_side must be a positive multiple of " + std::to_string(tok.pixels_per_token()));
  }
  const int grid = tok.grid_side(config.image_side);
  config.model.n_tokens = grid * grid;
  config.model.token_channels = tok.channels();
  config.model.timesteps = config.timesteps;
}

RunConfig parse_run_config(const json& doc) { return parse_filtered(doc, false); }

RunConfig parse_run_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(doc);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str());
}

json run_config_to_json(const RunConfig& config) {
  json out = json::object();
  for (const auto& k : registry()) out[k.name] = k.get(config);
  return out;
}

std::string train_config_json(const TrainConfig& config) {
  RunConfig rc;
  rc.train = config;
  json out = json::object();
  for (const auto& k : registry()) {
    if (in_train_subset(k.name)) out[k.name] = k.get(rc);
  }
  return out.dump();
}

TrainConfig parse_train_config_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_filtered(doc, true).train;
}

}  // namespace dream
