#include "bilinsim/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bilinsim/errors.hpp"
#include "json.hpp"

namespace bilinsim {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(where + (where.empty() ? "" : ".") + key + ": unknown field");
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError((where.empty() ? "" : where + ".") + key + ": wrong type");
  }
}

PoisonSpec read_poison(const json& j, const std::string& where) {
  reject_unknown(j, where, {"fraction", "trigger", "target"});
  PoisonSpec spec = default_digit_trigger(0.0);
  read(j, "fraction", spec.fraction, where);
  read(j, "target", spec.target, where);
  if (j.contains("trigger")) {
    spec.trigger.clear();
    for (const auto& t : j.at("trigger")) {
      if (!t.is_array() || t.size() != 2 || !t[0].is_number_integer() || !t[1].is_number())
        throw ConfigError(where + ".trigger: entries must be [coordinate, value]");
      spec.trigger.emplace_back(t[0].get<std::size_t>(), t[1].get<double>());
    }
  }
  return spec;
}

}  // namespace

TaskKind parse_task(std::string_view name) {
  if (name == "modadd") return TaskKind::kModAdd;
  if (name == "second-argmax") return TaskKind::kSecondArgmax;
  if (name == "staged-digits") return TaskKind::kStagedDigits;
  throw ConfigError("task: unknown task '" + std::string(name) + "' (expected modadd, second-argmax or staged-digits)");
}

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kModAdd:
      return "modadd";
    case TaskKind::kSecondArgmax:
      return "second-argmax";
    case TaskKind::kStagedDigits:
      return "staged-digits";
  }
  return "?";
}

void TaskConfig::validate() const {
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr: must be > 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay: must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    throw ConfigError("optimizer.betas: each must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps: must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (model.rank < 1) throw ConfigError("model.rank: must be >= 1");
  if (!(model.init_scale > 0.0)) throw ConfigError("model.init_scale: must be > 0");
  if (eval_interval < 1) throw ConfigError("eval_interval: must be >= 1");
  if (stages.empty()) throw ConfigError("stages: at least one stage (or top-level steps/epochs) is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string where = "stages[" + std::to_string(i) + "]";
    if (s.name.empty() || s.name.find_first_of("/\\ ") != std::string::npos)
      throw ConfigError(where + ".name: must be nonempty without spaces or slashes");
    if (!names.insert(s.name).second) throw ConfigError(where + ".name: duplicate stage name '" + s.name + "'");
    if ((s.steps > 0) == (s.epochs > 0)) throw ConfigError(where + ": set exactly one of steps or epochs (> 0)");
    for (int c : s.classes)
      if (c < 0 || c >= kDigitClasses) throw ConfigError(where + ".classes: class " + std::to_string(c) + " outside 0..9");
    if (task != TaskKind::kStagedDigits && !s.classes.empty())
      throw ConfigError(where + ".classes: only staged-digits supports class subsets");
    if (s.poison) {
      if (task != TaskKind::kStagedDigits) throw ConfigError(where + ".poison: only staged-digits supports poisoning");
      try {
        s.poison->validate(kDigitDim);
      } catch (const DomainError& e) {
        throw ConfigError(where + ".poison: " + e.what());
      }
      if (s.poison->target >= kDigitClasses) throw ConfigError(where + ".poison.target: outside 0..9");
    }
  }
  if (!std::is_sorted(checkpoints.steps.begin(), checkpoints.steps.end()) ||
      std::adjacent_find(checkpoints.steps.begin(), checkpoints.steps.end()) != checkpoints.steps.end())
    throw ConfigError("checkpoints.steps: must be strictly ascending");
  if (!checkpoints.steps.empty() && checkpoints.steps.front() < 0) throw ConfigError("checkpoints.steps: must be >= 0");
  if (checkpoints.every < 0) throw ConfigError("checkpoints.every: must be >= 0");
  switch (task) {
    case TaskKind::kModAdd:
      if (modulus < 2) throw ConfigError("data.modulus: must be >= 2");
      if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("data.train_fraction: must lie in (0, 1)");
      break;
    case TaskKind::kSecondArgmax: {
      const auto& names2 = second_argmax_distributions();
      if (std::find(names2.begin(), names2.end(), distribution) == names2.end())
        throw ConfigError("data.distribution: unknown distribution '" + distribution + "'");
      if (n_train < 1 || n_val < 1) throw ConfigError("data.n_train/n_val: must be >= 1");
      break;
    }
    case TaskKind::kStagedDigits:
      if (n_per_class < 1 || val_per_class < 1) throw ConfigError("data.n_per_class/val_per_class: must be >= 1");
      if (!(noise_sd >= 0.0)) throw ConfigError("data.noise_sd: must be >= 0");
      break;
  }
}

TaskConfig parse_task_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed document: ") + e.what());
  }
  reject_unknown(doc, "", {"task", "seed", "model", "data", "optimizer", "schedule", "batch_size", "steps", "epochs",
                           "stages", "eval_interval", "checkpoints"});
  TaskConfig cfg;
  if (!doc.contains("task")) throw ConfigError("task: required field missing");
  std::string task;
  read(doc, "task", task, "");
  cfg.task = parse_task(task);
  read(doc, "seed", cfg.seed, "");

  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    reject_unknown(m, "model", {"embed_dim", "rank", "bilinear_out", "lift", "init_scale"});
    read(m, "embed_dim", cfg.model.embed_dim, "model");
    read(m, "rank", cfg.model.rank, "model");
    read(m, "bilinear_out", cfg.model.bilinear_out, "model");
    read(m, "lift", cfg.model.lift, "model");
    read(m, "init_scale", cfg.model.init_scale, "model");
  }
  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    reject_unknown(d, "data", {"modulus", "train_fraction", "distribution", "n_train", "n_val", "n_per_class",
                               "val_per_class", "noise_sd"});
    read(d, "modulus", cfg.modulus, "data");
    read(d, "train_fraction", cfg.train_fraction, "data");
    read(d, "distribution", cfg.distribution, "data");
    read(d, "n_train", cfg.n_train, "data");
    read(d, "n_val", cfg.n_val, "data");
    read(d, "n_per_class", cfg.n_per_class, "data");
    read(d, "val_per_class", cfg.val_per_class, "data");
    read(d, "noise_sd", cfg.noise_sd, "data");
  }
  if (doc.contains("optimizer")) {
    const auto& o = doc.at("optimizer");
    reject_unknown(o, "optimizer", {"lr", "weight_decay", "betas", "eps"});
    read(o, "lr", cfg.optimizer.lr, "optimizer");
    read(o, "weight_decay", cfg.optimizer.weight_decay, "optimizer");
    read(o, "eps", cfg.optimizer.eps, "optimizer");
    if (o.contains("betas")) {
      std::vector<double> betas;
      read(o, "betas", betas, "optimizer");
      if (betas.size() != 2) throw ConfigError("optimizer.betas: expected two values");
      cfg.optimizer.beta1 = betas[0];
      cfg.optimizer.beta2 = betas[1];
    }
  }
  if (doc.contains("schedule")) {
    std::string s;
    read(doc, "schedule", s, "");
    try {
      cfg.schedule = parse_schedule(s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("schedule: ") + e.what());
    }
  }
  read(doc, "batch_size", cfg.batch_size, "");
  read(doc, "eval_interval", cfg.eval_interval, "");

  if (doc.contains("stages")) {
    if (doc.contains("steps") || doc.contains("epochs"))
      throw ConfigError("steps/epochs: give either top-level steps/epochs or a stages list, not both");
    const auto& stages = doc.at("stages");
    if (!stages.is_array()) throw ConfigError("stages: expected a list");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string where = "stages[" + std::to_string(i) + "]";
      const auto& js = stages[i];
      reject_unknown(js, where, {"name", "classes", "steps", "epochs", "poison"});
      StageConfig s;
      read(js, "name", s.name, where);
      read(js, "classes", s.classes, where);
      read(js, "steps", s.steps, where);
      read(js, "epochs", s.epochs, where);
      if (js.contains("poison")) s.poison = read_poison(js.at("poison"), where + ".poison");
      cfg.stages.push_back(std::move(s));
    }
  } else {
    StageConfig s;
    s.name = "train";
    read(doc, "steps", s.steps, "");
    read(doc, "epochs", s.epochs, "");
    cfg.stages.push_back(std::move(s));
  }

  if (doc.contains("checkpoints")) {
    const auto& c = doc.at("checkpoints");
    reject_unknown(c, "checkpoints", {"steps", "log_spaced", "every", "stage_end"});
    read(c, "steps", cfg.checkpoints.steps, "checkpoints");
    read(c, "log_spaced", cfg.checkpoints.log_spaced, "checkpoints");
    read(c, "every", cfg.checkpoints.every, "checkpoints");
    read(c, "stage_end", cfg.checkpoints.stage_end, "checkpoints");
  } else if (cfg.stages.size() > 1) {
    cfg.checkpoints.stage_end = true;
  } else {
    cfg.checkpoints.log_spaced = 64;
  }
  cfg.validate();
  return cfg;
}

TaskConfig load_task_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_task_config(ss.str());
}

std::string dump_task_config(const TaskConfig& cfg) {
  json doc;
  doc["task"] = std::string(task_name(cfg.task));
  doc["seed"] = cfg.seed;
  doc["model"] = {{"embed_dim", cfg.model.embed_dim},
                  {"rank", cfg.model.rank},
                  {"bilinear_out", cfg.model.bilinear_out},
                  {"lift", cfg.model.lift},
                  {"init_scale", cfg.model.init_scale}};
  doc["data"] = {{"modulus", cfg.modulus},         {"train_fraction", cfg.train_fraction},
                 {"distribution", cfg.distribution}, {"n_train", cfg.n_train},
                 {"n_val", cfg.n_val},               {"n_per_class", cfg.n_per_class},
                 {"val_per_class", cfg.val_per_class}, {"noise_sd", cfg.noise_sd}};
  doc["optimizer"] = {{"lr", cfg.optimizer.lr},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"betas", {cfg.optimizer.beta1, cfg.optimizer.beta2}},
                      {"eps", cfg.optimizer.eps}};
  doc["schedule"] = cfg.schedule == Schedule::kCosine ? "cosine" : "constant";
  doc["batch_size"] = cfg.batch_size;
  doc["eval_interval"] = cfg.eval_interval;
  json stages = json::array();
  for (const auto& s : cfg.stages) {
    json js = {{"name", s.name}};
    if (!s.classes.empty()) js["classes"] = s.classes;
    if (s.steps > 0) js["steps"] = s.steps;
    if (s.epochs > 0) js["epochs"] = s.epochs;
    if (s.poison) {
      json trig = json::array();
      for (const auto& [c, v] : s.poison->trigger) trig.push_back({c, v});
      js["poison"] = {{"fraction", s.poison->fraction}, {"trigger", trig}, {"target", s.poison->target}};
    }
    stages.push_back(js);
  }
  doc["stages"] = stages;
  doc["checkpoints"] = {{"steps", cfg.checkpoints.steps},
                        {"log_spaced", cfg.checkpoints.log_spaced},
                        {"every", cfg.checkpoints.every},
                        {"stage_end", cfg.checkpoints.stage_end}};
  return doc.dump(2) + "\n";
}

std::vector<long> log_spaced_steps(long total, std::size_t n) {
  if (total < 0) throw DomainError("log_spaced_steps: total must be >= 0");
  std::vector<long> out{0};
  if (n <= 1 || total == 0) return out;
  const auto inner = std::min<std::size_t>(n - 1, static_cast<std::size_t>(total));
  std::vector<long> v(inner);
  for (std::size_t i = 0; i < inner; ++i) {
    const double frac = inner == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(inner - 1);
    const long geom = std::lround(std::pow(static_cast<double>(total), frac));
    v[i] = std::max(i ? v[i - 1] + 1 : 1L, geom);
  }
  for (std::size_t i = inner; i-- > 0;) {
    const long cap = total - static_cast<long>(inner - 1 - i);
    v[i] = std::min(v[i], cap);
  }
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace bilinsim
