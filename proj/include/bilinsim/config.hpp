#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bilinsim/data.hpp"
#include "bilinsim/optim.hpp"

namespace bilinsim {

enum class TaskKind { kModAdd, kSecondArgmax, kStagedDigits };

TaskKind parse_task(std::string_view name);
std::string_view task_name(TaskKind kind);

// embed (optional) -> bilinear -> unembed (optional).
struct ModelConfig {
  std::size_t embed_dim = 0;     // 0: no embedding layer
  std::size_t rank = 32;
  std::size_t bilinear_out = 0;  // 0: the bilinear layer emits class logits directly
  bool lift = false;
  double init_scale = 1.0;
};

struct StageConfig {
  std::string name;
  std::vector<int> classes;  // staged-digits only; empty means all
  long steps = 0;            // exactly one of steps / epochs is positive
  long epochs = 0;
  std::optional<PoisonSpec> poison;
};

struct CheckpointSchedule {
  std::vector<long> steps;  // explicit global steps
  std::size_t log_spaced = 0;
  long every = 0;
  bool stage_end = false;
};

struct TaskConfig {
  TaskKind task = TaskKind::kModAdd;
  std::uint64_t seed = 0;
  ModelConfig model;

  // Task parameters.
  int modulus = 23;
  double train_fraction = 0.6;
  std::string distribution = "gaussian";
  std::size_t n_train = 16384;
  std::size_t n_val = 4096;
  std::size_t n_per_class = 500;
  std::size_t val_per_class = 200;
  double noise_sd = 0.25;

  AdamParams optimizer;
  Schedule schedule = Schedule::kConstant;
  std::size_t batch_size = 512;
  std::vector<StageConfig> stages;
  long eval_interval = 100;
  CheckpointSchedule checkpoints;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Documents mirror TaskConfig; see README for the field list. Unknown keys
// are rejected so typos surface as errors.
TaskConfig parse_task_config(std::string_view json_text);
TaskConfig load_task_config(const std::filesystem::path& path);
std::string dump_task_config(const TaskConfig& cfg);

// n distinct integer steps in [0, total], roughly geometric, always
// including 0 and total.
std::vector<long> log_spaced_steps(long total, std::size_t n);

}  // namespace bilinsim
