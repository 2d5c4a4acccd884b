#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bilinsim/config.hpp"
#include "bilinsim/model.hpp"

namespace bilinsim {

// Gradients of the mean softmax cross-entropy, laid out like the stack's
// layers (a LinearLayer holds dW, a BilinearLayer holds dL, dR, dD).
struct Gradients {
  std::vector<Layer> layers;
  double loss = 0.0;
};

double cross_entropy(const Matrix& logits, std::span<const int> labels);

Gradients grad(const ModelStack& stack, const Matrix& x, std::span<const int> labels);

ModelStack init_model(const ModelConfig& cfg, std::size_t input_dim, std::size_t classes, std::uint64_t seed);

struct MetricRow {
  long step = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> attack_success;
};

std::string metrics_csv(const std::vector<MetricRow>& rows);

struct RunResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<std::filesystem::path> files;  // empty when no output dir was given
  std::vector<MetricRow> metrics;
  long total_steps = 0;
};

// Trains per `cfg`. With a nonempty `out_dir`, writes one checkpoint file per
// scheduled step plus metrics.csv. Deterministic for a fixed config. Throws
// DivergenceError (carrying the step) on a non-finite loss.
RunResult run_experiment(const TaskConfig& cfg, const std::filesystem::path& out_dir = {});

}  // namespace bilinsim
