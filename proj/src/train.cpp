#include "bilinsim/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "bilinsim/checkpoint_io.hpp"
#include "bilinsim/errors.hpp"
#include "bilinsim/rng.hpp"

namespace bilinsim {

namespace {

Matrix lift_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw ShapeError("labels: expected " + std::to_string(rows) + ", got " + std::to_string(labels.size()));
  for (int y : labels)
    if (y < 0 || y >= classes) throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

// Row-wise log-softmax.
Matrix log_softmax(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

struct TaskData {
  Dataset train;
  Dataset val;
};

std::size_t input_dim_of(const TaskConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::kModAdd:
      return 2 * static_cast<std::size_t>(cfg.modulus);
    case TaskKind::kSecondArgmax:
      return 4;
    case TaskKind::kStagedDigits:
      return kDigitDim;
  }
  return 0;
}

std::size_t classes_of(const TaskConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::kModAdd:
      return static_cast<std::size_t>(cfg.modulus);
    case TaskKind::kSecondArgmax:
      return 4;
    case TaskKind::kStagedDigits:
      return kDigitClasses;
  }
  return 0;
}

std::vector<int> stage_classes(const StageConfig& s) {
  if (!s.classes.empty()) return s.classes;
  std::vector<int> all(kDigitClasses);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

TaskData stage_data(const TaskConfig& cfg, std::size_t stage_index) {
  const std::uint64_t val_seed = splitmix64(cfg.seed ^ 0x76616c5f73706c74ULL);
  switch (cfg.task) {
    case TaskKind::kModAdd: {
      auto split = gen_modadd(cfg.modulus, cfg.seed, cfg.train_fraction);
      return {std::move(split.train), std::move(split.val)};
    }
    case TaskKind::kSecondArgmax:
      return {gen_second_argmax(cfg.distribution, cfg.n_train, cfg.seed),
              gen_second_argmax(cfg.distribution, cfg.n_val, val_seed)};
    case TaskKind::kStagedDigits: {
      const auto& stage = cfg.stages[stage_index];
      const auto classes = stage_classes(stage);
      TaskData d{gen_staged_digits(classes, cfg.n_per_class, cfg.seed, cfg.noise_sd),
                 gen_staged_digits(classes, cfg.val_per_class, val_seed, cfg.noise_sd)};
      if (stage.poison) d.train = poison(d.train, *stage.poison, cfg.seed + stage_index);
      return d;
    }
  }
  throw DomainError("unknown task");
}

std::string format10(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  if (logits.rows() == 0) throw DomainError("cross_entropy: empty batch");
  const Matrix lp = log_softmax(logits);
  double total = 0.0;
  for (Eigen::Index i = 0; i < lp.rows(); ++i) total -= lp(i, labels[static_cast<std::size_t>(i)]);
  return total / static_cast<double>(lp.rows());
}

Gradients grad(const ModelStack& stack, const Matrix& x, std::span<const int> labels) {
  if (static_cast<std::size_t>(x.cols()) != stack.input_dim())
    throw ShapeError("grad: input width " + std::to_string(x.cols()) + " does not match stack input_dim " +
                     std::to_string(stack.input_dim()));
  if (x.rows() == 0) throw DomainError("grad: empty batch");
  check_labels(labels, x.rows(), static_cast<Eigen::Index>(stack.output_dim()));
  const auto& layers = stack.layers();

  // Forward pass, caching each layer's (lifted) input and bilinear factors.
  std::vector<Matrix> inputs, us, vs;
  Matrix h = x;
  for (const auto& layer : layers) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      inputs.push_back(h);
      us.emplace_back();
      vs.emplace_back();
      h = h * lin->w.transpose();
    } else {
      const auto& b = std::get<BilinearLayer>(layer);
      Matrix xt = b.lift ? lift_rows(h) : h;
      Matrix u = xt * b.l.transpose(), v = xt * b.r.transpose();
      h = u.cwiseProduct(v) * b.d.transpose();
      inputs.push_back(std::move(xt));
      us.push_back(std::move(u));
      vs.push_back(std::move(v));
    }
  }

  const double n = static_cast<double>(x.rows());
  const Matrix lp = log_softmax(h);
  Gradients out;
  out.loss = 0.0;
  Matrix g = lp.array().exp();  // softmax
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    out.loss -= lp(i, y);
    g(i, y) -= 1.0;
  }
  out.loss /= n;
  g /= n;

  out.layers.resize(layers.size());
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (const auto* lin = std::get_if<LinearLayer>(&layers[i])) {
      out.layers[i] = LinearLayer{g.transpose() * inputs[i]};
      if (i) g = g * lin->w;
    } else {
      const auto& b = std::get<BilinearLayer>(layers[i]);
      BilinearLayer db;
      db.lift = b.lift;
      db.d = g.transpose() * us[i].cwiseProduct(vs[i]);
      const Matrix gh = g * b.d;
      const Matrix gl = gh.cwiseProduct(vs[i]), gr = gh.cwiseProduct(us[i]);
      db.l = gl.transpose() * inputs[i];
      db.r = gr.transpose() * inputs[i];
      if (i) {
        Matrix gx = gl * b.l + gr * b.r;
        g = b.lift ? Matrix(gx.rightCols(gx.cols() - 1)) : gx;
      }
      out.layers[i] = std::move(db);
    }
  }
  return out;
}

ModelStack init_model(const ModelConfig& cfg, std::size_t input_dim, std::size_t classes, std::uint64_t seed) {
  Rng rng = make_stream("init", seed);
  const double s = cfg.init_scale;
  auto sd = [&](std::size_t fan_in) { return s / std::sqrt(static_cast<double>(fan_in)); };
  std::vector<Layer> layers;
  std::size_t cur = input_dim;
  if (cfg.embed_dim > 0) {
    layers.emplace_back(LinearLayer{gaussian_matrix(static_cast<Eigen::Index>(cfg.embed_dim),
                                                    static_cast<Eigen::Index>(cur), sd(cur), rng)});
    cur = cfg.embed_dim;
  }
  const std::size_t in = cur + (cfg.lift ? 1 : 0);
  const std::size_t out = cfg.bilinear_out > 0 ? cfg.bilinear_out : classes;
  const auto r = static_cast<Eigen::Index>(cfg.rank);
  BilinearLayer b;
  b.lift = cfg.lift;
  b.l = gaussian_matrix(r, static_cast<Eigen::Index>(in), sd(in), rng);
  b.r = gaussian_matrix(r, static_cast<Eigen::Index>(in), sd(in), rng);
  b.d = gaussian_matrix(static_cast<Eigen::Index>(out), r, sd(cfg.rank), rng);
  layers.emplace_back(std::move(b));
  if (cfg.bilinear_out > 0)
    layers.emplace_back(LinearLayer{gaussian_matrix(static_cast<Eigen::Index>(classes),
                                                    static_cast<Eigen::Index>(out), sd(out), rng)});
  return ModelStack(input_dim, std::move(layers));
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,split,loss,accuracy,attack_success\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + r.split + "," + format10(r.loss) + "," + format10(r.accuracy) + ",";
    if (r.attack_success) out += format10(*r.attack_success);
    out += "\n";
  }
  return out;
}

RunResult run_experiment(const TaskConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
  }
  const std::size_t input_dim = input_dim_of(cfg), classes = classes_of(cfg);

  // Stage lengths in optimiser steps.
  std::vector<TaskData> data;
  std::vector<long> stage_steps, stage_end;
  long total = 0;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    data.push_back(stage_data(cfg, s));
    const auto n = static_cast<long>(data.back().train.size());
    const long per_epoch = (n + static_cast<long>(cfg.batch_size) - 1) / static_cast<long>(cfg.batch_size);
    const long steps = cfg.stages[s].steps > 0 ? cfg.stages[s].steps : cfg.stages[s].epochs * per_epoch;
    stage_steps.push_back(steps);
    total += steps;
    stage_end.push_back(total);
  }

  std::set<long> ckpt_steps(cfg.checkpoints.steps.begin(), cfg.checkpoints.steps.end());
  if (cfg.checkpoints.log_spaced > 0)
    for (long s : log_spaced_steps(total, cfg.checkpoints.log_spaced)) ckpt_steps.insert(s);
  if (cfg.checkpoints.every > 0)
    for (long s = 0; s <= total; s += cfg.checkpoints.every) ckpt_steps.insert(s);
  if (cfg.checkpoints.stage_end)
    for (long s : stage_end) ckpt_steps.insert(s);
  if (!ckpt_steps.empty() && *ckpt_steps.rbegin() > total)
    throw ConfigError("checkpoints.steps: step " + std::to_string(*ckpt_steps.rbegin()) +
                      " is past the end of training (" + std::to_string(total) + ")");

  // The first poison spec drives attack-success logging for every row.
  std::optional<PoisonSpec> asr_spec;
  for (const auto& s : cfg.stages)
    if (s.poison && !asr_spec) asr_spec = s.poison;

  std::vector<Layer> params = init_model(cfg.model, input_dim, classes, cfg.seed).release();
  OptimState state = OptimState::zeros_like(params);
  RunResult result;
  result.total_steps = total;

  auto evaluate = [&](long step, const ModelStack& stack, const TaskData& d) {
    for (const auto* split : {&d.train, &d.val}) {
      MetricRow row;
      row.step = step;
      row.split = split == &d.train ? "train" : "val";
      row.loss = cross_entropy(forward_batch(stack, split->x), split->y);
      row.accuracy = accuracy(stack, *split);
      if (asr_spec && split == &d.val) row.attack_success = attack_success_rate(stack, *split, *asr_spec);
      result.metrics.push_back(std::move(row));
    }
  };
  auto emit = [&](long step, std::size_t stage, const ModelStack& stack) {
    Checkpoint ckpt{stack, {std::string(task_name(cfg.task)), cfg.stages[stage].name, step, cfg.seed}};
    if (!out_dir.empty()) {
      const auto path = out_dir / checkpoint_filename(ckpt.meta);
      save_checkpoint(path, ckpt);
      result.files.push_back(path);
    }
    result.checkpoints.push_back(std::move(ckpt));
  };

  long step = 0;
  {
    const ModelStack stack(input_dim, params);
    evaluate(0, stack, data[0]);
    if (ckpt_steps.count(0)) emit(0, 0, stack);
  }
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const Dataset& train = data[s].train;
    Rng rng = make_stream("batches:" + cfg.stages[s].name, cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::size_t cursor = order.size();
    const std::size_t batch = std::min(cfg.batch_size, train.size());
    Matrix xb(static_cast<Eigen::Index>(batch), train.x.cols());
    std::vector<int> yb(batch);

    for (long local = 0; local < stage_steps[s]; ++local) {
      for (std::size_t i = 0; i < batch; ++i) {
        if (cursor == order.size()) {
          std::iota(order.begin(), order.end(), 0);
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const std::size_t idx = order[cursor++];
        xb.row(static_cast<Eigen::Index>(i)) = train.x.row(static_cast<Eigen::Index>(idx));
        yb[i] = train.y[idx];
      }
      Gradients g = grad(ModelStack(input_dim, params), xb, yb);
      if (!std::isfinite(g.loss)) throw DivergenceError("training diverged: non-finite loss", step + 1);
      AdamParams p = cfg.optimizer;
      p.lr = lr_schedule(cfg.schedule, local, stage_steps[s], cfg.optimizer.lr);
      try {
        adamw_step(params, g.layers, state, p);
      } catch (const DomainError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what(), step + 1);
      }
      ++step;
      const bool ckpt = ckpt_steps.count(step) > 0;
      if (ckpt || step % cfg.eval_interval == 0 || step == total) {
        bool finite = true;
        for_each_matrix_pair(params, params, [&](Matrix& w, const Matrix&) { finite = finite && w.allFinite(); });
        if (!finite) throw DivergenceError("training diverged: non-finite parameters", step);
        const ModelStack stack(input_dim, params);
        evaluate(step, stack, data[s]);
        if (ckpt) emit(step, s, stack);
      }
    }
  }

  if (!out_dir.empty()) {
    const auto path = out_dir / "metrics.csv";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f << metrics_csv(result.metrics);
    if (!f) throw IoError("failed writing '" + path.string() + "'");
  }
  return result;
}

}  // namespace bilinsim
