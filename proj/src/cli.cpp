#include "bilinsim/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "bilinsim/checkpoint_io.hpp"
#include "bilinsim/config.hpp"
#include "bilinsim/errors.hpp"
#include "bilinsim/oracle.hpp"
#include "bilinsim/rng.hpp"
#include "bilinsim/simkit.hpp"
#include "bilinsim/train.hpp"
#include "json.hpp"

namespace bilinsim {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v, int digits = 17) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

unsigned thread_count() {
  const char* env = std::getenv("BILINSIM_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0) throw ConfigError("BILINSIM_THREADS: expected a non-negative integer, got '" + std::string(env) + "'");
  return static_cast<unsigned>(v);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Comma-separated rows of numbers, no header.
Matrix read_input_rows(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::vector<double>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw ConfigError("--inputs: non-numeric cell '" + cell + "'");
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows[0].size()) throw ConfigError("--inputs: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("--inputs: no rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

struct TrainArgs {
  std::string config, out;
};

struct SimArgs {
  std::string ckpts, metric = "gaussian-lifted", comparator = "tensor", out, inputs;
  std::optional<std::size_t> slice, samples;
  std::optional<std::uint64_t> seed;
};

struct DiffArgs {
  std::string a, b, c, metric = "gaussian-lifted";
};

struct DeltaArgs {
  std::string matrix;
  std::size_t split = 0;
};

struct OracleArgs {
  std::string mode, a, b;
  std::size_t samples = 1000000;
  std::uint64_t seed = 0;
  int order = 2;
  std::size_t dim = 3;
  std::size_t outputs = 0;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  const TaskConfig cfg = load_task_config(args.config);
  const fs::path dir = args.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  json manifest = {{"tool", "bilinsim"},
                   {"version", BILINSIM_VERSION},
                   {"command", "train"},
                   {"arguments", {{"config", args.config}, {"out", args.out}}},
                   {"config_path", args.config},
                   {"output_dir", args.out},
                   {"started_at", utc_now()},
                   {"config", json::parse(dump_task_config(cfg))}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  const RunResult result = run_experiment(cfg, dir);
  for (const auto& path : result.files) out << path.string() << "\n";
  err << "trained " << result.total_steps << " steps, wrote " << result.files.size() << " checkpoints\n";
  return kExitOk;
}

int cmd_sim(const SimArgs& args, std::ostream& out, std::ostream& err) {
  const MetricSpec metric = parse_metric(args.metric);
  std::vector<Checkpoint> ckpts;
  for (const auto& path : discover_checkpoints(args.ckpts)) ckpts.push_back(load_checkpoint(path));
  if (ckpts.size() < 2)
    throw ConfigError("--ckpts: need at least two ckpt_*.json files in '" + args.ckpts + "', found " +
                      std::to_string(ckpts.size()));

  Comparator comp;
  const auto& kind = args.comparator;
  auto sampler = [&]() -> InputSampler {
    if (!args.inputs.empty()) return InputSampler::fixed(read_input_rows(args.inputs));
    if (!args.samples || !args.seed) throw ConfigError("--comparator " + kind + ": requires --samples and --seed (or --inputs)");
    return InputSampler::gaussian(ckpts[0].stack.input_dim());
  };
  if (kind == "tensor") {
    comp = args.slice ? Comparator::slice_of(*args.slice) : Comparator::tensor();
  } else if (kind == "slice") {
    if (!args.slice) throw ConfigError("--comparator slice: requires --slice K");
    comp = Comparator::slice_of(*args.slice);
  } else if (kind == "matrix-cosine") {
    comp = Comparator::matrix_cosine();
  } else if (kind == "behavioural" || kind == "cka") {
    InputSampler s = sampler();
    const std::size_t n = args.samples.value_or(0);
    const std::uint64_t seed = args.seed.value_or(0);
    comp = kind == "cka" ? Comparator::cka(std::move(s), n, seed) : Comparator::behavioural(std::move(s), n, seed);
  } else {
    throw ConfigError("--comparator: unknown comparator '" + kind + "'");
  }
  if (args.slice && kind != "tensor" && kind != "slice")
    throw ConfigError("--slice: only applies to the tensor comparator");

  const SimilarityMatrix m = similarity_matrix(ckpts, metric, comp, thread_count());
  const std::string csv = to_csv(m);
  if (args.out.empty()) {
    out << csv;
  } else {
    write_file(args.out, csv);
    err << "wrote " << m.size() << "x" << m.size() << " matrix to " << args.out << "\n";
  }
  return kExitOk;
}

int cmd_diff(const DiffArgs& args, std::ostream& out, std::ostream&) {
  const MetricSpec metric = parse_metric(args.metric);
  const Checkpoint a = load_checkpoint(args.a), b = load_checkpoint(args.b), c = load_checkpoint(args.c);
  out << fmt(diff_similarity(a, b, c, metric), 12) << "\n";
  return kExitOk;
}

int cmd_delta(const DeltaArgs& args, std::ostream& out, std::ostream&) {
  const SimilarityMatrix m = parse_similarity_csv(read_file(args.matrix));
  if (args.split == 0 || args.split >= m.size())
    throw ConfigError("--split: must satisfy 0 < split < " + std::to_string(m.size()));
  out << fmt(block_delta(m, args.split), 12) << "\n";
  return kExitOk;
}

int cmd_oracle(const OracleArgs& args, std::ostream& out, std::ostream& err) {
  if (args.mode == "mc" || args.mode == "full") {
    if (args.a.empty()) throw ConfigError("--mode " + args.mode + ": requires --a");
    const Checkpoint a = load_checkpoint(args.a);
    const Checkpoint b = args.b.empty() ? a : load_checkpoint(args.b);
    if (args.mode == "mc") {
      const McEstimate est = mc_behavioural_inner(a.stack, b.stack, args.samples, args.seed);
      const double closed = gaussian_inner_lifted(a.stack, b.stack).trace();
      const double z = est.std_error > 0 ? (est.mean - closed) / est.std_error : (est.mean == closed ? 0.0 : INFINITY);
      const bool pass = std::abs(z) <= 5.0;
      out << "mean " << fmt(est.mean, 10) << "\nstderr " << fmt(est.std_error, 10) << "\nclosed_form "
          << fmt(closed, 10) << "\nz " << fmt(z, 4) << "\n"
          << (pass ? "PASS" : "FAIL") << " mc vs gaussian-lifted within 5 standard errors\n";
      return pass ? kExitOk : kExitOracleFail;
    }
    const double full = full_tensor_inner(a.stack, b.stack);
    const double gram = inner_product_sym(a.stack, b.stack).trace();
    const double rel = std::abs(full - gram) / std::max({std::abs(full), std::abs(gram), 1e-300});
    const bool pass = rel <= 1e-8;
    out << "full_tensor " << fmt(full, 17) << "\ngram_recursion " << fmt(gram, 17) << "\nrelative_error "
        << fmt(rel, 4) << "\n"
        << (pass ? "PASS" : "FAIL") << " full tensor vs Gram recursion within 1e-8 relative\n";
    return pass ? kExitOk : kExitOracleFail;
  }
  if (args.mode == "matching") {
    if (args.order < 1 || args.order > 6) throw ConfigError("--order: must lie in 1..6");
    if (args.dim < 1) throw ConfigError("--dim: must be >= 1");
    const double entries = std::pow(static_cast<double>(args.dim), args.order) *
                           static_cast<double>(std::max<std::size_t>(args.outputs, 1));
    if (entries > kMatchingGuard) throw GuardError("oracle: matching sum over " + fmt(entries, 3) + " terms exceeds 1e7");
    Shape shape;
    if (args.outputs > 0) shape.push_back(args.outputs);
    for (int i = 0; i < args.order; ++i) shape.push_back(args.dim);
    const std::size_t lead = shape.size() - static_cast<std::size_t>(args.order);
    Rng rng = make_stream("oracle-matching", args.seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    auto random_symmetric = [&] {
      DenseTensor t(shape);
      for (auto& v : t.values()) v = dist(rng);
      return symmetrise(t, lead, static_cast<std::size_t>(args.order));
    };
    const DenseTensor a = random_symmetric(), b = random_symmetric();
    const auto groups = matching_metric_terms(a, b, args.order);
    const auto coeff = gaussian_pair_coefficients(args.order).coefficients;
    double literal = 0.0;
    bool counts_ok = groups.size() == coeff.size();
    for (std::size_t m = 0; m < groups.size(); ++m) {
      literal += groups[m].sum;
      counts_ok = counts_ok && groups[m].matchings == coeff[m];
      out << "m=" << m << " matchings " << groups[m].matchings << " coefficient " << coeff[m] << " sum "
          << fmt(groups[m].sum, 12) << "\n";
    }
    const double closed = gaussian_inner_homogeneous(a, b, args.order);
    const double rel = std::abs(literal - closed) / std::max({std::abs(literal), std::abs(closed), 1e-300});
    const bool pass = counts_ok && rel <= 1e-10;
    out << "matching_sum " << fmt(literal, 17) << "\nclosed_form " << fmt(closed, 17) << "\nrelative_error "
        << fmt(rel, 4) << "\n"
        << (pass ? "PASS" : "FAIL") << " matching sum vs coefficient form (counts exact, values within 1e-10)\n";
    return pass ? kExitOk : kExitOracleFail;
  }
  err << "unknown --mode '" << args.mode << "'\n";
  return kExitConfig;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"bilinsim: weight-based functional similarity for bilinear models"};
  app.set_version_flag("--version", std::string(BILINSIM_VERSION));
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model and write checkpoints + metrics.csv");
  c_train->add_option("--config", train.config, "Task config (JSON)")->required();
  c_train->add_option("--out", train.out, "Output directory")->required();

  SimArgs sim;
  auto* c_sim = app.add_subcommand("sim", "Pairwise similarity matrix over a checkpoint directory");
  c_sim->add_option("--ckpts", sim.ckpts, "Directory with ckpt_*.json files")->required();
  c_sim->add_option("--metric", sim.metric, "sym-frobenius | gaussian-lifted | gaussian-homogeneous");
  c_sim->add_option("--comparator", sim.comparator, "tensor | slice | matrix-cosine | behavioural | cka");
  c_sim->add_option("--slice", sim.slice, "Output index for slice similarity");
  c_sim->add_option("--samples", sim.samples, "Gaussian input samples (behavioural, cka)");
  c_sim->add_option("--seed", sim.seed, "Sampling seed (behavioural, cka)");
  c_sim->add_option("--inputs", sim.inputs, "CSV of fixed input rows instead of Gaussian samples");
  c_sim->add_option("--out", sim.out, "Output CSV (default: stdout)");

  DiffArgs diff;
  auto* c_diff = app.add_subcommand("diff", "Similarity of A with the difference model B - C");
  c_diff->add_option("--a", diff.a)->required();
  c_diff->add_option("--b", diff.b)->required();
  c_diff->add_option("--c", diff.c)->required();
  c_diff->add_option("--metric", diff.metric);

  DeltaArgs delta;
  auto* c_delta = app.add_subcommand("delta", "Block delta of a similarity CSV at a split index");
  c_delta->add_option("--matrix", delta.matrix)->required();
  c_delta->add_option("--split", delta.split)->required();

  OracleArgs oracle;
  auto* c_oracle = app.add_subcommand("oracle", "Check closed forms against brute-force oracles");
  c_oracle->add_option("--mode", oracle.mode, "mc | full | matching")->required();
  c_oracle->add_option("--a", oracle.a, "Checkpoint A (mc, full)");
  c_oracle->add_option("--b", oracle.b, "Checkpoint B (default: A)");
  c_oracle->add_option("--samples", oracle.samples, "Monte Carlo samples (mc)");
  c_oracle->add_option("--seed", oracle.seed);
  c_oracle->add_option("--order", oracle.order, "Input order n (matching)");
  c_oracle->add_option("--dim", oracle.dim, "Input dimension (matching)");
  c_oracle->add_option("--outputs", oracle.outputs, "Leading output axis length, 0 for none (matching)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*c_train) return cmd_train(train, out, err);
    if (*c_sim) return cmd_sim(sim, out, err);
    if (*c_diff) return cmd_diff(diff, out, err);
    if (*c_delta) return cmd_delta(delta, out, err);
    if (*c_oracle) return cmd_oracle(oracle, out, err);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << " at step " << e.step << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ShapeError& e) {
    err << "error: incompatible models: " << e.what() << "\n";
    return kExitIncompatible;
  } catch (const UnsupportedError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUnsupported;
  } catch (const DegenerateError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const GuardError& e) {
    err << "error: " << e.what() << "\n";
    return kExitGuard;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace bilinsim
