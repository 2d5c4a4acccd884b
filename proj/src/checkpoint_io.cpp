#include "bilinsim/checkpoint_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bilinsim/errors.hpp"
#include "json.hpp"

namespace bilinsim {

namespace {

using nlohmann::json;

void write_string(std::string& out, std::string_view s) { out += json(std::string(s)).dump(); }

void write_matrix(std::string& out, const Matrix& m) {
  out += '[';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += ',';
    out += '[';
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_real(m(i, j));
    }
    out += ']';
  }
  out += ']';
}

// `cols_if_empty` fills in the column count for a matrix with zero rows,
// which the nested-list form cannot carry.
Matrix read_matrix(const json& j, const char* name, Eigen::Index cols_if_empty) {
  if (!j.is_array()) throw ConfigError(std::string("checkpoint: field '") + name + "' must be a list of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, cols_if_empty);
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ShapeError(std::string("checkpoint: ragged matrix '") + name + "'");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(std::string("checkpoint: non-numeric entry in '") + name + "'");
      m(i, c) = v.get<double>();
    }
  }
  return m;
}

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string serialise_checkpoint(const Checkpoint& ckpt) {
  validate(ckpt.meta);
  std::string out;
  out += "{\"format\":";
  write_string(out, kCheckpointFormat);
  out += ",\n\"meta\":{\"task\":";
  write_string(out, ckpt.meta.task);
  out += ",\"stage\":";
  write_string(out, ckpt.meta.stage);
  out += ",\"step\":" + std::to_string(ckpt.meta.step);
  out += ",\"seed\":" + std::to_string(ckpt.meta.seed) + "},\n";
  out += "\"input_dim\":" + std::to_string(ckpt.stack.input_dim()) + ",\n\"layers\":[";
  bool first = true;
  for (const auto& layer : ckpt.stack.layers()) {
    out += first ? "\n" : ",\n";
    first = false;
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      out += "{\"kind\":\"linear\",\"w\":";
      write_matrix(out, lin->w);
      out += '}';
    } else {
      const auto& b = std::get<BilinearLayer>(layer);
      out += "{\"kind\":\"bilinear\",\"lift\":";
      out += b.lift ? "true" : "false";
      out += ",\"l\":";
      write_matrix(out, b.l);
      out += ",\"r\":";
      write_matrix(out, b.r);
      out += ",\"d\":";
      write_matrix(out, b.d);
      out += '}';
    }
  }
  out += "\n]}\n";
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint: malformed document: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat)
      throw ConfigError("checkpoint: unsupported format '" + doc.at("format").get<std::string>() + "'");
    CheckpointMeta meta;
    const auto& m = doc.at("meta");
    meta.task = m.at("task").get<std::string>();
    meta.stage = m.at("stage").get<std::string>();
    meta.step = m.at("step").get<long>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    validate(meta);

    const auto input_dim = doc.at("input_dim").get<std::size_t>();
    std::vector<Layer> layers;
    auto cur = static_cast<Eigen::Index>(input_dim);
    for (const auto& jl : doc.at("layers")) {
      const auto kind = jl.at("kind").get<std::string>();
      if (kind == "linear") {
        LinearLayer lin{read_matrix(jl.at("w"), "w", cur)};
        cur = lin.w.rows();
        layers.emplace_back(std::move(lin));
      } else if (kind == "bilinear") {
        BilinearLayer b;
        b.lift = jl.at("lift").get<bool>();
        const Eigen::Index in = cur + (b.lift ? 1 : 0);
        b.l = read_matrix(jl.at("l"), "l", in);
        b.r = read_matrix(jl.at("r"), "r", in);
        b.d = read_matrix(jl.at("d"), "d", b.l.rows());
        cur = b.d.rows();
        layers.emplace_back(std::move(b));
      } else {
        throw ConfigError("checkpoint: unknown layer kind '" + kind + "'");
      }
    }
    return Checkpoint{ModelStack(input_dim, std::move(layers)), std::move(meta)};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string text = serialise_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

std::string checkpoint_filename(const CheckpointMeta& meta) {
  validate(meta);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08ld", meta.step);
  return "ckpt_" + meta.stage + "_" + buf + ".json";
}

std::vector<std::filesystem::path> discover_checkpoints(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.starts_with("ckpt_") && name.ends_with(".json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return out;
}

}  // namespace bilinsim
