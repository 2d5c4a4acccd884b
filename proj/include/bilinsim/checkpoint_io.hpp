#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bilinsim/model.hpp"

namespace bilinsim {

inline constexpr std::string_view kCheckpointFormat = "bilinsim-ckpt-v1";

// JSON document:
//   {"format":"bilinsim-ckpt-v1",
//    "meta":{"task":..,"stage":..,"step":..,"seed":..},
//    "input_dim":d,
//    "layers":[{"kind":"linear","w":[[..]]} |
//              {"kind":"bilinear","lift":true,"l":[[..]],"r":[[..]],"d":[[..]]}]}
// Reals are printed with 17 significant digits so a save/load cycle is exact,
// and the writer is deterministic (fixed key order, no whitespace variation).
std::string serialise_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "ckpt_<stage>_<step:08>.json"
std::string checkpoint_filename(const CheckpointMeta& meta);

// Files matching ckpt_*.json in `dir`, in lexicographic filename order.
std::vector<std::filesystem::path> discover_checkpoints(const std::filesystem::path& dir);

// 17-significant-digit decimal form used by every writer in the project.
std::string format_real(double v);

}  // namespace bilinsim
