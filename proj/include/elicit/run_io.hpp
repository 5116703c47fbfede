#pragma once

// Run directory layout: <dir>/trajectory.csv, <dir>/result.json and
// <dir>/checkpoint.flow. The plotting scripts read these fixed names.

#include <filesystem>
#include <vector>

#include "elicit/trainer.hpp"
#include "json.hpp"

namespace elicit {

inline constexpr const char* kTrajectoryFile = "trajectory.csv";
inline constexpr const char* kResultFile = "result.json";
inline constexpr const char* kCheckpointFile = "checkpoint.flow";

// result.json: {"seed", "final_loss", "checkpoint", "statistics", "manifest"}.
// The checkpoint path is stored relative to the run directory.
void save_run(ReplicationResult& result, const std::filesystem::path& dir,
              const nlohmann::ordered_json& manifest = nlohmann::ordered_json::object());

// Throws std::runtime_error naming the directory when a file is missing or
// malformed. The flow is only read when load_flow is set.
ReplicationResult load_run(const std::filesystem::path& dir, bool load_flow = true);

// Immediate subdirectories holding a result.json, ordered by numeric name
// where possible.
std::vector<std::filesystem::path> list_run_dirs(const std::filesystem::path& study_dir);

}  // namespace elicit
