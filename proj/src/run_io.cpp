#include "elicit/run_io.hpp"

#include <algorithm>
#include <fstream>

#include "elicit/oracle.hpp"

namespace elicit {

using json = nlohmann::ordered_json;

void save_run(ReplicationResult& result, const std::filesystem::path& dir, const json& manifest) {
  std::filesystem::create_directories(dir);
  result.trajectory.write_csv(dir / kTrajectoryFile);
  if (result.flow) {
    result.flow->save(dir / kCheckpointFile);
    result.checkpoint = dir / kCheckpointFile;
  }
  json j;
  j["seed"] = result.seed;
  j["final_loss"] = result.final_loss;
  j["checkpoint"] = result.flow ? kCheckpointFile : "";
  j["statistics"] = statistics_to_json(result.final_statistics);
  j["manifest"] = manifest;
  std::ofstream os(dir / kResultFile);
  if (!os) throw std::runtime_error("cannot write " + (dir / kResultFile).string());
  os << j.dump(2) << '\n';
}

ReplicationResult load_run(const std::filesystem::path& dir, bool load_flow) {
  ReplicationResult r;
  try {
    std::ifstream is(dir / kResultFile);
    if (!is) throw std::runtime_error("missing " + std::string(kResultFile));
    const json j = json::parse(is);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.final_loss = j.at("final_loss").get<double>();
    r.final_statistics = statistics_from_json(j.at("statistics"), Side::model);
    r.trajectory = TrainingTrajectory::read_csv(dir / kTrajectoryFile);
    const std::string ckpt = j.at("checkpoint").get<std::string>();
    if (!ckpt.empty()) r.checkpoint = dir / ckpt;
    if (load_flow) {
      if (ckpt.empty()) throw std::runtime_error("no checkpoint recorded");
      r.flow = std::make_shared<const JointPriorFlow>(JointPriorFlow::load(r.checkpoint));
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("run " + dir.string() + ": " + e.what());
  }
  return r;
}

std::vector<std::filesystem::path> list_run_dirs(const std::filesystem::path& study_dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(study_dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(study_dir)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / kResultFile)) {
      out.push_back(entry.path());
    }
  }
  auto key = [](const std::filesystem::path& p) {
    const std::string name = p.filename().string();
    const bool numeric = !name.empty() && std::all_of(name.begin(), name.end(), ::isdigit);
    return std::make_pair(numeric ? std::stoull(name) : ~0ULL, name);
  };
  std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  return out;
}

}  // namespace elicit
