#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ssilab/dynamics.hpp"

namespace ssilab::cli {

/// Exit status when an input file is missing.
inline constexpr int kExitNotFound = 2;
/// Exit status for every other failure.
inline constexpr int kExitFailure = 1;

struct ManifestCheckpoint {
  std::int64_t tokens = 0;
  /// Exactly one of dump / ssi_csv is set.
  std::optional<std::filesystem::path> dump;
  std::optional<std::filesystem::path> ssi_csv;
  std::optional<std::filesystem::path> logprobs;
};

/// One training run: where its per-checkpoint dumps and sidecars live.
struct RunManifest {
  std::string run_id;
  std::string model_family;
  std::int64_t seed = 0;
  std::vector<ManifestCheckpoint> checkpoints;
};

/// Relative paths resolve against the manifest's directory. Throws
/// NotFoundError for any referenced file that does not exist.
RunManifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const RunManifest& manifest);

struct TrajectoryOptions {
  SsiOptions ssi;
  DeltaPolicy policy = DeltaPolicy::kNormalizeThenSubtract;
};

Trajectory load_trajectory(const RunManifest& manifest, const TrajectoryOptions& options);

/// Runs one command line. Diagnostics go to `err`, reports to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ssilab::cli
