#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sdelab/systems.hpp"

namespace sdelab {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_criterion_failed = 1, exit_config_error = 2, exit_runtime_error = 3 };

const std::vector<std::string>& experiment_kinds();

struct RunOverrides {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

struct RunOutcome {
  int exit_code = exit_ok;
  std::string message;
  std::filesystem::path output_dir;
  std::vector<std::string> outputs;  // file names written into output_dir
};

// Parses and validates the whole config, then runs the experiment and writes
// CSVs, summary.json and summary.txt. Never throws; errors map to exit codes.
RunOutcome run_config_text(const std::string& json_text, const RunOverrides& overrides, std::ostream& log);
RunOutcome run_config_file(const std::filesystem::path& path, const RunOverrides& overrides, std::ostream& log);

// Built-ins plus the "systems" entries of an optional config document.
SystemRegistry registry_from_config_text(const std::string& json_text);

// One line per system: name, dimensions, description.
std::vector<std::string> describe_systems(const SystemRegistry& registry);

}  // namespace sdelab
