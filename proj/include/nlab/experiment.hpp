#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nlab {

/// Ordered key=value verdict record written to the `summary` artifact.
class Summary {
 public:
  void add(std::string key, std::string value) { entries_.emplace_back(std::move(key), std::move(value)); }
  void add(std::string key, double value);
  void add(std::string key, bool value) { add(std::move(key), std::string(value ? "true" : "false")); }
  void add(std::string key, const char* value) { add(std::move(key), std::string(value)); }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::optional<std::string> get(const std::string& key) const;
  /// True iff every key ending in "_pass" is "true".
  bool all_pass() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

struct RunOverrides {
  std::optional<std::filesystem::path> output;
  std::optional<std::uint64_t> seed;
};

/// Exit codes of `run`.
inline constexpr int kExitPass = 0;
inline constexpr int kExitVerdictFailed = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitNumerical = 3;

struct RunResult {
  int exit_code = kExitPass;
  Summary summary;
  std::string error;  ///< "<ErrorKind>: message" when the run was aborted
  std::filesystem::path output;
};

/// Parses a JSON experiment description, executes its pipeline and writes the
/// artifacts (CSV files and `summary`) into the output directory.
RunResult run_experiment_text(const std::string& json_text, const RunOverrides& overrides = {});
RunResult run_experiment_file(const std::filesystem::path& config, const RunOverrides& overrides = {});

/// Catalog keys with their parameter schemas. Stable byte for byte.
std::string catalog_listing();

}  // namespace nlab
