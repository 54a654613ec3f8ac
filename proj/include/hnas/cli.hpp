#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hnas/controller.hpp"
#include "hnas/evaluator.hpp"

namespace hnas {

// Every setting a command can read. Values come from defaults, then a
// key = value config file, then HNAS_SEED / HNAS_WORKERS, then flags.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  // search
  std::size_t num_samples = 64;
  double target_macs = 550e6;
  double alpha = -0.07;
  RewardForm reward_form = RewardForm::penalize_excess;
  std::size_t topk = 5;
  std::size_t batch = 16;
  PpoConfig ppo;
  PolicyConfig policy;
  bool record_wall_time = false;

  // proxy training and data
  ProxyConfig proxy;
  std::string dataset = "synth";  // "synth" or a path
  DatasetFormat dataset_format = DatasetFormat::idx;
  std::string labels_path;
  double validation_fraction = 0.2;
  std::size_t synth_samples = 800;
  std::size_t synth_grid = 32;
  std::size_t synth_classes = 4;

  // cost and scaling
  std::string skeleton = "reference";  // skeleton a genome file resolves on: reference | proxy
  std::optional<std::size_t> resolution;  // unset keeps the plan's own resolution
  bool count_norms = false;
  ScalingCoefficients scaling;
  double phi = 1.0;

  std::string out_dir = "hnas_out";

  // Applies one key = value pair; throws ConfigError on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  // Throws ConfigError when a value is outside its valid range.
  void validate() const;
  // Canonical key = value text covering every key; reloading it reproduces this config.
  std::string to_text() const;

  SearchConfig search_config() const;
  BaseSkeleton genome_skeleton() const;
};

std::vector<std::string> config_keys();
// Parses key = value lines; '#' starts a comment. Errors name the line.
void apply_config_text(RunConfig& config, std::string_view text, const std::string& origin);

// Loads the proxy dataset the config points at (synthetic or on disk).
Dataset load_configured_dataset(const RunConfig& config);

// A genome or plan file: genomes resolve on `skeleton`, plans are used as-is.
struct ArchitectureFile {
  std::optional<Genome> genome;
  NetworkPlan plan;
};
ArchitectureFile read_architecture(const std::string& path, const BaseSkeleton& skeleton);

using EnvLookup = std::function<std::optional<std::string>(const char* name)>;

// Entry point of the hnas tool. Returns the process exit status:
// 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env);

}  // namespace hnas
