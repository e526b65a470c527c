#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hallucdet/pipeline.hpp"
#include "hallucdet/synthworld.hpp"

namespace hallucdet {

/// Everything one experiment needs; an empty config file runs the default
/// benchmark.
struct ExperimentConfig {
  WorldConfig world;
  TrainConfig train;
  std::vector<std::uint64_t> seeds;  // empty -> 1..20
  std::string out_dir = "runs";

  std::vector<std::uint64_t> effective_seeds() const;
};

/// Parses the sectioned key=value format:
///
///   # comment
///   [world]
///   feature_dim = 32
///   [train]
///   m = 20
///   [run]
///   seeds = 1,2,3
///
/// Unknown sections or keys are hard errors, as are malformed values; line
/// numbers are reported.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Full echo of every field in the same file format; parsing the result
/// reproduces the config exactly.
std::string serialize_experiment_config(const ExperimentConfig& config);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace hallucdet
