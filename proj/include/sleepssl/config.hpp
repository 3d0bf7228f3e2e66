#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sleepssl/harness.hpp"

namespace sleepssl::harness {

// Run-file parser: [section] headers with key = value lines, '#' comments,
// optional quotes around strings. Grid fields (algorithms, label_fractions)
// accept comma-separated lists.
struct RunFile {
  ExperimentConfig base;
  std::vector<Algorithm> algorithms;     // grid axis; falls back to base.algorithm
  std::vector<double> label_fractions;   // grid axis; falls back to base.label_fraction
  std::string results_path = "results.jsonl";
  std::string work_dir = "work";
};

RunFile parse_run_file(const std::filesystem::path& path);

// Expands the grid axes into fully resolved configs (te resolved, model
// validated), in deterministic order.
std::vector<ExperimentConfig> expand_grid(const RunFile& rf);

}  // namespace sleepssl::harness
