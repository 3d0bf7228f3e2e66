#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sleepssl/harness.hpp"

namespace sleepssl::harness {

enum class Layout { Table2, Fig2Curve, Fig3Bars, Table3 };
Layout layout_from_string(const std::string& s);

// Emits CSV (plus an SVG plot for the figure layouts) into out_dir. Pure
// function of the stored results: re-emission is byte-identical. Throws when
// results mix datasets.
void aggregate_report(const std::vector<RunResult>& results, Layout layout,
                      const std::filesystem::path& out_dir);

}  // namespace sleepssl::harness
