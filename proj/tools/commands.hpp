#pragma once

// Command-line surface. Everything lives behind run() so tests can drive the
// commands in-process; main() only forwards argv.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "s4t/config.hpp"
#include "s4t/synthdata.hpp"

namespace s4t::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// One row of an ablation suite: a label and the overrides applied on top of
// the base configuration.
struct AblationRow {
  std::string name;
  std::vector<std::string> overrides;
};

std::vector<AblationRow> ablation_suite(const std::string& suite);
std::vector<std::string> ablation_suites();

// Images (and optionally labels) for one split. Without a manifest the
// synthetic benchmark for cfg.data_seed is generated in memory.
struct SplitData {
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;
};

enum class Split { source, target, eval };

// `sorted` orders manifest entries by image path (evaluation protocol).
SplitData load_split(const Config& cfg, Split split, bool with_labels, bool sorted);

SceneSpec scene_spec();

}  // namespace s4t::cli
