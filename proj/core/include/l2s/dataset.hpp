#pragma once

#include <string>
#include <vector>

namespace l2s {

// One training/evaluation pair. `source` records where the target came
// from: "gt" for generator ground truth, "gen" for model-generated labels.
struct Example {
  std::string prompt;
  std::string target;
  std::string source = "gt";
};

using Dataset = std::vector<Example>;

// JSONL, one object per line: {"prompt": ..., "target": ..., "source": ...}.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace l2s
