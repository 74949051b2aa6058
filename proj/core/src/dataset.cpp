#include "l2s/dataset.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "l2s/error.hpp"

namespace l2s {

using ordered_json = nlohmann::ordered_json;

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  for (const Example& ex : ds) {
    ordered_json j = {{"prompt", ex.prompt}, {"target", ex.target}, {"source", ex.source}};
    // Untrained models can emit byte sequences that are not valid UTF-8;
    // those code units are replaced rather than rejected. Task text is
    // ASCII, so real datasets round-trip losslessly.
    f << j.dump(-1, ' ', false, ordered_json::error_handler_t::replace) << "\n";
  }
  if (!f) throw IoError("short write to '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  Dataset ds;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed JSON line");
    Example ex;
    ex.prompt = j.at("prompt").get<std::string>();
    ex.target = j.at("target").get<std::string>();
    ex.source = j.value("source", "gt");
    ds.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace l2s
