#pragma once

#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cebench {

struct JsonlFile {
  std::vector<nlohmann::json> rows;
  std::size_t torn_lines = 0;  // unparseable final line dropped on reload
};

// Reads a JSONL file. A torn (unparseable) final line is dropped with a
// warning; corruption anywhere else is an error.
inline JsonlFile read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open jsonl file: " + path);
  JsonlFile out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t last_bad = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (last_bad) {
        throw std::runtime_error(path + ":" + std::to_string(last_bad) +
                                 ": corrupt jsonl line");
      }
      last_bad = lineno;
      continue;
    }
    if (last_bad) {
      throw std::runtime_error(path + ":" + std::to_string(last_bad) +
                               ": corrupt jsonl line");
    }
    out.rows.push_back(std::move(j));
  }
  if (last_bad) {
    std::cerr << "warning: " << path << ": dropping torn final line "
              << last_bad << "\n";
    out.torn_lines = 1;
  }
  return out;
}

}  // namespace cebench
