#pragma once

#include <string>
#include <utility>
#include <vector>

#include "taxlink/linalg.hpp"

namespace taxlink {

// Versioned container for named parameter tensors plus the configuration
// that produced them. Values are serialized as C hexfloats, so save/load
// round-trips are bit-exact and identical runs write identical bytes.
struct Checkpoint {
  std::string task;  // ner | el | mtl
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(const std::string& name, const Matrix& tensor);
  const Matrix& tensor(const std::string& name) const;  // LookupError on miss
  bool has(const std::string& name) const;
  std::string config_value(const std::string& key) const;  // LookupError on miss
  bool has_config(const std::string& key) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace taxlink
