#include "taxlink/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "taxlink/errors.hpp"

namespace taxlink {

namespace {
constexpr const char* kMagic = "taxlink-checkpoint 1";
}

void Checkpoint::add(const std::string& name, const Matrix& tensor) {
  tensors.emplace_back(name, tensor);
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [key, value] : tensors) {
    if (key == name) return value;
  }
  throw LookupError("checkpoint: no tensor named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [key, value] : tensors) {
    if (key == name) return true;
  }
  return false;
}

std::string Checkpoint::config_value(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw LookupError("checkpoint: no config key '" + key + "'");
}

bool Checkpoint::has_config(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return true;
  }
  return false;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("checkpoint: cannot write " + path);
  out << kMagic << '\n';
  out << "task " << task << '\n';
  out << "config " << config.size() << '\n';
  for (const auto& [key, value] : config) out << key << '\t' << value << '\n';
  char buf[48];
  for (const auto& [name, tensor] : tensors) {
    out << "tensor " << name << ' ' << tensor.rows() << ' ' << tensor.cols() << '\n';
    for (Index r = 0; r < tensor.rows(); ++r) {
      for (Index c = 0; c < tensor.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%a", tensor(r, c));
        if (c) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  }
  out << "end\n";
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw ParseError("checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  if (!std::getline(in, line) || line.rfind("task ", 0) != 0) {
    throw ParseError("checkpoint: missing task line");
  }
  ckpt.task = line.substr(5);
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) {
    throw ParseError("checkpoint: missing config header");
  }
  const int config_count = std::atoi(line.c_str() + 7);
  for (int i = 0; i < config_count; ++i) {
    if (!std::getline(in, line)) throw ParseError("checkpoint: truncated config");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("checkpoint: bad config line '" + line + "'");
    ckpt.config.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  while (std::getline(in, line)) {
    if (line == "end") return ckpt;
    if (line.rfind("tensor ", 0) != 0) {
      throw ParseError("checkpoint: expected tensor header, got '" + line + "'");
    }
    std::istringstream header(line.substr(7));
    std::string name;
    Index rows = 0, cols = 0;
    header >> name >> rows >> cols;
    if (name.empty() || rows < 0 || cols < 0) {
      throw ParseError("checkpoint: bad tensor header '" + line + "'");
    }
    Matrix tensor(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw ParseError("checkpoint: truncated tensor " + name);
      const char* cursor = line.c_str();
      for (Index c = 0; c < cols; ++c) {
        char* next = nullptr;
        tensor(r, c) = std::strtod(cursor, &next);
        if (next == cursor) throw ParseError("checkpoint: bad value in tensor " + name);
        cursor = next;
      }
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(tensor));
  }
  throw ParseError("checkpoint: missing end marker");
}

}  // namespace taxlink
