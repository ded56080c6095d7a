#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "predbal/errors.hpp"

namespace predbal {

// Ordered list of class names; line number in the vocab file (0-based) is the id.
// Ids are fixed for the lifetime of a pipeline run: every matrix and table
// downstream indexes by them.
class Vocab {
 public:
  Vocab() = default;

  static Vocab from_names(std::vector<std::string> names) {
    Vocab v;
    v.names_ = std::move(names);
    for (std::size_t i = 0; i < v.names_.size(); ++i) {
      auto [it, fresh] = v.index_.emplace(v.names_[i], static_cast<int>(i));
      if (!fresh) throw DataError("duplicate vocab entry \"" + v.names_[i] + "\"");
    }
    if (v.names_.empty()) throw DataError("vocab must contain at least one name");
    return v;
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab file: " + path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      names.push_back(line);
    }
    return from_names(std::move(names));
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocab file: " + path);
    for (const auto& n : names_) out << n << "\n";
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  int id_of(const std::string& name, std::size_t line = 0) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownClass(name, line);
    return it->second;
  }

  bool operator==(const Vocab& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

using ObjectVocab = Vocab;
using PredicateVocab = Vocab;

}  // namespace predbal
