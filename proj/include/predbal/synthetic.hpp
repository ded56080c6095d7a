#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "predbal/dataset.hpp"
#include "predbal/errors.hpp"
#include "predbal/rng.hpp"
#include "predbal/vocab.hpp"

namespace predbal {

// Synthetic ontology: a set of root predicates, some of which have informative
// children with narrower meaning. Every (subject, object) pair template is
// bound to one latent predicate; train/val annotations swap a child for its
// root with probability relabel_prob, test annotations keep the latent label.
struct SynthConfig {
  int roots = 3;              // roots that have children
  int children_per_root = 4;
  int solo_roots = 3;         // roots without children
  int object_classes = 30;
  int train_images = 2000;
  int val_images = 200;
  int test_images = 500;
  int triplets_per_image = 25;
  double zipf_exponent = 1.5;
  double relabel_prob = 0.6;

  int predicate_count() const { return roots + solo_roots + roots * children_per_root; }
  int total_images() const { return train_images + val_images + test_images; }

  void validate() const {
    if (roots < 1 || children_per_root < 1 || solo_roots < 0)
      throw ConfigError("synthetic ontology sizes must be positive");
    if (object_classes < 2) throw ConfigError("object_classes must be at least 2");
    if (train_images < 1 || val_images < 0 || test_images < 0)
      throw ConfigError("image counts must be positive (train) / non-negative (val, test)");
    if (triplets_per_image < 1) throw ConfigError("triplets_per_image must be positive");
    if (zipf_exponent < 0) throw ConfigError("zipf_exponent must be non-negative");
    if (relabel_prob < 0.0 || relabel_prob > 1.0)
      throw ConfigError("relabel_prob must lie in [0, 1]");
    const long long pairs =
        static_cast<long long>(object_classes) * (object_classes - 1);
    if (pairs < predicate_count())
      throw ConfigError("not enough (subject, object) pair templates for the predicate count");
    if (triplets_per_image > pairs)
      throw ConfigError("triplets_per_image exceeds the number of distinct pair templates");
  }

  static SynthConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("synthetic config must be a JSON object");
    static const std::vector<std::string> keys = {
        "roots",        "children_per_root", "solo_roots",        "object_classes",
        "train_images", "val_images",        "test_images",       "triplets_per_image",
        "zipf_exponent", "relabel_prob"};
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (std::find(keys.begin(), keys.end(), key) == keys.end())
        throw ConfigError("unknown key in synthetic config: " + key);
    }
    SynthConfig c;
    auto req = [&](const char* key) -> const nlohmann::json& {
      if (!j.contains(key)) throw ConfigError(std::string("synthetic config missing key: ") + key);
      return j.at(key);
    };
    c.roots = req("roots").get<int>();
    c.children_per_root = req("children_per_root").get<int>();
    c.solo_roots = req("solo_roots").get<int>();
    c.object_classes = req("object_classes").get<int>();
    c.train_images = req("train_images").get<int>();
    c.val_images = req("val_images").get<int>();
    c.test_images = req("test_images").get<int>();
    c.triplets_per_image = req("triplets_per_image").get<int>();
    c.zipf_exponent = req("zipf_exponent").get<double>();
    c.relabel_prob = req("relabel_prob").get<double>();
    c.validate();
    return c;
  }

  nlohmann::ordered_json to_json() const {
    return {{"roots", roots},
            {"children_per_root", children_per_root},
            {"solo_roots", solo_roots},
            {"object_classes", object_classes},
            {"train_images", train_images},
            {"val_images", val_images},
            {"test_images", test_images},
            {"triplets_per_image", triplets_per_image},
            {"zipf_exponent", zipf_exponent},
            {"relabel_prob", relabel_prob}};
  }
};

// Depth-1 ontology oracle: each informative predicate maps to its root.
struct ParentMap {
  std::unordered_map<int, int> parent;  // child id -> root id
  std::vector<int> roots;               // all root ids, ascending

  bool is_root(int pred) const { return parent.find(pred) == parent.end(); }
  bool is_child(int pred) const { return !is_root(pred); }
  int parent_of(int pred) const {
    auto it = parent.find(pred);
    if (it == parent.end()) throw InvalidId("predicate has no parent: " + std::to_string(pred));
    return it->second;
  }

  nlohmann::ordered_json to_json(const PredicateVocab& predicates) const {
    nlohmann::ordered_json j;
    auto& p = j["parent"] = nlohmann::ordered_json::object();
    for (int k = 0; k < predicates.size(); ++k) {
      auto it = parent.find(k);
      if (it != parent.end()) p[predicates.name(k)] = predicates.name(it->second);
    }
    auto& r = j["roots"] = nlohmann::ordered_json::array();
    for (int root : roots) r.push_back(predicates.name(root));
    return j;
  }

  static ParentMap from_json(const nlohmann::json& j, const PredicateVocab& predicates) {
    ParentMap m;
    for (const auto& [child, root] : j.at("parent").items())
      m.parent[predicates.id_of(child)] = predicates.id_of(root.get<std::string>());
    for (const auto& root : j.at("roots")) m.roots.push_back(predicates.id_of(root.get<std::string>()));
    return m;
  }
};

struct SyntheticBundle {
  Dataset dataset;  // image ids: [0, train) train, [train, train+val) val, rest test
  ParentMap parents;
  SynthConfig config;

  Dataset train() const {
    return slice_images(dataset, 0, config.train_images, "synthetic/train");
  }
  Dataset val() const {
    return slice_images(dataset, config.train_images, config.train_images + config.val_images,
                        "synthetic/val");
  }
  Dataset test() const {
    return slice_images(dataset, config.train_images + config.val_images, config.total_images(),
                        "synthetic/test");
  }
};

namespace detail {

// Weighted draw over [0, weights.size()) from cumulative sums.
inline int draw_from_cumulative(const std::vector<double>& cumulative, Rng& rng) {
  const double u = rng.unit() * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  auto idx = static_cast<std::size_t>(it - cumulative.begin());
  if (idx >= cumulative.size()) idx = cumulative.size() - 1;
  return static_cast<int>(idx);
}

}  // namespace detail

// Vocab id layout: roots first, then solo roots, then children grouped by
// root. Popularity is Zipf over that id order, so roots dominate the label
// distribution even before relabeling.
inline PredicateVocab synthetic_predicate_vocab(const SynthConfig& c) {
  std::vector<std::string> names;
  for (int r = 0; r < c.roots; ++r) names.push_back("rel" + std::to_string(r));
  for (int x = 0; x < c.solo_roots; ++x) names.push_back("solo" + std::to_string(x));
  for (int r = 0; r < c.roots; ++r)
    for (int ch = 0; ch < c.children_per_root; ++ch)
      names.push_back("rel" + std::to_string(r) + "_v" + std::to_string(ch));
  return PredicateVocab::from_names(std::move(names));
}

inline ObjectVocab synthetic_object_vocab(const SynthConfig& c) {
  std::vector<std::string> names;
  for (int s = 0; s < c.object_classes; ++s) names.push_back("obj" + std::to_string(s));
  return ObjectVocab::from_names(std::move(names));
}

inline SyntheticBundle generate_synthetic(const SynthConfig& c, std::uint64_t seed) {
  c.validate();
  const int k = c.predicate_count();
  const int s = c.object_classes;
  PredicateVocab predicates = synthetic_predicate_vocab(c);
  ObjectVocab objects = synthetic_object_vocab(c);

  ParentMap parents;
  for (int r = 0; r < c.roots + c.solo_roots; ++r) parents.roots.push_back(r);
  for (int r = 0; r < c.roots; ++r)
    for (int ch = 0; ch < c.children_per_root; ++ch)
      parents.parent[c.roots + c.solo_roots + r * c.children_per_root + ch] = r;

  std::vector<double> zipf_cumulative(static_cast<std::size_t>(k));
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += std::pow(static_cast<double>(i + 1), -c.zipf_exponent);
    zipf_cumulative[static_cast<std::size_t>(i)] = acc;
  }

  // Bind every ordered (subject, object) pair with distinct classes to one
  // latent predicate: first one template per predicate so every class is
  // reachable, then the rest proportionally to popularity.
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(s) * static_cast<std::size_t>(s - 1));
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b)
      if (a != b) pairs.emplace_back(a, b);
  Rng bind_rng(derive_seed(seed, 1));
  bind_rng.shuffle(pairs);

  std::vector<int> pair_latent(pairs.size());
  std::vector<std::vector<std::size_t>> templates_of(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int latent = i < static_cast<std::size_t>(k)
                           ? static_cast<int>(i)
                           : detail::draw_from_cumulative(zipf_cumulative, bind_rng);
    pair_latent[i] = latent;
    templates_of[static_cast<std::size_t>(latent)].push_back(i);
  }

  Rng emit_rng(derive_seed(seed, 2));
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(c.total_images()) *
                   static_cast<std::size_t>(c.triplets_per_image));
  const std::int64_t relabel_until = c.train_images + c.val_images;
  std::unordered_set<std::size_t> used;
  for (std::int64_t img = 0; img < c.total_images(); ++img) {
    const bool relabel_zone = img < relabel_until;
    used.clear();
    for (int t = 0; t < c.triplets_per_image; ++t) {
      std::size_t chosen = pairs.size();
      for (int attempt = 0; attempt < 64; ++attempt) {
        const int z = detail::draw_from_cumulative(zipf_cumulative, emit_rng);
        const auto& tpl = templates_of[static_cast<std::size_t>(z)];
        const std::size_t cand = tpl[static_cast<std::size_t>(emit_rng.below(tpl.size()))];
        if (used.find(cand) == used.end()) {
          chosen = cand;
          break;
        }
      }
      if (chosen == pairs.size()) {
        // Pathological density; fall back to the first unused template.
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          if (used.find(i) == used.end()) {
            chosen = i;
            break;
          }
        }
      }
      used.insert(chosen);
      const int latent = pair_latent[chosen];
      int label = latent;
      if (relabel_zone && parents.is_child(latent) && emit_rng.unit() < c.relabel_prob)
        label = parents.parent_of(latent);
      triplets.push_back({img, pairs[chosen].first, pairs[chosen].second, label});
    }
  }

  Dataset dataset(std::move(objects), std::move(predicates), std::move(triplets), "synthetic");
  return SyntheticBundle{std::move(dataset), std::move(parents), c};
}

// Latent predicate of a pair template, recomputed from the generator's
// deterministic binding. Exposed for oracle checks in tests.
inline std::unordered_map<std::uint64_t, int> latent_pair_bindings(const SynthConfig& c,
                                                                   std::uint64_t seed) {
  c.validate();
  const int k = c.predicate_count();
  const int s = c.object_classes;
  std::vector<double> zipf_cumulative(static_cast<std::size_t>(k));
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += std::pow(static_cast<double>(i + 1), -c.zipf_exponent);
    zipf_cumulative[static_cast<std::size_t>(i)] = acc;
  }
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b)
      if (a != b) pairs.emplace_back(a, b);
  Rng bind_rng(derive_seed(seed, 1));
  bind_rng.shuffle(pairs);
  std::unordered_map<std::uint64_t, int> binding;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int latent = i < static_cast<std::size_t>(k)
                           ? static_cast<int>(i)
                           : detail::draw_from_cumulative(zipf_cumulative, bind_rng);
    const std::uint64_t key = (static_cast<std::uint64_t>(pairs[i].first) << 32) |
                              static_cast<std::uint32_t>(pairs[i].second);
    binding[key] = latent;
  }
  return binding;
}

}  // namespace predbal
