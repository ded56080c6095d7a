#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "predbal/errors.hpp"
#include "predbal/rng.hpp"
#include "predbal/vocab.hpp"

namespace predbal {

struct Triplet {
  std::int64_t image_id = 0;
  int subj = 0;
  int obj = 0;
  int pred = 0;

  bool operator==(const Triplet&) const = default;
};

struct ImageRange {
  std::int64_t image_id = 0;
  std::size_t begin = 0;  // index range into Dataset::triplets()
  std::size_t end = 0;
};

// Immutable collection of annotated triplets grouped by image. Triplets must
// arrive grouped by image_id (one block per image), each (subj, obj) pair
// carries exactly one gold predicate within an image, and all ids must be
// valid under the vocabs.
class Dataset {
 public:
  Dataset(ObjectVocab objects, PredicateVocab predicates, std::vector<Triplet> triplets,
          std::string tag)
      : objects_(std::move(objects)),
        predicates_(std::move(predicates)),
        triplets_(std::move(triplets)),
        tag_(std::move(tag)) {
    const int s = objects_.size();
    const int k = predicates_.size();
    std::unordered_set<std::int64_t> seen_images;
    std::unordered_set<std::uint64_t> pairs_in_image;
    for (std::size_t i = 0; i < triplets_.size(); ++i) {
      const Triplet& t = triplets_[i];
      if (t.subj < 0 || t.subj >= s || t.obj < 0 || t.obj >= s)
        throw InvalidId("object id out of range in image " + std::to_string(t.image_id));
      if (t.pred < 0 || t.pred >= k)
        throw InvalidId("predicate id out of range in image " + std::to_string(t.image_id));
      if (images_.empty() || images_.back().image_id != t.image_id) {
        if (!seen_images.insert(t.image_id).second)
          throw DataError("image " + std::to_string(t.image_id) +
                          " appears in more than one block");
        images_.push_back({t.image_id, i, i + 1});
        pairs_in_image.clear();
      } else {
        images_.back().end = i + 1;
      }
      const std::uint64_t key =
          (static_cast<std::uint64_t>(t.subj) << 32) | static_cast<std::uint32_t>(t.obj);
      if (!pairs_in_image.insert(key).second)
        throw DataError("duplicate (subject, object) pair in image " +
                        std::to_string(t.image_id));
    }
    image_index_.reserve(images_.size());
    for (std::size_t i = 0; i < images_.size(); ++i) image_index_[images_[i].image_id] = i;
  }

  const ObjectVocab& objects() const { return objects_; }
  const PredicateVocab& predicates() const { return predicates_; }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  const std::vector<ImageRange>& images() const { return images_; }
  const std::string& tag() const { return tag_; }

  std::size_t size() const { return triplets_.size(); }
  std::size_t image_count() const { return images_.size(); }
  bool empty() const { return triplets_.empty(); }

  std::span<const Triplet> image_triplets(const ImageRange& r) const {
    return {triplets_.data() + r.begin, r.end - r.begin};
  }

  const ImageRange& image(std::int64_t image_id) const {
    auto it = image_index_.find(image_id);
    if (it == image_index_.end())
      throw DataError("no such image: " + std::to_string(image_id));
    return images_[it->second];
  }

 private:
  ObjectVocab objects_;
  PredicateVocab predicates_;
  std::vector<Triplet> triplets_;
  std::vector<ImageRange> images_;
  std::unordered_map<std::int64_t, std::size_t> image_index_;
  std::string tag_;
};

// -- JSONL ingestion ------------------------------------------------------
// One image per line: {"image_id": <int>, "triplets": [{"subj": "<name>",
// "obj": "<name>", "pred": "<name>"}, ...]}

inline Dataset load_dataset(const std::string& path, const ObjectVocab& objects,
                            const PredicateVocab& predicates, const std::string& tag = "") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<Triplet> triplets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("image_id") ||
        !rec.contains("triplets") || !rec["image_id"].is_number_integer() ||
        !rec["triplets"].is_array())
      throw MalformedRecord(line_no, "expected {\"image_id\": int, \"triplets\": [...]}");
    const std::int64_t image_id = rec["image_id"].get<std::int64_t>();
    for (const auto& t : rec["triplets"]) {
      if (!t.is_object() || !t.contains("subj") || !t.contains("obj") || !t.contains("pred") ||
          !t["subj"].is_string() || !t["obj"].is_string() || !t["pred"].is_string())
        throw MalformedRecord(line_no, "triplet must name subj, obj and pred");
      Triplet out;
      out.image_id = image_id;
      out.subj = objects.id_of(t["subj"].get<std::string>(), line_no);
      out.obj = objects.id_of(t["obj"].get<std::string>(), line_no);
      out.pred = predicates.id_of(t["pred"].get<std::string>(), line_no);
      triplets.push_back(out);
    }
  }
  if (triplets.empty()) throw EmptyDataset("dataset file has no triplets: " + path);
  try {
    return Dataset(objects, predicates, std::move(triplets),
                   tag.empty() ? path : tag);
  } catch (const DataError& e) {
    throw MalformedRecord(0, e.what());
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const auto& img : ds.images()) {
    nlohmann::ordered_json rec;
    rec["image_id"] = img.image_id;
    auto& arr = rec["triplets"] = nlohmann::ordered_json::array();
    for (const Triplet& t : ds.image_triplets(img)) {
      arr.push_back({{"subj", ds.objects().name(t.subj)},
                     {"obj", ds.objects().name(t.obj)},
                     {"pred", ds.predicates().name(t.pred)}});
    }
    out << rec.dump() << "\n";
  }
}

// -- splitting ------------------------------------------------------------

struct SplitFractions {
  double train = 0.0;
  double val = 0.0;
  double test = 0.0;
};

// Splits by image, never by triplet. Deterministic per seed; the image sets
// partition the input exactly. A zero fraction is allowed and yields an empty
// part; a positive fraction that receives zero images is an error.
inline std::array<Dataset, 3> split(const Dataset& ds, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0)
    throw DegenerateSplit("split fractions must be non-negative");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw DegenerateSplit("split fractions must sum to 1");

  std::vector<std::int64_t> ids;
  ids.reserve(ds.image_count());
  for (const auto& img : ds.images()) ids.push_back(img.image_id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);

  const auto n = static_cast<std::int64_t>(ids.size());
  const auto n_train = static_cast<std::int64_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_train_val =
      static_cast<std::int64_t>(std::llround((f.train + f.val) * static_cast<double>(n)));
  const std::int64_t n_val = n_train_val - n_train;
  const std::int64_t n_test = n - n_train_val;
  if (f.train > 0 && n_train == 0) throw DegenerateSplit("train split received zero images");
  if (f.val > 0 && n_val == 0) throw DegenerateSplit("val split received zero images");
  if (f.test > 0 && n_test == 0) throw DegenerateSplit("test split received zero images");

  std::unordered_map<std::int64_t, int> part;
  for (std::int64_t i = 0; i < n; ++i)
    part[ids[static_cast<std::size_t>(i)]] = i < n_train ? 0 : (i < n_train_val ? 1 : 2);

  std::array<std::vector<Triplet>, 3> buckets;
  for (const auto& img : ds.images()) {
    auto& bucket = buckets[static_cast<std::size_t>(part[img.image_id])];
    for (const Triplet& t : ds.image_triplets(img)) bucket.push_back(t);
  }
  const char* names[3] = {"train", "val", "test"};
  auto make = [&](int i) {
    return Dataset(ds.objects(), ds.predicates(), std::move(buckets[static_cast<std::size_t>(i)]),
                   ds.tag() + "/" + names[i]);
  };
  return {make(0), make(1), make(2)};
}

// Images with lo <= image_id < hi, preserving order.
inline Dataset slice_images(const Dataset& ds, std::int64_t lo, std::int64_t hi,
                            const std::string& tag) {
  std::vector<Triplet> kept;
  for (const auto& img : ds.images()) {
    if (img.image_id < lo || img.image_id >= hi) continue;
    for (const Triplet& t : ds.image_triplets(img)) kept.push_back(t);
  }
  return Dataset(ds.objects(), ds.predicates(), std::move(kept), tag);
}

// -- predicate frequencies --------------------------------------------------

struct FrequencyTable {
  std::string source_name;
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
};

inline FrequencyTable predicate_frequencies(const Dataset& ds) {
  if (ds.empty()) throw EmptyDataset("cannot compute frequencies of an empty dataset");
  FrequencyTable f;
  f.source_name = ds.tag();
  f.counts.assign(static_cast<std::size_t>(ds.predicates().size()), 0);
  for (const Triplet& t : ds.triplets()) {
    ++f.counts[static_cast<std::size_t>(t.pred)];
    ++f.total;
  }
  return f;
}

// Corpus counts file: lines of "<predicate name>\t<count>". Predicates absent
// from the file are zero-count; names not in the vocab are rejected.
inline FrequencyTable load_corpus_counts(const std::string& path, const PredicateVocab& predicates,
                                         const std::string& source_name = "corpus") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus counts file: " + path);
  FrequencyTable f;
  f.source_name = source_name;
  f.counts.assign(static_cast<std::size_t>(predicates.size()), 0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw MalformedRecord(line_no, "expected <name>\\t<count>");
    const std::string name = line.substr(0, tab);
    std::int64_t count = 0;
    try {
      count = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw MalformedRecord(line_no, "count is not an integer");
    }
    if (count < 0) throw MalformedRecord(line_no, "count is negative");
    f.counts[static_cast<std::size_t>(predicates.id_of(name, line_no))] += count;
    f.total += count;
  }
  return f;
}

inline void save_corpus_counts(const FrequencyTable& f, const PredicateVocab& predicates,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus counts file: " + path);
  for (int k = 0; k < predicates.size(); ++k)
    out << predicates.name(k) << "\t" << f.counts[static_cast<std::size_t>(k)] << "\n";
}

}  // namespace predbal
