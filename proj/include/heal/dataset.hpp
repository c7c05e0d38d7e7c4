#pragma once

// Tabular datasets: CSV ingestion, train/test split, pool duplication, and
// a synthetic in-distribution / out-of-distribution fixture.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heal/encoder.hpp"

namespace heal {

struct Dataset {
  std::string name;
  FeatureMatrix features;             // N x n
  std::vector<std::size_t> labels;    // N, dense in [0, C)
  std::vector<std::string> class_names;
  std::vector<std::string> feature_names;
  std::vector<std::size_t> train;     // ascending row ids
  std::vector<std::size_t> test;

  std::size_t size() const { return labels.size(); }
  std::size_t classes() const { return class_names.size(); }
  std::size_t feature_count() const { return features.cols(); }

  FeatureMatrix train_features() const { return features.select(train); }
  FeatureMatrix test_features() const { return features.select(test); }
  std::vector<std::size_t> train_labels() const;
  std::vector<std::size_t> test_labels() const;

  // Throws Error unless splits are disjoint, in range, and C >= 2.
  void validate() const;
};

struct CsvSchema {
  std::string label_column = "label";
  // Column with values "train"/"test"; when absent, a seeded random split.
  std::optional<std::string> split_column;
  double test_fraction = 0.25;
  std::uint64_t split_seed = 0;

  friend bool operator==(const CsvSchema&, const CsvSchema&) = default;
};

// Header row, one label column, remaining columns numeric. Labels are
// re-indexed densely in order of first appearance. Errors are ParseError
// with 1-based file line and column.
Dataset parse_csv_dataset(std::string_view text, const CsvSchema& schema, std::string name = "");
Dataset load_csv_dataset(const std::filesystem::path& path, const CsvSchema& schema);

// Train rows repeated `factor` times in total; copies are appended after the
// original rows and join the train split. Test rows are untouched.
Dataset duplicate_pool(const Dataset& data, std::size_t factor);

struct SyntheticOodConfig {
  std::size_t classes = 10;
  std::size_t features = 32;
  double sigma = 1.0;
  double mean_scale = 1.0;        // cluster means ~ N(0, mean_scale^2) per coordinate, in sigma units
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double min_separation = 6.0;    // OOD means at least this many sigma from every in-distribution mean
};

struct OodPair {
  Dataset in_dist;
  Dataset ood;
  std::vector<double> in_means;   // classes x features
  std::vector<double> ood_means;
};

OodPair synth_ood_generator(std::uint64_t seed, const SyntheticOodConfig& config = {});

// Smallest Euclidean distance between an in-distribution and an OOD mean.
double min_mean_distance(const OodPair& pair, std::size_t features);

}  // namespace heal
