#include "heal/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "heal/checkpoint.hpp"
#include "heal/error.hpp"
#include "heal/random.hpp"

namespace heal {

namespace {

std::vector<std::size_t> pick(const std::vector<std::size_t>& labels,
                              const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == ',' && !quoted) {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  cells.push_back(trim(line.substr(start)));
  return cells;
}

}  // namespace

std::vector<std::size_t> Dataset::train_labels() const { return pick(labels, train); }
std::vector<std::size_t> Dataset::test_labels() const { return pick(labels, test); }

void Dataset::validate() const {
  if (classes() < 2) throw Error("dataset needs at least two classes");
  if (features.rows() != labels.size()) throw Error("feature and label counts differ");
  std::vector<char> seen(size(), 0);
  for (const auto* split : {&train, &test})
    for (std::size_t r : *split) {
      if (r >= size()) throw Error("split index out of range");
      if (seen[r]) throw Error("train and test splits overlap");
      seen[r] = 1;
    }
  for (std::size_t l : labels)
    if (l >= classes()) throw Error("label out of range");
}

Dataset parse_csv_dataset(std::string_view text, const CsvSchema& schema, std::string name) {
  if (!(schema.test_fraction >= 0.0 && schema.test_fraction < 1.0))
    throw ConfigError("test_fraction must be in [0, 1)");
  Dataset ds;
  ds.name = std::move(name);

  std::size_t line_no = 0, pos = 0;
  auto next_line = [&](std::string_view& out) {
    while (pos < text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      out = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (!trim(out).empty()) return true;
    }
    return false;
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError("empty file: missing header row", 1, 0);
  if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
  const auto header = split_line(line);
  const std::size_t header_line = line_no;
  std::optional<std::size_t> label_col, split_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.label_column) label_col = c;
    else if (schema.split_column && header[c] == *schema.split_column) split_col = c;
    else ds.feature_names.emplace_back(header[c]);
  }
  if (!label_col) throw ParseError("unknown label column '" + schema.label_column + "'", header_line, 0);
  if (schema.split_column && !split_col)
    throw ParseError("unknown split column '" + *schema.split_column + "'", header_line, 0);
  const std::size_t n = ds.feature_names.size();
  if (n == 0) throw ParseError("no feature columns", header_line, 0);

  std::unordered_map<std::string, std::size_t> class_ids;
  std::vector<double> values;
  std::vector<char> is_test;
  while (next_line(line)) {
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                           " columns, found " + std::to_string(cells.size()),
                       line_no, 0);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == *label_col) {
        std::string key(cells[c]);
        auto [it, inserted] = class_ids.emplace(key, ds.class_names.size());
        if (inserted) ds.class_names.push_back(key);
        ds.labels.push_back(it->second);
      } else if (split_col && c == *split_col) {
        if (cells[c] == "train") is_test.push_back(0);
        else if (cells[c] == "test") is_test.push_back(1);
        else
          throw ParseError("row " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                               ": split must be 'train' or 'test', got '" + std::string(cells[c]) + "'",
                           line_no, c + 1);
      } else {
        double v = 0.0;
        const auto cell = cells[c];
        const auto* first = cell.data();
        const auto* last = first + cell.size();
        if (!cell.empty() && *first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
          throw ParseError("row " + std::to_string(line_no) + ", column " + std::to_string(c + 1) + " ('" +
                               std::string(header[c]) + "'): non-numeric value '" + std::string(cell) + "'",
                           line_no, c + 1);
        values.push_back(v);
      }
    }
  }
  const std::size_t rows = ds.labels.size();
  if (rows == 0) throw ParseError("no data rows", header_line, 0);
  ds.features = FeatureMatrix(rows, n, std::move(values));

  if (split_col) {
    for (std::size_t r = 0; r < rows; ++r) (is_test[r] ? ds.test : ds.train).push_back(r);
  } else {
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(rows) * (1.0 - schema.test_fraction) + 1e-9));
    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = derive_stream(schema.split_seed, Stream::dataset_split);
    for (std::size_t i = rows; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> d(0, i - 1);
      std::swap(order[i - 1], order[d(rng)]);
    }
    ds.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(ds.train.begin(), ds.train.end());
    std::sort(ds.test.begin(), ds.test.end());
  }
  ds.validate();
  return ds;
}

Dataset load_csv_dataset(const std::filesystem::path& path, const CsvSchema& schema) {
  if (!std::filesystem::exists(path)) throw ParseError("dataset not found: " + path.string());
  return parse_csv_dataset(read_file(path), schema, path.stem().string());
}

Dataset duplicate_pool(const Dataset& data, std::size_t factor) {
  if (factor == 0) throw ConfigError("duplication_factor must be at least 1");
  if (factor == 1) return data;
  Dataset out = data;
  const std::size_t extra = data.train.size() * (factor - 1);
  const std::size_t n = data.feature_count();
  std::vector<double> values(data.features.data().begin(), data.features.data().end());
  values.reserve(values.size() + extra * n);
  for (std::size_t copy = 1; copy < factor; ++copy)
    for (std::size_t r : data.train) {
      const auto row = data.features.row(r);
      values.insert(values.end(), row.begin(), row.end());
      out.train.push_back(out.labels.size());
      out.labels.push_back(data.labels[r]);
    }
  out.features = FeatureMatrix(out.labels.size(), n, std::move(values));
  return out;
}

namespace {

Dataset sample_clusters(const std::vector<double>& means, const SyntheticOodConfig& cfg, Rng& rng,
                        std::string name) {
  Dataset ds;
  ds.name = std::move(name);
  const std::size_t n = cfg.features, per = cfg.train_per_class + cfg.test_per_class;
  std::normal_distribution<double> noise(0.0, cfg.sigma);
  std::vector<double> values;
  values.reserve(cfg.classes * per * n);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < per; ++i) {
      for (std::size_t k = 0; k < n; ++k) values.push_back(means[c * n + k] + noise(rng));
      (i < cfg.train_per_class ? ds.train : ds.test).push_back(ds.labels.size());
      ds.labels.push_back(c);
    }
  }
  for (std::size_t k = 0; k < n; ++k) ds.feature_names.push_back("x" + std::to_string(k));
  ds.features = FeatureMatrix(ds.labels.size(), n, std::move(values));
  return ds;
}

double distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace

OodPair synth_ood_generator(std::uint64_t seed, const SyntheticOodConfig& cfg) {
  if (cfg.classes < 2 || cfg.features == 0 || cfg.train_per_class == 0 || !(cfg.sigma > 0.0))
    throw ConfigError("invalid synthetic dataset configuration");
  Rng rng = derive_stream(seed, Stream::synthetic_data);
  const std::size_t n = cfg.features;
  std::normal_distribution<double> mean_dist(0.0, cfg.mean_scale * cfg.sigma);
  OodPair pair;
  pair.in_means.resize(cfg.classes * n);
  for (auto& m : pair.in_means) m = mean_dist(rng);

  const double min_dist = cfg.min_separation * cfg.sigma;
  pair.ood_means.resize(cfg.classes * n);
  std::vector<double> candidate(n);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == 100000) throw Error("could not place OOD cluster means");
      for (auto& v : candidate) v = mean_dist(rng);
      bool ok = true;
      for (std::size_t j = 0; j < cfg.classes && ok; ++j)
        ok = distance(candidate.data(), pair.in_means.data() + j * n, n) >= min_dist;
      if (ok) break;
    }
    std::copy(candidate.begin(), candidate.end(), pair.ood_means.begin() + static_cast<std::ptrdiff_t>(c * n));
  }
  pair.in_dist = sample_clusters(pair.in_means, cfg, rng, "synthetic-in");
  pair.ood = sample_clusters(pair.ood_means, cfg, rng, "synthetic-ood");
  return pair;
}

double min_mean_distance(const OodPair& pair, std::size_t features) {
  double best = INFINITY;
  const std::size_t c = pair.in_means.size() / features;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < pair.ood_means.size() / features; ++j)
      best = std::min(best, distance(pair.in_means.data() + i * features,
                                     pair.ood_means.data() + j * features, features));
  return best;
}

}  // namespace heal
