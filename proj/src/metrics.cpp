#include "heal/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "heal/checkpoint.hpp"
#include "heal/error.hpp"
#include "heal/parallel.hpp"

namespace heal {

std::vector<std::size_t> predict_pool(const Ensemble& ensemble, const EncodedPool& pool,
                                      const PriorSimilarityCache* cache, std::size_t workers) {
  std::vector<std::size_t> out(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t i) {
    out[i] = predict_ensemble(make_query(pool, cache, i), ensemble).label;
  });
  return out;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size()) throw Error("prediction and label counts differ");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

std::vector<double> pool_entropies(const Ensemble& ensemble, const EncodedPool& pool,
                                   const PriorSimilarityCache* cache, std::size_t workers) {
  std::vector<double> out(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t i) {
    out[i] = predictive_entropy(predict_ensemble(make_query(pool, cache, i), ensemble).distribution);
  });
  return out;
}

double LearningCurve::accuracy_at(std::size_t labeled_count) const {
  for (const auto& p : points)
    if (p.labeled_count == labeled_count) return p.test_accuracy;
  throw Error("curve " + strategy + "/" + std::to_string(seed) + " has no point at " +
              std::to_string(labeled_count) + " labels");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_curve_csv(const LearningCurve& curve) {
  std::string out = kCurveHeader;
  out += '\n';
  for (const auto& p : curve.points) {
    out += curve.strategy + ',' + std::to_string(curve.seed) + ',' + std::to_string(p.round) + ',' +
           std::to_string(p.labeled_count) + ',' + format_double(p.test_accuracy) + ',' +
           format_double(p.acq_seconds) + '\n';
  }
  return out;
}

namespace {

template <class T>
T parse_number(std::string_view s, std::size_t line, std::size_t col) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("curve row " + std::to_string(line) + ", column " + std::to_string(col) +
                         ": bad number '" + std::string(s) + "'",
                     line, col);
  return v;
}

}  // namespace

LearningCurve parse_curve_csv(std::string_view text, std::string dataset) {
  LearningCurve curve;
  curve.dataset = std::move(dataset);
  std::size_t line_no = 0, pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      if (line != kCurveHeader) throw ParseError("unexpected curve header", line_no, 0);
      header = false;
      continue;
    }
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == ',') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (cells.size() != 6) throw ParseError("curve row has wrong column count", line_no, 0);
    const auto seed = parse_number<std::uint64_t>(cells[1], line_no, 2);
    if (curve.points.empty()) {
      curve.strategy = std::string(cells[0]);
      curve.seed = seed;
    } else if (cells[0] != curve.strategy || seed != curve.seed) {
      throw ParseError("curve file mixes runs", line_no, 0);
    }
    curve.points.push_back({parse_number<std::uint64_t>(cells[2], line_no, 3),
                            parse_number<std::size_t>(cells[3], line_no, 4),
                            parse_number<double>(cells[4], line_no, 5),
                            parse_number<double>(cells[5], line_no, 6)});
  }
  if (header) throw ParseError("empty curve file", 1, 0);
  return curve;
}

void write_curve_csv(const LearningCurve& curve, const std::filesystem::path& path) {
  write_file_atomic(path, format_curve_csv(curve));
}

LearningCurve read_curve_csv(const std::filesystem::path& path, std::string dataset) {
  return parse_curve_csv(read_file(path), std::move(dataset));
}

ComparisonMatrix pairwise_matrix(std::span<const LearningCurve> curves) {
  ComparisonMatrix m;
  for (const auto& c : curves)
    if (std::find(m.strategies.begin(), m.strategies.end(), c.strategy) == m.strategies.end())
      m.strategies.push_back(c.strategy);
  const std::size_t s = m.strategies.size();
  m.penalty.assign(s * s, 0.0);
  if (s == 0) return m;
  auto strategy_id = [&](const std::string& name) {
    return static_cast<std::size_t>(
        std::find(m.strategies.begin(), m.strategies.end(), name) - m.strategies.begin());
  };

  // dataset -> strategy -> seed -> curve
  std::map<std::string, std::vector<std::map<std::uint64_t, const LearningCurve*>>> grouped;
  for (const auto& c : curves) {
    auto& per = grouped[c.dataset];
    per.resize(s);
    if (!per[strategy_id(c.strategy)].emplace(c.seed, &c).second)
      throw Error("duplicate curve for " + c.strategy + " seed " + std::to_string(c.seed));
  }

  std::vector<std::size_t> wins(s * s, 0);
  std::size_t checkpoints = 0;
  for (const auto& [dataset, per] : grouped) {
    const auto& ref = per[0];
    if (ref.empty()) throw Error("strategy " + m.strategies[0] + " missing for dataset " + dataset);
    std::vector<std::size_t> counts;
    for (const auto& p : ref.begin()->second->points) counts.push_back(p.labeled_count);
    for (std::size_t k = 0; k < s; ++k) {
      if (per[k].size() != ref.size()) throw Error("mismatched seeds for " + m.strategies[k]);
      for (const auto& [seed, curve] : per[k]) {
        if (!ref.contains(seed)) throw Error("mismatched seeds for " + m.strategies[k]);
        std::vector<std::size_t> mine;
        for (const auto& p : curve->points) mine.push_back(p.labeled_count);
        if (mine != counts) throw Error("mismatched checkpoints for " + m.strategies[k]);
      }
    }
    for (std::size_t t = 0; t < counts.size(); ++t) {
      ++checkpoints;
      for (std::size_t x = 0; x < s; ++x)
        for (std::size_t y = 0; y < s; ++y) {
          if (x == y) continue;
          std::vector<double> diff;
          for (const auto& [seed, cx] : per[x]) diff.push_back(cx->points[t].test_accuracy -
                                                                per[y].at(seed)->points[t].test_accuracy);
          const double n = static_cast<double>(diff.size());
          double mean = 0.0;
          for (double d : diff) mean += d;
          mean /= n;
          double se = 0.0;
          if (diff.size() > 1) {
            double ss = 0.0;
            for (double d : diff) ss += (d - mean) * (d - mean);
            se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
          }
          if (mean > 2.0 * se) ++wins[y * s + x];
        }
    }
  }
  for (std::size_t i = 0; i < s * s; ++i)
    m.penalty[i] = static_cast<double>(wins[i]) / static_cast<double>(checkpoints);
  return m;
}

std::string format_matrix_csv(const ComparisonMatrix& m) {
  std::string out = "loser\\winner";
  for (const auto& s : m.strategies) out += ',' + s;
  out += '\n';
  for (std::size_t y = 0; y < m.strategies.size(); ++y) {
    out += m.strategies[y];
    for (std::size_t x = 0; x < m.strategies.size(); ++x) out += ',' + format_double(m.at(y, x));
    out += '\n';
  }
  return out;
}

Histogram make_histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  if (!(hi > lo)) throw ConfigError("histogram range is empty");
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(bins, 0);
  h.total = values.size();
  const double width = (hi - lo) / static_cast<double>(bins);
  double sum = 0.0;
  for (double v : values) {
    sum += v;
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  h.mean = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
  return h;
}

EntropyHistogram entropy_histogram(const Ensemble& ensemble, const Dataset& in_dist, const Dataset& ood,
                                   std::size_t bins, std::size_t workers) {
  EncodedPool in_pool(in_dist.test_features(), ensemble.theta, ensemble.stats, workers);
  EncodedPool ood_pool(ood.test_features(), ensemble.theta, ensemble.stats, workers);
  const auto in_cache = build_prior_cache(in_pool, ensemble, workers);
  const auto ood_cache = build_prior_cache(ood_pool, ensemble, workers);
  const double top = std::log(static_cast<double>(ensemble.classes()));
  EntropyHistogram h;
  h.mode = ensemble.config.prior_mode;
  h.in_dist = make_histogram(pool_entropies(ensemble, in_pool, &in_cache, workers), bins, 0.0, top);
  h.ood = make_histogram(pool_entropies(ensemble, ood_pool, &ood_cache, workers), bins, 0.0, top);
  return h;
}

OodExperimentResult run_ood_experiment(std::uint64_t seed, PriorMode mode,
                                       const OodExperimentConfig& config) {
  const auto pair = synth_ood_generator(seed, config.data);
  const auto& in = pair.in_dist;
  TrainConfig train = config.train;
  train.seed = seed;
  train.prior_mode = mode;
  train.workers = config.workers;
  const auto train_x = in.train_features();
  auto ens = init_ensemble({in.classes(), config.dim, config.members, in.feature_count()}, train,
                           fit_normalizer(train_x, config.bandwidth));
  EncodedPool pool(train_x, ens.theta, ens.stats, config.workers);
  auto cache = build_prior_cache(pool, ens, config.workers);
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto labels = in.train_labels();
  fit(ens, {&pool, &cache, idx, labels}, 0);

  OodExperimentResult r;
  r.histogram = entropy_histogram(ens, in, pair.ood, config.bins, config.workers);
  EncodedPool test(in.test_features(), ens.theta, ens.stats, config.workers);
  const auto test_cache = build_prior_cache(test, ens, config.workers);
  r.in_dist_accuracy = accuracy(predict_pool(ens, test, &test_cache, config.workers), in.test_labels());
  return r;
}

std::string format_histogram_table(const EntropyHistogram& h) {
  std::ostringstream out;
  out << "# prior_mode=" << to_string(h.mode) << " in_mean=" << format_double(h.in_dist.mean)
      << " ood_mean=" << format_double(h.ood.mean) << " gap=" << format_double(h.gap()) << '\n';
  out << "mode,bin_lo,bin_hi,in_dist_count,ood_count\n";
  const std::size_t bins = h.in_dist.counts.size();
  const double width = (h.in_dist.hi - h.in_dist.lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b)
    out << to_string(h.mode) << ',' << format_double(h.in_dist.lo + width * static_cast<double>(b)) << ','
        << format_double(h.in_dist.lo + width * static_cast<double>(b + 1)) << ',' << h.in_dist.counts[b]
        << ',' << h.ood.counts[b] << '\n';
  return out.str();
}

}  // namespace heal
