// Desk-scale datasets: synthetic generators, delimited-text IO, label
// corruption, single-row replacement and stream-driven augmentation.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "vibound/model.hpp"
#include "vibound/random.hpp"

namespace vibound {

struct Dataset {
  std::vector<Example> examples;
  std::size_t class_count = 0;
  std::size_t feature_dim = 0;
  std::string provenance;

  std::size_t size() const { return examples.size(); }
  const Example& operator[](std::size_t i) const { return examples[i]; }

  void validate() const {
    if (examples.empty()) throw std::invalid_argument("Dataset: empty");
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const Example& z = examples[i];
      if (z.y >= class_count) {
        throw std::out_of_range("Dataset: row " + std::to_string(i) + " label " + std::to_string(z.y) +
                                " >= class count " + std::to_string(class_count));
      }
      if (z.x.size() != feature_dim) throw std::invalid_argument("Dataset: row " + std::to_string(i) + " has wrong width");
      for (double v : z.x) {
        if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite feature in row " + std::to_string(i));
      }
    }
  }
};

/// FNV-1a over one row (feature bit patterns, then the label).
inline std::uint64_t row_hash(const Example& z) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  for (double v : z.x) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    mix(bits);
  }
  mix(static_cast<std::uint64_t>(z.y));
  return h;
}

inline std::uint64_t content_hash(const Dataset& ds) {
  std::uint64_t h = splitmix64(ds.class_count ^ (ds.feature_dim << 32));
  for (const Example& z : ds.examples) h = splitmix64(h ^ row_hash(z));
  return h;
}

/// Balanced Gaussian clusters: label i % classes, centres ~ N(0, I),
/// features = centre + spread * N(0, I).
inline Dataset gen_blobs(std::size_t n, std::size_t classes, std::size_t feature_dim, double spread,
                         std::uint64_t seed) {
  if (classes < 2 || feature_dim < 1) throw std::invalid_argument("gen_blobs: need classes >= 2 and feature_dim >= 1");
  if (n < classes) throw std::invalid_argument("gen_blobs: n must be at least the class count");
  if (!(spread >= 0.0)) throw std::invalid_argument("gen_blobs: spread must be nonnegative");
  Rng centre_rng(derive_seed(seed, {1}));
  std::vector<std::vector<double>> centres(classes, std::vector<double>(feature_dim));
  for (auto& c : centres) centre_rng.fill_normal(c);

  Rng rng(derive_seed(seed, {2}));
  Dataset ds;
  ds.class_count = classes;
  ds.feature_dim = feature_dim;
  ds.provenance = "blobs(n=" + std::to_string(n) + ",classes=" + std::to_string(classes) +
                  ",dim=" + std::to_string(feature_dim) + ",seed=" + std::to_string(seed) + ")";
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example z;
    z.y = i % classes;
    z.x = centres[z.y];
    for (double& v : z.x) v += spread * rng.normal();
    ds.examples.push_back(std::move(z));
  }
  return ds;
}

/// The two-example logistic task: x in {-1, 1}, y = (x == 1), duplicates allowed.
inline Dataset gen_two_point(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_two_point: n must be positive");
  Rng rng(seed);
  Dataset ds;
  ds.class_count = 2;
  ds.feature_dim = 1;
  ds.provenance = "two_point(n=" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")";
  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = rng.uniform() < 0.5;
    ds.examples.push_back(Example{{positive ? 1.0 : -1.0}, positive ? 1u : 0u});
  }
  return ds;
}

/// Rows [0, k) and [k, n).
inline std::pair<Dataset, Dataset> split_at(const Dataset& ds, std::size_t k) {
  if (k == 0 || k >= ds.size()) throw std::invalid_argument("split_at: split point must leave both parts nonempty");
  Dataset a = ds, b = ds;
  a.examples.assign(ds.examples.begin(), ds.examples.begin() + static_cast<std::ptrdiff_t>(k));
  b.examples.assign(ds.examples.begin() + static_cast<std::ptrdiff_t>(k), ds.examples.end());
  a.provenance = ds.provenance + "[0:" + std::to_string(k) + "]";
  b.provenance = ds.provenance + "[" + std::to_string(k) + ":]";
  return {std::move(a), std::move(b)};
}

/// The round(fraction * n) distinct rows chosen for label resampling, in
/// selection order (partial Fisher-Yates).
inline std::vector<std::size_t> corruption_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("corrupt_labels: fraction outside [0,1]");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  Rng rng(derive_seed(seed, {1}));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

/// Resamples the labels of exactly round(fraction * n) distinct rows uniformly
/// over all classes (a resampled label may equal the original).
inline Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  const auto idx = corruption_indices(ds.size(), fraction, seed);
  Dataset out = ds;
  if (idx.empty()) return out;
  Rng rng(derive_seed(seed, {2}));
  for (std::size_t i : idx) out.examples[i].y = static_cast<std::size_t>(rng.below(ds.class_count));
  out.provenance = ds.provenance + "+corrupt(" + std::to_string(idx.size()) + ",seed=" + std::to_string(seed) + ")";
  return out;
}

/// Copy of ds with row `index` replaced by replacement.
inline Dataset replace_one(const Dataset& ds, std::size_t index, const Example& replacement) {
  if (index >= ds.size()) {
    throw std::out_of_range("replace_one: index " + std::to_string(index) + " >= n " + std::to_string(ds.size()));
  }
  if (replacement.x.size() != ds.feature_dim || replacement.y >= ds.class_count) {
    throw std::invalid_argument("replace_one: replacement does not fit the dataset schema");
  }
  Dataset out = ds;
  out.examples[index] = replacement;
  out.provenance = ds.provenance + "+replace(" + std::to_string(index) + ")";
  return out;
}

// Augmentation

struct AugmentConfig {
  double jitter_scale = 0.0;      // std of additive Gaussian feature noise
  double flip_probability = 0.0;  // probability of reflecting coordinate flip_axis
  std::size_t flip_axis = 0;

  bool enabled() const { return jitter_scale > 0.0 || flip_probability > 0.0; }
};

struct AugmentDraw {
  bool flip = false;
  std::size_t axis = 0;
  std::vector<double> jitter;  // already scaled; empty means none
};

inline AugmentDraw make_augment_draw(ExampleDraw draw, const AugmentConfig& cfg, std::size_t feature_dim) {
  AugmentDraw a;
  if (!cfg.enabled()) return a;
  Rng rng(derive_seed(draw.seed, {2}));
  a.flip = rng.uniform() < cfg.flip_probability;
  a.axis = cfg.flip_axis;
  if (cfg.jitter_scale > 0.0) {
    a.jitter.resize(feature_dim);
    for (double& v : a.jitter) v = cfg.jitter_scale * rng.normal();
  }
  return a;
}

/// Reflection of one coordinate followed by additive jitter. Labels untouched.
inline Example augment(const Example& z, const AugmentDraw& draw) {
  Example out = z;
  if (draw.flip) {
    if (draw.axis >= out.x.size()) throw std::out_of_range("augment: flip axis outside feature range");
    out.x[draw.axis] = -out.x[draw.axis];
  }
  if (!draw.jitter.empty()) {
    if (draw.jitter.size() != out.x.size()) throw std::invalid_argument("augment: jitter width mismatch");
    for (std::size_t k = 0; k < out.x.size(); ++k) out.x[k] += draw.jitter[k];
  }
  return out;
}

// Delimited text: header f0,...,f{k-1},label; comma separated; no quoting.

struct CsvSchema {
  std::size_t class_count = 0;   // labels must be < class_count
  std::size_t feature_dim = 0;   // 0: take from the header
};

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  auto fail = [&path](std::size_t line, const std::string& what) {
    return std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
  };
  auto split = [](std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return cells;
  };

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw fail(1, "missing header row");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.size() < 2 || header.back() != "label") throw fail(lineno, "header must end with 'label'");
  const std::size_t k = header.size() - 1;
  for (std::size_t i = 0; i < k; ++i) {
    if (header[i] != "f" + std::to_string(i)) throw fail(lineno, "expected header column f" + std::to_string(i));
  }
  if (schema.feature_dim != 0 && schema.feature_dim != k) throw fail(lineno, "feature count does not match schema");

  Dataset ds;
  ds.feature_dim = k;
  ds.class_count = schema.class_count;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != k + 1) throw fail(lineno, "expected " + std::to_string(k + 1) + " cells");
    Example z;
    z.x.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto cell = cells[i];
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), z.x[i]);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(z.x[i])) {
        throw fail(lineno, "non-numeric feature '" + std::string(cell) + "'");
      }
    }
    const auto lab = cells[k];
    std::size_t y = 0;
    const auto res = std::from_chars(lab.data(), lab.data() + lab.size(), y);
    if (res.ec != std::errc() || res.ptr != lab.data() + lab.size()) {
      throw fail(lineno, "non-integer label '" + std::string(lab) + "'");
    }
    if (y >= schema.class_count) throw fail(lineno, "label " + std::to_string(y) + " outside declared range");
    z.y = y;
    ds.examples.push_back(std::move(z));
  }
  if (ds.examples.empty()) throw fail(lineno, "no data rows");
  ds.provenance = "csv:" + path + "#" + std::to_string(content_hash(ds));
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  for (std::size_t i = 0; i < ds.feature_dim; ++i) out << 'f' << i << ',';
  out << "label\n";
  for (const Example& z : ds.examples) {
    for (double v : z.x) out << format_double(v) << ',';
    out << z.y << '\n';
  }
}

}  // namespace vibound
