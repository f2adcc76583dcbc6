#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmtl/config.hpp"
#include "cmtl/dataset.hpp"
#include "cmtl/error.hpp"
#include "cmtl/losses.hpp"
#include "cmtl/numerics.hpp"
#include "cmtl/relatedness.hpp"
#include "cmtl/text.hpp"

namespace cmtl {

// ---------------------------------------------------------------------------
// Schema sidecar:
//   classes: a, b, c
//   attributes: x, y
//   feature_dim: 16

inline Schema parse_schema(std::string_view content) {
  Schema schema;
  bool have_classes = false, have_attributes = false, have_dim = false;
  const auto lines = text::split(content, '\n');
  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::string_view line = lines[n];
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) throw ParseError(n + 1, "expected '<key>: <value>'");
    const auto key = text::trim(line.substr(0, colon));
    const auto value = text::trim(line.substr(colon + 1));
    const auto names = [&] {
      std::vector<std::string> out;
      for (auto piece : text::split(value, ',')) {
        auto name = text::trim(piece);
        if (name.empty()) throw ParseError(n + 1, "empty name");
        out.emplace_back(name);
      }
      return out;
    };
    if (key == "classes") {
      schema.class_names = names();
      have_classes = true;
    } else if (key == "attributes") {
      schema.attribute_names = names();
      have_attributes = true;
    } else if (key == "feature_dim") {
      auto d = text::parse_uint(value);
      if (!d || *d == 0) throw ParseError(n + 1, "feature_dim must be a positive integer");
      schema.feature_dim = *d;
      have_dim = true;
    } else {
      throw ParseError(n + 1, "unknown schema key '" + std::string(key) + "'");
    }
  }
  if (!have_classes || !have_attributes || !have_dim) {
    throw ParseError(lines.size(), "schema needs classes, attributes and feature_dim");
  }
  try {
    validate_schema(schema);
  } catch (const Error& e) {
    throw ParseError(lines.size(), e.message());
  }
  return schema;
}

inline std::string write_schema(const Schema& schema) {
  std::ostringstream out;
  out << "classes: " << text::join(schema.class_names, ", ") << '\n';
  out << "attributes: " << text::join(schema.attribute_names, ", ") << '\n';
  out << "feature_dim: " << schema.feature_dim << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Dataset CSV: `id,x0..x{d-1},cls,att_<name>...`; an empty cell is a missing
// label.

inline std::string write_dataset(const Dataset& data) {
  const auto& schema = data.schema;
  std::ostringstream out;
  out << "id";
  for (std::size_t f = 0; f < schema.feature_dim; ++f) out << ",x" << f;
  out << ",cls";
  for (const auto& name : schema.attribute_names) out << ",att_" << name;
  out << '\n';
  for (std::size_t j = 0; j < data.samples.size(); ++j) {
    const auto& s = data.samples[j];
    if (s.cls_soft) throw Error(ErrorKind::State, "soft class targets cannot be written to CSV");
    out << j;
    for (double v : s.features) out << ',' << text::format_double(v);
    out << ',';
    if (s.cls_label) out << schema.class_names[*s.cls_label];
    for (std::size_t i = 0; i < schema.num_attributes(); ++i) {
      out << ',';
      if (s.att_mask[i]) out << static_cast<int>(s.att_labels[i]);
    }
    out << '\n';
  }
  return out.str();
}

inline Dataset parse_dataset(std::string_view csv, const Schema& schema) {
  validate_schema(schema);
  const std::size_t d = schema.feature_dim;
  const std::size_t m = schema.num_attributes();
  const std::size_t width = 1 + d + 1 + m;

  Dataset data;
  data.schema = schema;
  const auto lines = text::split(csv, '\n');
  bool header_seen = false;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::size_t row = n + 1;
    auto line = lines[n];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    if (cells.size() != width) {
      throw ParseError(row, "expected " + std::to_string(width) + " columns, got " + std::to_string(cells.size()));
    }
    if (!header_seen) {
      header_seen = true;
      if (text::trim(cells[0]) != "id") throw ParseError(row, "header must start with 'id'");
      for (std::size_t f = 0; f < d; ++f) {
        if (text::trim(cells[1 + f]) != "x" + std::to_string(f)) throw ParseError(row, "bad feature header");
      }
      if (text::trim(cells[1 + d]) != "cls") throw ParseError(row, "missing 'cls' column");
      for (std::size_t i = 0; i < m; ++i) {
        if (text::trim(cells[2 + d + i]) != "att_" + schema.attribute_names[i]) {
          throw ParseError(row, "attribute column " + std::to_string(i) + " must be 'att_" + schema.attribute_names[i] + "'");
        }
      }
      continue;
    }

    Sample s;
    s.features.resize(d);
    for (std::size_t f = 0; f < d; ++f) {
      auto v = text::parse_double(cells[1 + f]);
      if (!v) throw ParseError(row, "non-numeric feature x" + std::to_string(f));
      s.features[f] = *v;
    }
    const auto cls = text::trim(cells[1 + d]);
    if (!cls.empty()) {
      if (auto idx = schema.class_index(std::string(cls))) {
        s.cls_label = *idx;
      } else if (auto num = text::parse_uint(cls); num && *num < schema.num_classes()) {
        s.cls_label = static_cast<std::size_t>(*num);
      } else {
        throw ParseError(row, "unknown class '" + std::string(cls) + "'");
      }
    }
    s.att_labels.assign(m, 0);
    s.att_mask.assign(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto cell = text::trim(cells[2 + d + i]);
      if (cell.empty()) continue;
      if (cell == "0" || cell == "1") {
        s.att_mask[i] = 1;
        s.att_labels[i] = cell == "1" ? 1 : 0;
      } else {
        throw ParseError(row, "attribute value '" + std::string(cell) + "' outside {0,1}");
      }
    }
    if (!s.cls_label && !s.has_attributes()) throw ParseError(row, "row carries no annotation");
    data.samples.push_back(std::move(s));
  }
  if (!header_seen) throw ParseError(lines.size(), "missing header row");
  if (data.empty()) throw ParseError(lines.size(), "no data rows");
  return data;
}

// ---------------------------------------------------------------------------
// Synthetic partially annotated data.

/// Six classes and ten attributes with a handful of strongly and weakly
/// associated attributes per class, several of them shared between classes.
inline constexpr std::string_view kSyntheticRelatedness = R"(# p(attribute | class) used to sample synthetic attributes
classes: class0, class1, class2, class3, class4, class5
attributes: attr0, attr1, attr2, attr3, attr4, attr5, attr6, attr7, attr8, attr9
class0: emp=attr0:0.9,attr1:0.9,attr2:0.5
class1: emp=attr3:0.9,attr4:0.9,attr0:0.4,attr5:0.3
class2: emp=attr0:0.85,attr3:0.85,attr6:0.9,attr7:0.5
class3: emp=attr3:0.9,attr5:0.9,attr8:0.6
class4: emp=attr0:0.9,attr6:0.9,attr7:0.9,attr2:0.4
class5: emp=attr8:0.9,attr9:0.9,attr5:0.5,attr3:0.3
)";

struct SynthConfig {
  RelatednessSpec true_relatedness = load_relatedness(kSyntheticRelatedness);
  std::size_t feature_dim = 16;
  std::size_t n_cls_only = 100;
  std::size_t n_att_only = 1000;
  std::size_t n_joint = 0;
  std::size_t n_test = 2000;
  double class_sep = 1.0;
  double att_effect = 1.0;
  double noise_sd = 1.0;
  std::uint64_t seed = 1;

  std::size_t num_classes() const { return true_relatedness.num_classes(); }
  std::size_t num_attributes() const { return true_relatedness.num_attributes(); }

  void validate() const {
    if (feature_dim == 0) throw Error(ErrorKind::Config, "synth feature_dim must be positive");
    if (n_test < 1) throw Error(ErrorKind::Config, "synth n_test must be at least 1");
    if (!(std::isfinite(class_sep) && class_sep > 0.0)) throw Error(ErrorKind::Config, "synth class_sep must be > 0");
    if (!(std::isfinite(att_effect) && att_effect >= 0.0)) throw Error(ErrorKind::Config, "synth att_effect must be >= 0");
    if (!(std::isfinite(noise_sd) && noise_sd > 0.0)) throw Error(ErrorKind::Config, "synth noise_sd must be > 0");
  }

  Schema schema() const {
    return {true_relatedness.class_names(), true_relatedness.attribute_names(), feature_dim};
  }
};

inline const std::set<std::string>& synth_config_keys(const std::string& prefix) {
  static std::map<std::string, std::set<std::string>> cache;
  auto [it, inserted] = cache.try_emplace(prefix);
  if (inserted) {
    for (const char* k : {"relatedness", "feature_dim", "n_cls_only", "n_att_only", "n_joint", "n_test", "class_sep",
                          "att_effect", "noise_sd", "seed"}) {
      it->second.insert(prefix + k);
    }
  }
  return it->second;
}

/// Reads synthetic-data settings from `<prefix>key` entries. `relatedness` is
/// a .rel path or `builtin`.
inline SynthConfig synth_config_from(const ConfigFile& cfg, const std::string& prefix = "") {
  SynthConfig sc;
  const auto rel = cfg.get_string(prefix + "relatedness", "builtin");
  if (rel != "builtin") sc.true_relatedness = load_relatedness_file(cfg.resolve(rel));
  sc.feature_dim = cfg.get_uint(prefix + "feature_dim", sc.feature_dim);
  sc.n_cls_only = cfg.get_uint(prefix + "n_cls_only", sc.n_cls_only);
  sc.n_att_only = cfg.get_uint(prefix + "n_att_only", sc.n_att_only);
  sc.n_joint = cfg.get_uint(prefix + "n_joint", sc.n_joint);
  sc.n_test = cfg.get_uint(prefix + "n_test", sc.n_test);
  sc.class_sep = cfg.get_double(prefix + "class_sep", sc.class_sep);
  sc.att_effect = cfg.get_double(prefix + "att_effect", sc.att_effect);
  sc.noise_sd = cfg.get_double(prefix + "noise_sd", sc.noise_sd);
  sc.seed = cfg.get_uint(prefix + "seed", sc.seed);
  sc.validate();
  return sc;
}

struct SyntheticSplits {
  Dataset train_cls_only;
  Dataset train_att_only;
  Dataset train_joint;
  Dataset test;
};

namespace detail {

inline Vector random_unit(SeededRng& rng, std::size_t d) {
  Vector v(d);
  double norm = 0.0;
  while (norm < 1e-12) {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// K unit directions; orthonormal when K <= d.
inline std::vector<Vector> separated_directions(SeededRng& rng, std::size_t count, std::size_t d) {
  std::vector<Vector> dirs;
  for (std::size_t c = 0; c < count; ++c) {
    Vector v = random_unit(rng, d);
    if (c < d) {
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& u : dirs) {
          double dot = 0.0;
          for (std::size_t f = 0; f < d; ++f) dot += v[f] * u[f];
          for (std::size_t f = 0; f < d; ++f) v[f] -= dot * u[f];
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    dirs.push_back(std::move(v));
  }
  return dirs;
}

}  // namespace detail

/// Draws a labelled pool from a class-conditional attribute model and strips
/// labels per split. Per sample: class uniform; attribute i ~ Bernoulli of the
/// true mixture entry; features = class centroid + attribute shifts + noise.
inline SyntheticSplits gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.num_classes();
  const std::size_t m = cfg.num_attributes();
  const std::size_t d = cfg.feature_dim;
  const Matrix mix = mixture_matrix(cfg.true_relatedness).values;

  SeededRng rng(cfg.seed);
  SeededRng geometry = rng.fork();
  const auto centroids = detail::separated_directions(geometry, k, d);
  std::vector<Vector> att_dirs;
  for (std::size_t i = 0; i < m; ++i) att_dirs.push_back(detail::random_unit(geometry, d));

  const auto draw = [&]() {
    Sample s;
    const std::size_t c = rng.index(k);
    s.cls_label = c;
    s.att_labels.assign(m, 0);
    s.att_mask.assign(m, 1);
    for (std::size_t i = 0; i < m; ++i) s.att_labels[i] = rng.bernoulli(mix(c, i)) ? 1 : 0;
    s.features.assign(d, 0.0);
    for (std::size_t f = 0; f < d; ++f) {
      double x = cfg.class_sep * centroids[c][f];
      for (std::size_t i = 0; i < m; ++i) {
        if (s.att_labels[i]) x += cfg.att_effect * att_dirs[i][f];
      }
      s.features[f] = x + rng.normal(0.0, cfg.noise_sd);
    }
    return s;
  };

  SyntheticSplits out;
  for (Dataset* ds : {&out.train_cls_only, &out.train_att_only, &out.train_joint, &out.test}) ds->schema = cfg.schema();
  for (std::size_t j = 0; j < cfg.n_cls_only; ++j) {
    Sample s = draw();
    s.att_labels.assign(m, 0);
    s.att_mask.assign(m, 0);
    out.train_cls_only.samples.push_back(std::move(s));
  }
  for (std::size_t j = 0; j < cfg.n_att_only; ++j) {
    Sample s = draw();
    s.cls_label.reset();
    out.train_att_only.samples.push_back(std::move(s));
  }
  for (std::size_t j = 0; j < cfg.n_joint; ++j) out.train_joint.samples.push_back(draw());
  for (std::size_t j = 0; j < cfg.n_test; ++j) out.test.samples.push_back(draw());
  return out;
}

// ---------------------------------------------------------------------------
// Batching.

struct Batch {
  Matrix features;
  BatchLabels labels;
  std::vector<std::size_t> indices;  // positions in the pooled sample list
};

inline Batch make_batch(const std::vector<const Sample*>& pool, std::span<const std::size_t> indices,
                        const Schema& schema) {
  const std::size_t b = indices.size();
  const std::size_t m = schema.num_attributes();
  Batch batch;
  batch.features = Matrix(b, schema.feature_dim);
  batch.labels.cls_label.resize(b);
  batch.labels.cls_soft.resize(b);
  batch.labels.att_labels = Matrix(b, m);
  batch.labels.att_mask = Matrix(b, m);
  batch.indices.assign(indices.begin(), indices.end());
  for (std::size_t r = 0; r < b; ++r) {
    const Sample& s = *pool[indices[r]];
    std::copy(s.features.begin(), s.features.end(), batch.features.row(r).begin());
    batch.labels.cls_label[r] = s.cls_label;
    batch.labels.cls_soft[r] = s.cls_soft;
    for (std::size_t i = 0; i < m; ++i) {
      batch.labels.att_labels(r, i) = s.att_labels[i];
      batch.labels.att_mask(r, i) = s.att_mask[i];
    }
  }
  return batch;
}

inline Batch make_batch(const Dataset& data) {
  std::vector<const Sample*> pool;
  for (const auto& s : data.samples) pool.push_back(&s);
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
  return make_batch(pool, idx, data.schema);
}

/// Endless stream of minibatches over the pooled samples of several datasets.
/// Each epoch visits every sample once in a freshly shuffled order; the last
/// batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(const std::vector<const Dataset*>& datasets, std::size_t batch_size, SeededRng rng)
      : batch_size_(batch_size), rng_(std::move(rng)) {
    if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be at least 1");
    bool first = true;
    for (const Dataset* d : datasets) {
      if (d == nullptr) continue;
      if (first) {
        schema_ = d->schema;
        first = false;
      } else if (!(d->schema == schema_)) {
        throw Error(ErrorKind::Shape, "batches: datasets have different schemas");
      }
      for (const auto& s : d->samples) pool_.push_back(&s);
    }
    if (pool_.empty()) throw Error(ErrorKind::InvalidInput, "batches: no samples");
    order_.resize(pool_.size());
  }

  Batch next() {
    if (cursor_ == 0 || cursor_ >= order_.size()) start_epoch();
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    Batch batch = make_batch(pool_, std::span<const std::size_t>(order_).subspan(cursor_, end - cursor_), schema_);
    cursor_ = end;
    return batch;
  }

  /// All batches of the next full epoch.
  std::vector<Batch> epoch() {
    if (cursor_ != 0 && cursor_ < order_.size()) cursor_ = order_.size();
    std::vector<Batch> out;
    do {
      out.push_back(next());
    } while (cursor_ < order_.size());
    return out;
  }

  std::size_t pool_size() const noexcept { return pool_.size(); }
  std::size_t epochs_started() const noexcept { return epochs_; }
  const Sample& sample(std::size_t index) const { return *pool_.at(index); }

 private:
  void start_epoch() {
    for (std::size_t j = 0; j < order_.size(); ++j) order_[j] = j;
    rng_.shuffle(order_);
    cursor_ = 0;
    ++epochs_;
  }

  std::size_t batch_size_;
  SeededRng rng_;
  Schema schema_;
  std::vector<const Sample*> pool_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epochs_ = 0;
};

}  // namespace cmtl
