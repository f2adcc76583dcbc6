#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmtl/error.hpp"
#include "cmtl/numerics.hpp"

namespace cmtl {

/// Names of the K classes and M binary attributes, plus the feature width.
struct Schema {
  std::vector<std::string> class_names;
  std::vector<std::string> attribute_names;
  std::size_t feature_dim = 0;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::size_t num_attributes() const noexcept { return attribute_names.size(); }

  std::optional<std::size_t> class_index(const std::string& name) const {
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      if (class_names[c] == name) return c;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attribute_names.size(); ++i) {
      if (attribute_names[i] == name) return i;
    }
    return std::nullopt;
  }

  friend bool operator==(const Schema&, const Schema&) = default;
};

/// One partially annotated example. `att_labels[i]` is only meaningful where
/// `att_mask[i] == 1` and is kept at 0 elsewhere. `cls_soft`, when set, is a
/// class distribution that replaces the one-hot target in the class loss;
/// `cls_label` then holds its argmax.
struct Sample {
  Vector features;
  std::optional<std::size_t> cls_label;
  std::optional<Vector> cls_soft;
  std::vector<std::uint8_t> att_labels;
  std::vector<std::uint8_t> att_mask;

  std::size_t annotated_attributes() const {
    std::size_t n = 0;
    for (auto m : att_mask) n += m;
    return n;
  }

  bool has_attributes() const { return annotated_attributes() > 0; }

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  Schema schema;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  bool has_class_labels() const {
    for (const auto& s : samples) {
      if (s.cls_label) return true;
    }
    return false;
  }

  bool has_attribute_labels() const {
    for (const auto& s : samples) {
      if (s.has_attributes()) return true;
    }
    return false;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void validate_schema(const Schema& schema) {
  if (schema.class_names.size() < 2) throw Error(ErrorKind::Config, "schema needs at least 2 classes");
  if (schema.attribute_names.empty()) throw Error(ErrorKind::Config, "schema needs at least 1 attribute");
  if (schema.feature_dim == 0) throw Error(ErrorKind::Config, "schema feature_dim must be positive");
}

inline void validate_sample(const Schema& schema, const Sample& s, std::size_t index) {
  const auto where = [&] { return "sample " + std::to_string(index) + ": "; };
  if (s.features.size() != schema.feature_dim) throw Error(ErrorKind::Shape, where() + "feature width mismatch");
  check_finite(s.features, "sample features");
  if (s.att_labels.size() != schema.num_attributes() || s.att_mask.size() != schema.num_attributes()) {
    throw Error(ErrorKind::Shape, where() + "attribute width mismatch");
  }
  if (s.cls_label && *s.cls_label >= schema.num_classes()) throw Error(ErrorKind::Label, where() + "class out of range");
  if (s.cls_soft) {
    if (!s.cls_label) throw Error(ErrorKind::Label, where() + "soft class target without a class label");
    if (s.cls_soft->size() != schema.num_classes()) throw Error(ErrorKind::Shape, where() + "soft class target width mismatch");
    double total = 0.0;
    for (double t : *s.cls_soft) {
      if (!std::isfinite(t) || t < 0.0) throw Error(ErrorKind::Label, where() + "soft class target entry outside [0,1]");
      total += t;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::Label, where() + "soft class target does not sum to 1");
  }
  for (std::size_t i = 0; i < s.att_mask.size(); ++i) {
    if (s.att_mask[i] > 1 || s.att_labels[i] > 1) throw Error(ErrorKind::Label, where() + "attribute value outside {0,1}");
    if (s.att_mask[i] == 0 && s.att_labels[i] != 0) throw Error(ErrorKind::Label, where() + "label set on masked attribute");
  }
  if (!s.cls_label && !s.has_attributes()) throw Error(ErrorKind::Label, where() + "sample carries no annotation");
}

inline void validate_dataset(const Dataset& data) {
  validate_schema(data.schema);
  if (data.empty()) throw Error(ErrorKind::InvalidInput, "dataset is empty");
  for (std::size_t j = 0; j < data.samples.size(); ++j) validate_sample(data.schema, data.samples[j], j);
}

/// Concatenates datasets that share a schema.
inline Dataset concat(const std::vector<const Dataset*>& parts) {
  Dataset out;
  bool first = true;
  for (const Dataset* d : parts) {
    if (d == nullptr || d->empty()) continue;
    if (first) {
      out.schema = d->schema;
      first = false;
    } else if (!(d->schema == out.schema)) {
      throw Error(ErrorKind::Shape, "concat: schema mismatch");
    }
    out.samples.insert(out.samples.end(), d->samples.begin(), d->samples.end());
  }
  return out;
}

}  // namespace cmtl
