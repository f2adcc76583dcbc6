#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmtl/dataset.hpp"
#include "cmtl/error.hpp"
#include "cmtl/numerics.hpp"
#include "cmtl/text.hpp"

namespace cmtl {

enum class RelationKind { None, Prototypical, Observational, Empirical };

inline const char* to_string(RelationKind kind) {
  switch (kind) {
    case RelationKind::None: return "none";
    case RelationKind::Prototypical: return "prototypical";
    case RelationKind::Observational: return "observational";
    case RelationKind::Empirical: return "empirical";
  }
  return "none";
}

struct Relation {
  RelationKind kind = RelationKind::None;
  double weight = 0.0;

  friend bool operator==(const Relation&, const Relation&) = default;
};

/// Class-to-attribute relatedness: for every (class, attribute) pair, how the
/// attribute relates to the class and with which weight.
///
/// Prototypical pairs always carry weight 1, unrelated pairs weight 0, and
/// observational or empirical pairs a weight in (0, 1].
class RelatednessSpec {
 public:
  RelatednessSpec(std::vector<std::string> class_names, std::vector<std::string> attribute_names)
      : class_names_(std::move(class_names)),
        attribute_names_(std::move(attribute_names)),
        entries_(class_names_.size() * attribute_names_.size()) {
    if (class_names_.size() < 2) throw Error(ErrorKind::Config, "relatedness needs at least 2 classes");
    if (attribute_names_.empty()) throw Error(ErrorKind::Config, "relatedness needs at least 1 attribute");
    require_unique(class_names_, "class");
    require_unique(attribute_names_, "attribute");
  }

  std::size_t num_classes() const noexcept { return class_names_.size(); }
  std::size_t num_attributes() const noexcept { return attribute_names_.size(); }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const std::vector<std::string>& attribute_names() const noexcept { return attribute_names_; }

  const Relation& at(std::size_t cls, std::size_t att) const { return entries_.at(cls * num_attributes() + att); }

  void set(std::size_t cls, std::size_t att, RelationKind kind, double weight = 1.0) {
    if (cls >= num_classes() || att >= num_attributes()) throw Error(ErrorKind::Shape, "relatedness index out of range");
    switch (kind) {
      case RelationKind::None:
        weight = 0.0;
        break;
      case RelationKind::Prototypical:
        weight = 1.0;
        break;
      case RelationKind::Observational:
      case RelationKind::Empirical:
        if (!(weight > 0.0 && weight <= 1.0)) {
          throw Error(ErrorKind::Config, std::string(to_string(kind)) + " weight must lie in (0,1], got " +
                                             std::to_string(weight));
        }
        break;
    }
    entries_[cls * num_attributes() + att] = {kind, weight};
  }

  std::optional<std::size_t> class_index(std::string_view name) const { return find(class_names_, name); }
  std::optional<std::size_t> attribute_index(std::string_view name) const { return find(attribute_names_, name); }

  friend bool operator==(const RelatednessSpec&, const RelatednessSpec&) = default;

 private:
  static std::optional<std::size_t> find(const std::vector<std::string>& names, std::string_view name) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    return std::nullopt;
  }

  static void require_unique(const std::vector<std::string>& names, const char* what) {
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw Error(ErrorKind::Config, std::string("empty ") + what + " name");
      if (!seen.insert(n).second) throw Error(ErrorKind::Config, std::string("duplicate ") + what + " name '" + n + "'");
    }
  }

  std::vector<std::string> class_names_;
  std::vector<std::string> attribute_names_;
  std::vector<Relation> entries_;
};

/// p(attribute | class) used to build the attribute mixture q = p(class)·mix.
struct MixtureMatrix {
  Matrix values;
};

/// Per-class attribute weights of the soft class indicator, with row sums.
struct IndicatorWeights {
  Matrix values;
  Vector row_sums;

  bool row_is_empty(std::size_t cls) const { return row_sums[cls] == 0.0; }
};

struct MixtureOptions {
  /// When set, empirical weights at or above the threshold map to 1 and the
  /// rest to 0.
  std::optional<double> binarize_threshold;
};

inline MixtureMatrix mixture_matrix(const RelatednessSpec& spec, const MixtureOptions& options = {}) {
  if (options.binarize_threshold && !(*options.binarize_threshold >= 0.0 && *options.binarize_threshold <= 1.0)) {
    throw Error(ErrorKind::Config, "binarize threshold must lie in [0,1]");
  }
  Matrix m(spec.num_classes(), spec.num_attributes());
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    for (std::size_t i = 0; i < spec.num_attributes(); ++i) {
      const Relation& r = spec.at(c, i);
      switch (r.kind) {
        case RelationKind::Prototypical:
        case RelationKind::Observational:
          m(c, i) = 1.0;
          break;
        case RelationKind::Empirical:
          if (options.binarize_threshold) {
            m(c, i) = r.weight >= *options.binarize_threshold ? 1.0 : 0.0;
          } else {
            m(c, i) = r.weight;
          }
          break;
        case RelationKind::None:
          m(c, i) = 0.0;
          break;
      }
    }
  }
  return {std::move(m)};
}

inline IndicatorWeights indicator_weights(const RelatednessSpec& spec) {
  IndicatorWeights iw{Matrix(spec.num_classes(), spec.num_attributes()), Vector(spec.num_classes(), 0.0)};
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < spec.num_attributes(); ++i) {
      const double w = spec.at(c, i).weight;
      iw.values(c, i) = w;
      total += w;
    }
    iw.row_sums[c] = total;
  }
  return iw;
}

namespace detail {

inline std::vector<std::string> split_names(std::string_view list, std::size_t line_no, const char* what) {
  std::vector<std::string> out;
  for (auto& piece : text::split(list, ',')) {
    auto name = std::string(text::trim(piece));
    if (name.empty()) throw ParseError(line_no, std::string("empty ") + what + " name");
    out.push_back(std::move(name));
  }
  return out;
}

inline double parse_weight(std::string_view text, std::size_t line_no) {
  auto value = text::parse_double(text::trim(text));
  if (!value) throw ParseError(line_no, "bad weight '" + std::string(text) + "'");
  if (!(*value >= 0.0 && *value <= 1.0)) throw ParseError(line_no, "weight " + std::string(text) + " outside [0,1]");
  return *value;
}

}  // namespace detail

/// Parses the relatedness text format:
///
///   classes: happiness, sadness, ...
///   attributes: AU1, AU2, ...
///   happiness: proto=AU12,AU25; obs=AU6:0.51
///   neutral:
///   happiness: emp=AU12:0.82,AU25:0.7
///
/// `#` starts a comment. Pairs that are not listed are unrelated.
inline RelatednessSpec load_relatedness(std::string_view content) {
  std::optional<std::vector<std::string>> classes;
  std::optional<std::vector<std::string>> attributes;
  std::optional<RelatednessSpec> spec;
  std::set<std::size_t> seen_rows;

  const auto lines = text::split(content, '\n');
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::size_t line_no = n + 1;
    std::string_view line = lines[n];
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;

    const auto colon = line.find(':');
    if (colon == std::string_view::npos) throw ParseError(line_no, "expected '<name>: ...'");
    const auto key = text::trim(line.substr(0, colon));
    const auto body = text::trim(line.substr(colon + 1));

    if (!spec && key == "classes") {
      if (classes) throw ParseError(line_no, "duplicate classes header");
      classes = detail::split_names(body, line_no, "class");
      if (classes->size() < 2) throw ParseError(line_no, "fewer than 2 classes");
    } else if (!spec && key == "attributes") {
      if (attributes) throw ParseError(line_no, "duplicate attributes header");
      attributes = detail::split_names(body, line_no, "attribute");
      if (attributes->empty()) throw ParseError(line_no, "no attributes");
    } else {
      if (!classes || !attributes) throw ParseError(line_no, "class line before classes/attributes headers");
      if (!spec) {
        try {
          spec.emplace(*classes, *attributes);
        } catch (const Error& e) {
          throw ParseError(line_no, e.message());
        }
      }
      const auto cls = spec->class_index(key);
      if (!cls) throw ParseError(line_no, "unknown class '" + std::string(key) + "'");
      if (!seen_rows.insert(*cls).second) throw ParseError(line_no, "duplicate line for class '" + std::string(key) + "'");

      for (auto clause : text::split(body, ';')) {
        clause = text::trim(clause);
        if (clause.empty()) continue;
        const auto eq = clause.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected proto=, obs= or emp=");
        const auto tag = text::trim(clause.substr(0, eq));
        const auto list = text::trim(clause.substr(eq + 1));
        RelationKind kind;
        if (tag == "proto") {
          kind = RelationKind::Prototypical;
        } else if (tag == "obs") {
          kind = RelationKind::Observational;
        } else if (tag == "emp") {
          kind = RelationKind::Empirical;
        } else {
          throw ParseError(line_no, "unknown relation tag '" + std::string(tag) + "'");
        }
        if (list.empty()) continue;
        for (auto item : text::split(list, ',')) {
          item = text::trim(item);
          std::string_view name = item;
          double weight = 1.0;
          if (kind != RelationKind::Prototypical) {
            const auto sep = item.rfind(':');
            if (sep == std::string_view::npos) throw ParseError(line_no, "missing weight for '" + std::string(item) + "'");
            name = text::trim(item.substr(0, sep));
            weight = detail::parse_weight(item.substr(sep + 1), line_no);
          }
          const auto att = spec->attribute_index(name);
          if (!att) throw ParseError(line_no, "unknown attribute '" + std::string(name) + "'");
          if (spec->at(*cls, *att).kind != RelationKind::None) {
            throw ParseError(line_no, "duplicate pair (" + std::string(key) + ", " + std::string(name) + ")");
          }
          if (kind == RelationKind::Empirical && weight == 0.0) continue;
          if (kind == RelationKind::Observational && weight == 0.0) {
            throw ParseError(line_no, "observational weight must be positive");
          }
          spec->set(*cls, *att, kind, weight);
        }
      }
    }
  }
  if (!classes) throw ParseError(lines.size(), "missing classes header");
  if (!attributes) throw ParseError(lines.size(), "missing attributes header");
  if (!spec) {
    try {
      spec.emplace(*classes, *attributes);
    } catch (const Error& e) {
      throw ParseError(lines.size(), e.message());
    }
  }
  return *std::move(spec);
}

inline RelatednessSpec load_relatedness_file(const std::string& path) {
  return load_relatedness(text::read_file(path));
}

/// Inverse of load_relatedness; weights are written with enough digits to
/// reload bit-for-bit.
inline std::string write_relatedness(const RelatednessSpec& spec) {
  std::ostringstream out;
  out << "classes: " << text::join(spec.class_names(), ", ") << '\n';
  out << "attributes: " << text::join(spec.attribute_names(), ", ") << '\n';
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    std::vector<std::string> proto, obs, emp;
    for (std::size_t i = 0; i < spec.num_attributes(); ++i) {
      const auto& r = spec.at(c, i);
      const auto& name = spec.attribute_names()[i];
      switch (r.kind) {
        case RelationKind::Prototypical: proto.push_back(name); break;
        case RelationKind::Observational: obs.push_back(name + ":" + text::format_double(r.weight)); break;
        case RelationKind::Empirical: emp.push_back(name + ":" + text::format_double(r.weight)); break;
        case RelationKind::None: break;
      }
    }
    std::vector<std::string> clauses;
    if (!proto.empty()) clauses.push_back("proto=" + text::join(proto, ","));
    if (!obs.empty()) clauses.push_back("obs=" + text::join(obs, ","));
    if (!emp.empty()) clauses.push_back("emp=" + text::join(emp, ","));
    out << spec.class_names()[c] << ':';
    if (!clauses.empty()) out << ' ' << text::join(clauses, "; ");
    out << '\n';
  }
  return out.str();
}

/// Estimates p(attribute | class) from co-annotated samples:
///   #(class = c, attribute i annotated and active) / #(class = c, attribute i annotated).
inline RelatednessSpec infer_relatedness(const Dataset& data) {
  const auto& schema = data.schema;
  const std::size_t k = schema.num_classes();
  const std::size_t m = schema.num_attributes();
  std::vector<std::size_t> active(k * m, 0), annotated(k * m, 0);
  for (std::size_t j = 0; j < data.samples.size(); ++j) {
    const auto& s = data.samples[j];
    if (!s.cls_label) throw Error(ErrorKind::Inference, "sample " + std::to_string(j) + " has no class label");
    const std::size_t c = *s.cls_label;
    for (std::size_t i = 0; i < m; ++i) {
      if (!s.att_mask[i]) continue;
      ++annotated[c * m + i];
      active[c * m + i] += s.att_labels[i];
    }
  }
  RelatednessSpec spec(schema.class_names, schema.attribute_names);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t denom = annotated[c * m + i];
      if (denom == 0) {
        throw Error(ErrorKind::Inference, "no annotated samples for class '" + schema.class_names[c] +
                                              "' and attribute '" + schema.attribute_names[i] + "'");
      }
      const double w = static_cast<double>(active[c * m + i]) / static_cast<double>(denom);
      if (w > 0.0) spec.set(c, i, RelationKind::Empirical, w);
    }
  }
  return spec;
}

}  // namespace cmtl
