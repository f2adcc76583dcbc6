#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmtl/error.hpp"
#include "cmtl/losses.hpp"
#include "cmtl/numerics.hpp"
#include "cmtl/text.hpp"

namespace cmtl {

/// Shared ReLU trunk with a K-way softmax head and an M-way sigmoid head.
/// An empty `hidden_dims` makes both heads read the input directly.
struct MlpConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 2;
  std::size_t num_attributes = 1;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (input_dim == 0 || num_classes == 0 || num_attributes == 0) {
      throw Error(ErrorKind::Config, "model dimensions must be positive");
    }
    for (auto h : hidden_dims) {
      if (h == 0) throw Error(ErrorKind::Config, "hidden layer width must be positive");
    }
  }

  std::size_t trunk_width() const { return hidden_dims.empty() ? input_dim : hidden_dims.back(); }

  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

/// Affine map y = x·W + b with W stored fan_in × fan_out.
struct Dense {
  Matrix weight;
  Vector bias;

  std::size_t fan_in() const noexcept { return weight.rows(); }
  std::size_t fan_out() const noexcept { return weight.cols(); }

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct MlpParams {
  MlpConfig config;
  std::vector<Dense> trunk;
  Dense cls_head;
  Dense att_head;

  /// Every parameter tensor in a fixed order: trunk layers (weight, bias),
  /// then class head, then attribute head.
  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for (auto& layer : trunk) {
      out.push_back(layer.weight.values());
      out.push_back(layer.bias);
    }
    out.push_back(cls_head.weight.values());
    out.push_back(cls_head.bias);
    out.push_back(att_head.weight.values());
    out.push_back(att_head.bias);
    return out;
  }

  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for (auto& span : const_cast<MlpParams*>(this)->tensors()) out.emplace_back(span.data(), span.size());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (auto t : tensors()) {
      for (double v : t) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Zero-valued parameters with the shapes implied by `cfg`.
inline MlpParams zero_params(const MlpConfig& cfg) {
  cfg.validate();
  MlpParams p;
  p.config = cfg;
  std::size_t width = cfg.input_dim;
  for (auto h : cfg.hidden_dims) {
    p.trunk.push_back({Matrix(width, h), Vector(h, 0.0)});
    width = h;
  }
  p.cls_head = {Matrix(width, cfg.num_classes), Vector(cfg.num_classes, 0.0)};
  p.att_head = {Matrix(width, cfg.num_attributes), Vector(cfg.num_attributes, 0.0)};
  return p;
}

/// He initialization: N(0, 2/fan_in) weights, zero biases.
inline MlpParams init_params(const MlpConfig& cfg, SeededRng& rng) {
  MlpParams p = zero_params(cfg);
  const auto fill = [&rng](Dense& layer) {
    const double sd = std::sqrt(2.0 / static_cast<double>(layer.fan_in()));
    for (double& w : layer.weight.values()) w = rng.normal(0.0, sd);
  };
  for (auto& layer : p.trunk) fill(layer);
  fill(p.cls_head);
  fill(p.att_head);
  return p;
}

inline MlpParams init_params(const MlpConfig& cfg) {
  SeededRng rng(cfg.init_seed);
  return init_params(cfg, rng);
}

/// Intermediate values kept by forward() for backward().
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre_activations;  // one per trunk layer
  std::vector<Matrix> activations;      // ReLU outputs, one per trunk layer
  Matrix cls_logits;
  Matrix att_logits;

  const Matrix& trunk_output() const { return activations.empty() ? input : activations.back(); }
};

struct ForwardResult {
  Predictions preds;
  ForwardCache cache;
};

namespace detail {

inline Matrix affine(const Matrix& x, const Dense& layer) {
  Matrix out = matmul(x, layer.weight);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
  }
  return out;
}

}  // namespace detail

inline ForwardResult forward(const MlpParams& params, const Matrix& x) {
  if (x.cols() != params.config.input_dim) {
    throw Error(ErrorKind::Shape, "input width " + std::to_string(x.cols()) + " != model input_dim " +
                                      std::to_string(params.config.input_dim));
  }
  if (!x.all_finite()) throw Error(ErrorKind::InvalidInput, "forward: non-finite input");
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.input = x;
  const Matrix* h = &cache.input;
  for (const auto& layer : params.trunk) {
    cache.pre_activations.push_back(detail::affine(*h, layer));
    Matrix act = cache.pre_activations.back();
    for (double& v : act.values()) v = v > 0.0 ? v : 0.0;
    cache.activations.push_back(std::move(act));
    h = &cache.activations.back();
  }
  cache.cls_logits = detail::affine(*h, params.cls_head);
  cache.att_logits = detail::affine(*h, params.att_head);

  Predictions& preds = result.preds;
  preds.cls_probs = Matrix(x.rows(), params.config.num_classes);
  preds.att_probs = Matrix(x.rows(), params.config.num_attributes);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Vector p = softmax(cache.cls_logits.row(r));
    std::copy(p.begin(), p.end(), preds.cls_probs.row(r).begin());
    auto logits = cache.att_logits.row(r);
    auto probs = preds.att_probs.row(r);
    for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = sigmoid(logits[i]);
  }
  return result;
}

/// Gradients share the layout of the parameters they belong to.
using MlpGrads = MlpParams;

inline MlpGrads backward(const MlpParams& params, const ForwardCache& cache, const Matrix& grad_cls_logits,
                         const Matrix& grad_att_logits) {
  const std::size_t b = cache.input.rows();
  if (grad_cls_logits.rows() != b || grad_att_logits.rows() != b ||
      grad_cls_logits.cols() != params.config.num_classes ||
      grad_att_logits.cols() != params.config.num_attributes ||
      cache.pre_activations.size() != params.trunk.size()) {
    throw Error(ErrorKind::State, "backward: cache does not match gradients or parameters");
  }
  for (std::size_t l = 0; l < params.trunk.size(); ++l) {
    if (cache.pre_activations[l].rows() != b || cache.pre_activations[l].cols() != params.trunk[l].bias.size()) {
      throw Error(ErrorKind::State, "backward: cache does not match gradients or parameters");
    }
  }
  MlpGrads grads = zero_params(params.config);

  const auto head_backward = [&](const Dense& head, Dense& grad, const Matrix& upstream) {
    grad.weight = matmul_tn(cache.trunk_output(), upstream);
    for (std::size_t r = 0; r < b; ++r) {
      auto row = upstream.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) grad.bias[c] += row[c];
    }
    return matmul_nt(upstream, head.weight);
  };

  Matrix grad_h = head_backward(params.cls_head, grads.cls_head, grad_cls_logits);
  const Matrix from_att = head_backward(params.att_head, grads.att_head, grad_att_logits);
  {
    auto dst = grad_h.values();
    auto src = from_att.values();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
  }

  for (std::size_t l = params.trunk.size(); l-- > 0;) {
    const Matrix& pre = cache.pre_activations[l];
    auto g = grad_h.values();
    auto z = pre.values();
    for (std::size_t n = 0; n < g.size(); ++n) {
      if (z[n] <= 0.0) g[n] = 0.0;
    }
    const Matrix& below = l == 0 ? cache.input : cache.activations[l - 1];
    grads.trunk[l].weight = matmul_tn(below, grad_h);
    for (std::size_t r = 0; r < b; ++r) {
      auto row = grad_h.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) grads.trunk[l].bias[c] += row[c];
    }
    if (l > 0) grad_h = matmul_nt(grad_h, params.trunk[l].weight);
  }
  return grads;
}

inline constexpr const char* kCheckpointMagic = "cmtl-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Parameters plus the class/attribute names they were trained on. The names
/// may be empty when the checkpoint was written without a schema.
struct Checkpoint {
  MlpParams params;
  std::vector<std::string> class_names;
  std::vector<std::string> attribute_names;
};

/// Text checkpoint: a config echo followed by every tensor as C99 hex floats,
/// which reload bit-exactly.
inline std::string write_checkpoint(const MlpParams& params, const std::vector<std::string>& class_names = {},
                                    const std::vector<std::string>& attribute_names = {}) {
  std::ostringstream out;
  const auto& cfg = params.config;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "classes " << text::join(class_names, ",") << '\n';
  out << "attributes " << text::join(attribute_names, ",") << '\n';
  out << "input_dim " << cfg.input_dim << '\n';
  out << "hidden_dims";
  for (auto h : cfg.hidden_dims) out << ' ' << h;
  out << '\n';
  out << "num_classes " << cfg.num_classes << '\n';
  out << "num_attributes " << cfg.num_attributes << '\n';
  out << "init_seed " << cfg.init_seed << '\n';
  const auto tensors = params.tensors();
  out << "tensors " << tensors.size() << '\n';
  char buf[40];
  for (auto t : tensors) {
    out << t.size();
    for (double v : t) {
      std::snprintf(buf, sizeof buf, " %a", v);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

inline Checkpoint read_checkpoint(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  const auto next = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
    ++line_no;
    return std::istringstream(line);
  };
  const auto expect_key = [&](std::istringstream& ls, const char* key) {
    std::string k;
    ls >> k;
    if (k != key) throw ParseError(line_no, std::string("expected '") + key + "'");
  };

  {
    auto ls = next();
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kCheckpointMagic) throw ParseError(line_no, "not a checkpoint file");
    if (version != kCheckpointVersion) throw ParseError(line_no, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto read_names = [&](const char* key, std::vector<std::string>& names) {
    next();
    const auto space = line.find(' ');
    if (line.substr(0, space) != key) throw ParseError(line_no, std::string("expected '") + key + "'");
    if (space == std::string::npos) return;
    const auto rest = text::trim(std::string_view(line).substr(space + 1));
    if (rest.empty()) return;
    for (auto piece : text::split(rest, ',')) names.emplace_back(text::trim(piece));
  };
  read_names("classes", ckpt.class_names);
  read_names("attributes", ckpt.attribute_names);
  MlpConfig cfg;
  {
    auto ls = next();
    expect_key(ls, "input_dim");
    ls >> cfg.input_dim;
  }
  {
    auto ls = next();
    expect_key(ls, "hidden_dims");
    std::size_t h;
    while (ls >> h) cfg.hidden_dims.push_back(h);
  }
  {
    auto ls = next();
    expect_key(ls, "num_classes");
    ls >> cfg.num_classes;
  }
  {
    auto ls = next();
    expect_key(ls, "num_attributes");
    ls >> cfg.num_attributes;
  }
  {
    auto ls = next();
    expect_key(ls, "init_seed");
    ls >> cfg.init_seed;
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ParseError(line_no, e.message());
  }
  if ((!ckpt.class_names.empty() && ckpt.class_names.size() != cfg.num_classes) ||
      (!ckpt.attribute_names.empty() && ckpt.attribute_names.size() != cfg.num_attributes)) {
    throw ParseError(line_no, "name lists do not match model dimensions");
  }
  ckpt.params = zero_params(cfg);
  auto tensors = ckpt.params.tensors();
  {
    auto ls = next();
    expect_key(ls, "tensors");
    std::size_t count = 0;
    ls >> count;
    if (count != tensors.size()) throw ParseError(line_no, "tensor count does not match config");
  }
  for (auto t : tensors) {
    auto ls = next();
    std::size_t size = 0;
    ls >> size;
    if (size != t.size()) throw ParseError(line_no, "tensor size does not match config");
    for (double& v : t) {
      std::string token;
      if (!(ls >> token)) throw ParseError(line_no, "truncated tensor");
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size() || !std::isfinite(v)) throw ParseError(line_no, "bad value '" + token + "'");
    }
  }
  return ckpt;
}

}  // namespace cmtl
