#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmtl/config.hpp"
#include "cmtl/data.hpp"
#include "cmtl/dataset.hpp"
#include "cmtl/error.hpp"
#include "cmtl/losses.hpp"
#include "cmtl/metrics.hpp"
#include "cmtl/model.hpp"
#include "cmtl/optimizer.hpp"
#include "cmtl/relatedness.hpp"
#include "cmtl/text.hpp"

namespace cmtl {

enum class Mode { StCls, StAtt, MtNc, MtC, StTeacherMt };

inline const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::StCls: return "st_cls";
    case Mode::StAtt: return "st_att";
    case Mode::MtNc: return "mt_nc";
    case Mode::MtC: return "mt_c";
    case Mode::StTeacherMt: return "st_teacher_mt";
  }
  return "unknown";
}

inline Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::StCls, Mode::StAtt, Mode::MtNc, Mode::MtC, Mode::StTeacherMt}) {
    if (name == to_string(m)) return m;
  }
  throw Error(ErrorKind::Config, "unknown mode '" + name + "'");
}

inline bool is_single_task(Mode mode) { return mode == Mode::StCls || mode == Mode::StAtt; }

struct RelatednessSource {
  enum class Kind { None, File, Empirical, Oracle };
  Kind kind = Kind::None;
  /// .rel file for File; optional co-annotated CSV for Empirical (the joint
  /// training split is used when empty).
  std::string path;
  std::optional<double> binarize_threshold;
};

struct DataSource {
  bool synthetic = true;
  SynthConfig synth;
  std::string schema_path;
  std::string cls_only_path;
  std::string att_only_path;
  std::string joint_path;
  std::string test_path;
};

struct ExperimentConfig {
  Mode mode = Mode::MtC;
  LossWeights weights;
  LossOptions loss_options;
  RelatednessSource relatedness{RelatednessSource::Kind::Oracle, {}, {}};
  OptimizerConfig optimizer;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  std::size_t eval_every = 500;
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden_dims{32};
  DataSource data;

  /// Loss weights after the mode has switched terms off: single-task modes
  /// keep only their own head's term, mt_nc drops both coupling terms.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    switch (mode) {
      case Mode::StCls: w.att = w.dm = w.sca = 0.0; break;
      case Mode::StAtt: w.cls = w.dm = w.sca = 0.0; break;
      case Mode::MtNc:
      case Mode::StTeacherMt: w.dm = w.sca = 0.0; break;
      case Mode::MtC: break;
    }
    return w;
  }

  void validate() const {
    weights.validate();
    validate_log_eps(loss_options.eps);
    optimizer.validate();
    if (steps < 1) throw Error(ErrorKind::Config, "steps must be at least 1");
    if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be at least 1");
    if (eval_every < 1) throw Error(ErrorKind::Config, "eval_every must be at least 1");
    for (auto h : hidden_dims) {
      if (h == 0) throw Error(ErrorKind::Config, "hidden layer width must be positive");
    }
    const auto w = effective_weights();
    if ((w.dm > 0.0 || w.sca > 0.0) && relatedness.kind == RelatednessSource::Kind::None) {
      throw Error(ErrorKind::Config, "mode mt_c requires a relatedness source");
    }
  }
};

inline const std::set<std::string>& experiment_config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k{
        "experiment.mode", "experiment.seed", "experiment.steps", "experiment.batch_size", "experiment.eval_every",
        "loss.lambda_cls", "loss.lambda_att", "loss.lambda_dm", "loss.lambda_sca", "loss.eps", "loss.symmetric_dm",
        "loss.dm_stop_cls_grad", "loss.renorm_observed", "relatedness.source", "relatedness.path",
        "relatedness.binarize_threshold", "optimizer.learning_rate", "optimizer.beta1", "optimizer.beta2",
        "optimizer.epsilon", "optimizer.sgd", "model.hidden_dims", "data.source", "data.synth_config", "data.schema",
        "data.train_cls_only", "data.train_att_only", "data.train_joint", "data.test"};
    const auto& synth = synth_config_keys("synth.");
    k.insert(synth.begin(), synth.end());
    return k;
  }();
  return keys;
}

/// Reads an experiment from the sectioned `key = value` format. Relative paths
/// resolve against the file's directory.
inline ExperimentConfig experiment_config_from(const ConfigFile& file) {
  file.reject_unknown(experiment_config_keys());
  ExperimentConfig cfg;
  cfg.mode = parse_mode(file.get_string("experiment.mode", to_string(cfg.mode)));
  cfg.seed = file.get_uint("experiment.seed", cfg.seed);
  cfg.steps = file.get_uint("experiment.steps", cfg.steps);
  cfg.batch_size = file.get_uint("experiment.batch_size", cfg.batch_size);
  cfg.eval_every = file.get_uint("experiment.eval_every", cfg.eval_every);

  cfg.weights.cls = file.get_double("loss.lambda_cls", cfg.weights.cls);
  cfg.weights.att = file.get_double("loss.lambda_att", cfg.weights.att);
  cfg.weights.dm = file.get_double("loss.lambda_dm", cfg.weights.dm);
  cfg.weights.sca = file.get_double("loss.lambda_sca", cfg.weights.sca);
  cfg.loss_options.eps = file.get_double("loss.eps", cfg.loss_options.eps);
  cfg.loss_options.symmetric_dm = file.get_bool("loss.symmetric_dm", false);
  cfg.loss_options.dm_stop_cls_grad = file.get_bool("loss.dm_stop_cls_grad", false);
  cfg.loss_options.renorm_observed = file.get_bool("loss.renorm_observed", false);

  const auto source = file.get_string("relatedness.source", "oracle");
  if (source == "none") {
    cfg.relatedness.kind = RelatednessSource::Kind::None;
  } else if (source == "file") {
    cfg.relatedness.kind = RelatednessSource::Kind::File;
    auto path = file.path("relatedness.path");
    if (!path) throw Error(ErrorKind::Config, "relatedness.source = file needs relatedness.path");
    cfg.relatedness.path = *path;
  } else if (source == "empirical") {
    cfg.relatedness.kind = RelatednessSource::Kind::Empirical;
    cfg.relatedness.path = file.path("relatedness.path").value_or("");
  } else if (source == "oracle") {
    cfg.relatedness.kind = RelatednessSource::Kind::Oracle;
  } else {
    throw Error(ErrorKind::Config, "unknown relatedness.source '" + source + "'");
  }
  if (file.has("relatedness.binarize_threshold")) {
    cfg.relatedness.binarize_threshold = file.get_double("relatedness.binarize_threshold", 0.5);
  }

  cfg.optimizer.learning_rate = file.get_double("optimizer.learning_rate", cfg.optimizer.learning_rate);
  cfg.optimizer.beta1 = file.get_double("optimizer.beta1", cfg.optimizer.beta1);
  cfg.optimizer.beta2 = file.get_double("optimizer.beta2", cfg.optimizer.beta2);
  cfg.optimizer.epsilon = file.get_double("optimizer.epsilon", cfg.optimizer.epsilon);
  cfg.optimizer.plain_sgd = file.get_bool("optimizer.sgd", false);

  {
    const auto dims = file.get_uint_list("model.hidden_dims", {cfg.hidden_dims.begin(), cfg.hidden_dims.end()});
    cfg.hidden_dims.assign(dims.begin(), dims.end());
  }

  const auto data_source = file.get_string("data.source", "synthetic");
  if (data_source == "synthetic") {
    cfg.data.synthetic = true;
    if (auto synth_path = file.path("data.synth_config")) {
      const auto synth_file = ConfigFile::load(*synth_path);
      synth_file.reject_unknown(synth_config_keys(""));
      cfg.data.synth = synth_config_from(synth_file);
    } else {
      cfg.data.synth = synth_config_from(file, "synth.");
    }
  } else if (data_source == "csv") {
    cfg.data.synthetic = false;
    auto schema = file.path("data.schema");
    auto test = file.path("data.test");
    if (!schema || !test) throw Error(ErrorKind::Config, "data.source = csv needs data.schema and data.test");
    cfg.data.schema_path = *schema;
    cfg.data.test_path = *test;
    cfg.data.cls_only_path = file.path("data.train_cls_only").value_or("");
    cfg.data.att_only_path = file.path("data.train_att_only").value_or("");
    cfg.data.joint_path = file.path("data.train_joint").value_or("");
  } else {
    throw Error(ErrorKind::Config, "unknown data.source '" + data_source + "'");
  }
  cfg.validate();
  return cfg;
}

/// Training and test splits of one experiment.
struct ExperimentData {
  Schema schema;
  Dataset cls_only;
  Dataset att_only;
  Dataset joint;
  Dataset test;
  std::optional<RelatednessSpec> true_relatedness;
};

inline ExperimentData load_experiment_data(const DataSource& source) {
  ExperimentData data;
  if (source.synthetic) {
    auto splits = gen_synthetic(source.synth);
    data.schema = source.synth.schema();
    data.cls_only = std::move(splits.train_cls_only);
    data.att_only = std::move(splits.train_att_only);
    data.joint = std::move(splits.train_joint);
    data.test = std::move(splits.test);
    data.true_relatedness = source.synth.true_relatedness;
    return data;
  }
  data.schema = parse_schema(text::read_file(source.schema_path));
  const auto load = [&](const std::string& path, Dataset& out) {
    out.schema = data.schema;
    if (!path.empty()) out = parse_dataset(text::read_file(path), data.schema);
  };
  load(source.cls_only_path, data.cls_only);
  load(source.att_only_path, data.att_only);
  load(source.joint_path, data.joint);
  load(source.test_path, data.test);
  return data;
}

/// Builds the coupling matrices for the configured relatedness source, or
/// nothing when the source is `none`.
inline std::optional<Coupling> resolve_coupling(const RelatednessSource& source, const ExperimentData& data) {
  std::optional<RelatednessSpec> spec;
  switch (source.kind) {
    case RelatednessSource::Kind::None: return std::nullopt;
    case RelatednessSource::Kind::File: spec = load_relatedness_file(source.path); break;
    case RelatednessSource::Kind::Empirical:
      if (source.path.empty()) {
        if (data.joint.empty()) throw Error(ErrorKind::Config, "empirical relatedness needs co-annotated data");
        spec = infer_relatedness(data.joint);
      } else {
        spec = infer_relatedness(parse_dataset(text::read_file(source.path), data.schema));
      }
      break;
    case RelatednessSource::Kind::Oracle:
      if (!data.true_relatedness) throw Error(ErrorKind::Config, "oracle relatedness needs synthetic data");
      spec = data.true_relatedness;
      break;
  }
  if (spec->class_names() != data.schema.class_names || spec->attribute_names() != data.schema.attribute_names) {
    throw Error(ErrorKind::Config, "relatedness class/attribute names do not match the data schema");
  }
  return Coupling::from(*spec, {source.binarize_threshold});
}

struct RunRecord {
  std::size_t step = 0;
  double l_cls = 0.0;
  double l_att = 0.0;
  double l_dm = 0.0;
  double l_sca = 0.0;
  double l_total = 0.0;
  MetricsByTask test_metrics;
};

struct RunLog {
  std::vector<RunRecord> records;
  std::string checkpoint;

  std::string to_csv() const {
    std::ostringstream out;
    out << "step,l_cls,l_att,l_dm,l_sca,l_total";
    for (Task task : {Task::Classification, Task::Attributes}) {
      for (const auto& name : TaskMetrics::names()) out << ',' << to_string(task) << '_' << name;
    }
    out << '\n';
    for (const auto& r : records) {
      out << r.step;
      for (double v : {r.l_cls, r.l_att, r.l_dm, r.l_sca, r.l_total}) out << ',' << text::format_double(v);
      for (Task task : {Task::Classification, Task::Attributes}) {
        const auto it = r.test_metrics.find(task);
        for (const auto& name : TaskMetrics::names()) {
          out << ',';
          if (it != r.test_metrics.end()) out << text::format_double(it->second.get(name));
        }
      }
      out << '\n';
    }
    return out.str();
  }
};

inline void check_schema_matches(const MlpParams& params, const Schema& schema) {
  if (params.config.input_dim != schema.feature_dim || params.config.num_classes != schema.num_classes() ||
      params.config.num_attributes != schema.num_attributes()) {
    throw Error(ErrorKind::Shape, "dataset schema does not match the model dimensions");
  }
}

/// Class decisions by argmax, attribute decisions at 0.5.
struct Decisions {
  std::vector<std::size_t> classes;
  Matrix attributes;
};

inline Decisions decide(const Predictions& preds) {
  Decisions d;
  d.classes.resize(preds.batch_size());
  d.attributes = Matrix(preds.batch_size(), preds.num_attributes());
  for (std::size_t j = 0; j < preds.batch_size(); ++j) {
    auto row = preds.cls_probs.row(j);
    d.classes[j] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    for (std::size_t i = 0; i < preds.num_attributes(); ++i) d.attributes(j, i) = preds.att_probs(j, i) >= 0.5 ? 1.0 : 0.0;
  }
  return d;
}

inline Predictions predict(const MlpParams& params, const Dataset& data) {
  check_schema_matches(params, data.schema);
  if (data.empty()) throw Error(ErrorKind::InvalidInput, "predict on empty dataset");
  return forward(params, make_batch(data).features).preds;
}

/// Metrics for every task the dataset annotates; tasks without labels are
/// left out rather than scored as zero.
inline MetricsByTask evaluate(const MlpParams& params, const Dataset& data) {
  const Predictions preds = predict(params, data);
  const Decisions dec = decide(preds);
  MetricsByTask out;
  std::vector<std::size_t> pred_cls, true_cls;
  for (std::size_t j = 0; j < data.size(); ++j) {
    if (const auto& y = data.samples[j].cls_label) {
      pred_cls.push_back(dec.classes[j]);
      true_cls.push_back(*y);
    }
  }
  if (!true_cls.empty()) out[Task::Classification] = classification_metrics(pred_cls, true_cls, data.schema.num_classes());
  if (data.has_attribute_labels()) {
    const Batch all = make_batch(data);
    out[Task::Attributes] = attribute_metrics(dec.attributes, all.labels.att_labels, all.labels.att_mask);
  }
  return out;
}

/// Per-sample probabilities as CSV: `id,p_<class>...,q_<attribute>...`.
inline std::string prediction_dump(const MlpParams& params, const Dataset& data) {
  const Predictions preds = predict(params, data);
  std::ostringstream out;
  out << "id";
  for (const auto& c : data.schema.class_names) out << ",p_" << c;
  for (const auto& a : data.schema.attribute_names) out << ",q_" << a;
  out << '\n';
  for (std::size_t j = 0; j < data.size(); ++j) {
    out << j;
    for (double v : preds.cls_probs.row(j)) out << ',' << text::format_double(v);
    for (double v : preds.att_probs.row(j)) out << ',' << text::format_double(v);
    out << '\n';
  }
  return out.str();
}

struct TrainResult {
  RunLog log;
  MlpParams initial_params;
  MlpParams params;
  MetricsByTask final_metrics;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Forward pass during training; overflowing activations are reported as
// divergence at `step`.
inline ForwardResult checked_forward(const MlpParams& params, const Matrix& x, std::size_t step) {
  try {
    return forward(params, x);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InvalidInput) throw;
    throw Error(ErrorKind::Divergence, "non-finite activations at step " + std::to_string(step));
  }
}

inline RunRecord make_record(std::size_t step, const MlpParams& params, const Batch& pool, const Coupling* coupling,
                             const LossWeights& weights, const LossOptions& options, const Dataset& test) {
  RunRecord rec;
  rec.step = step;
  const auto fwd = checked_forward(params, pool.features, step);
  const auto report = loss_total(fwd.preds, pool.labels, coupling, weights, options);
  rec.l_cls = report.l_cls;
  rec.l_att = report.l_att;
  rec.l_dm = report.l_dm;
  rec.l_sca = report.l_sca;
  rec.l_total = report.l_total;
  if (!test.empty()) rec.test_metrics = evaluate(params, test);
  return rec;
}

}  // namespace detail

/// Minimizes the weighted objective over minibatches pooled from `train_sets`.
/// Records the full-pool loss and test metrics at step 0, every `eval_every`
/// steps and at the last step.
inline TrainResult train_on(const ExperimentConfig& cfg, const std::vector<const Dataset*>& train_sets,
                            const Dataset& test, const Coupling* coupling) {
  cfg.validate();
  const LossWeights weights = cfg.effective_weights();
  if ((weights.dm > 0.0 || weights.sca > 0.0) && coupling == nullptr) {
    throw Error(ErrorKind::Config, "coupling losses enabled without a relatedness source");
  }
  std::vector<const Dataset*> sets;
  for (const Dataset* d : train_sets) {
    if (d != nullptr && !d->empty()) sets.push_back(d);
  }
  if (sets.empty()) throw Error(ErrorKind::Config, std::string("no training data for mode ") + to_string(cfg.mode));
  const Schema& schema = sets.front()->schema;

  MlpConfig model_cfg;
  model_cfg.input_dim = schema.feature_dim;
  model_cfg.hidden_dims = cfg.hidden_dims;
  model_cfg.num_classes = schema.num_classes();
  model_cfg.num_attributes = schema.num_attributes();
  model_cfg.init_seed = detail::mix_seed(cfg.seed, 1);

  TrainResult result;
  result.initial_params = init_params(model_cfg);
  result.params = result.initial_params;
  MlpParams& params = result.params;

  const Batch pool = make_batch(concat(sets));
  BatchStream stream(sets, cfg.batch_size, SeededRng(detail::mix_seed(cfg.seed, 2)));
  Optimizer optimizer(cfg.optimizer);

  const auto record = [&](std::size_t step) {
    result.log.records.push_back(detail::make_record(step, params, pool, coupling, weights, cfg.loss_options, test));
  };
  record(0);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch batch = stream.next();
    const auto fwd = detail::checked_forward(params, batch.features, step);
    const auto report = loss_total(fwd.preds, batch.labels, coupling, weights, cfg.loss_options);
    if (!std::isfinite(report.l_total)) {
      throw Error(ErrorKind::Divergence, "non-finite loss at step " + std::to_string(step));
    }
    const auto grads = backward(params, fwd.cache, report.grad_cls_logits, report.grad_att_logits);
    optimizer.step(params, grads);
    if (!params.all_finite()) throw Error(ErrorKind::Divergence, "non-finite parameters after step " + std::to_string(step));
    if (step % cfg.eval_every == 0 || step == cfg.steps) record(step);
  }
  if (!test.empty()) result.final_metrics = evaluate(params, test);
  return result;
}

/// Output of the student-teacher baseline.
struct PipelineResult {
  TrainResult teacher_cls;
  TrainResult teacher_att;
  Dataset union_data;  // every sample carries a class label and full attributes
  TrainResult student;
};

/// Single-task teachers pseudo-label the opposite split (the teacher's class
/// distribution as a soft target for attribute-only samples, 0.5-thresholded
/// attributes with full mask for class-only samples), then a non-coupled
/// multi-task student trains on the completed union.
inline PipelineResult student_teacher_pipeline(const ExperimentConfig& cfg, const ExperimentData& data) {
  if (data.cls_only.empty() || data.att_only.empty()) {
    throw Error(ErrorKind::Config, "student-teacher baseline needs class-only and attribute-only training sets");
  }
  PipelineResult out;
  ExperimentConfig teacher = cfg;
  teacher.mode = Mode::StCls;
  out.teacher_cls = train_on(teacher, {&data.cls_only, &data.joint}, data.test, nullptr);
  teacher.mode = Mode::StAtt;
  out.teacher_att = train_on(teacher, {&data.att_only, &data.joint}, data.test, nullptr);

  Dataset cls_filled = data.cls_only;
  {
    const Decisions dec = decide(predict(out.teacher_att.params, cls_filled));
    for (std::size_t j = 0; j < cls_filled.size(); ++j) {
      auto& s = cls_filled.samples[j];
      for (std::size_t i = 0; i < data.schema.num_attributes(); ++i) {
        s.att_labels[i] = dec.attributes(j, i) != 0.0 ? 1 : 0;
        s.att_mask[i] = 1;
      }
    }
  }
  Dataset att_filled = data.att_only;
  {
    const Predictions preds = predict(out.teacher_cls.params, att_filled);
    const Decisions dec = decide(preds);
    for (std::size_t j = 0; j < att_filled.size(); ++j) {
      auto& s = att_filled.samples[j];
      s.cls_label = dec.classes[j];
      const auto row = preds.cls_probs.row(j);
      s.cls_soft = Vector(row.begin(), row.end());
    }
  }
  out.union_data = concat({&cls_filled, &att_filled, &data.joint});

  ExperimentConfig student = cfg;
  student.mode = Mode::MtNc;
  out.student = train_on(student, {&out.union_data}, data.test, nullptr);
  return out;
}

/// Runs one experiment on already loaded data.
inline TrainResult train(const ExperimentConfig& cfg, const ExperimentData& data,
                         const std::optional<Coupling>& coupling) {
  const Coupling* c = coupling ? &*coupling : nullptr;
  switch (cfg.mode) {
    case Mode::StCls: return train_on(cfg, {&data.cls_only, &data.joint}, data.test, c);
    case Mode::StAtt: return train_on(cfg, {&data.att_only, &data.joint}, data.test, c);
    case Mode::MtNc:
    case Mode::MtC: return train_on(cfg, {&data.cls_only, &data.att_only, &data.joint}, data.test, c);
    case Mode::StTeacherMt: return student_teacher_pipeline(cfg, data).student;
  }
  throw Error(ErrorKind::Config, "unknown mode");
}

inline TrainResult train(const ExperimentConfig& cfg) {
  cfg.validate();
  const ExperimentData data = load_experiment_data(cfg.data);
  const auto w = cfg.effective_weights();
  std::optional<Coupling> coupling;
  if (w.dm > 0.0 || w.sca > 0.0) coupling = resolve_coupling(cfg.relatedness, data);
  return train(cfg, data, coupling);
}

// ---------------------------------------------------------------------------
// Multi-seed suites.

/// A mode as it appears in a suite: one of the five modes, or an mt_c
/// ablation with a single coupling term (`mt_c_dm`, `mt_c_sca`).
struct SuiteMode {
  std::string name;
  Mode mode;
  bool drop_dm = false;
  bool drop_sca = false;
};

inline SuiteMode parse_suite_mode(const std::string& name) {
  if (name == "mt_c_dm") return {name, Mode::MtC, false, true};
  if (name == "mt_c_sca") return {name, Mode::MtC, true, false};
  return {name, parse_mode(name)};
}

inline std::vector<SuiteMode> parse_suite_modes(const std::string& list) {
  std::vector<SuiteMode> out;
  for (auto piece : text::split(list, ',')) {
    const auto name = std::string(text::trim(piece));
    if (name.empty()) continue;
    out.push_back(parse_suite_mode(name));
  }
  if (out.empty()) throw Error(ErrorKind::Config, "empty mode list");
  return out;
}

struct SuiteRun {
  std::string mode;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsByTask metrics;
  RunLog log;

  std::string run_id() const { return mode + "_seed" + std::to_string(seed); }
};

struct SuiteRow {
  std::string mode;
  Task task;
  std::string metric;
  double mean = 0.0;
  double spread = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t runs = 0;
  std::size_t failed = 0;
};

struct SuiteTransfer {
  std::string mode;
  std::optional<std::uint64_t> seed;  // empty for the comparison of means
  TransferReport report;
};

struct SuiteResult {
  std::vector<SuiteRun> runs;
  std::vector<SuiteRow> rows;
  std::vector<SuiteTransfer> transfers;

  const SuiteRun* find(const std::string& mode, std::uint64_t seed) const {
    for (const auto& r : runs) {
      if (r.mode == mode && r.seed == seed) return &r;
    }
    return nullptr;
  }

  const SuiteRow* row(const std::string& mode, Task task, const std::string& metric) const {
    for (const auto& r : rows) {
      if (r.mode == mode && r.task == task && r.metric == metric) return &r;
    }
    return nullptr;
  }
};

/// Mean and sample spread of each metric per mode over its successful runs.
inline std::vector<SuiteRow> aggregate(const std::vector<SuiteRun>& runs, const std::vector<std::string>& modes) {
  std::vector<SuiteRow> rows;
  for (const auto& mode : modes) {
    std::size_t failed = 0;
    for (const auto& r : runs) failed += (r.mode == mode && !r.ok);
    for (Task task : {Task::Classification, Task::Attributes}) {
      for (const auto& metric : TaskMetrics::names()) {
        std::vector<double> values;
        for (const auto& r : runs) {
          if (r.mode != mode || !r.ok) continue;
          if (auto it = r.metrics.find(task); it != r.metrics.end()) values.push_back(it->second.get(metric));
        }
        if (values.empty()) continue;
        SuiteRow row{mode, task, metric, 0.0, 0.0, values.size(), failed};
        for (double v : values) row.mean += v;
        row.mean /= static_cast<double>(values.size());
        if (values.size() > 1) {
          double ss = 0.0;
          for (double v : values) ss += (v - row.mean) * (v - row.mean);
          row.spread = std::sqrt(ss / static_cast<double>(values.size() - 1));
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

inline std::map<Task, std::string> default_primary_metrics() {
  return {{Task::Classification, default_primary_metric(Task::Classification)},
          {Task::Attributes, default_primary_metric(Task::Attributes)}};
}

/// Transfer reports of every multi-task mode against the single-task runs
/// (st_cls for the class task, st_att for the attribute task), per seed and on
/// the means.
inline std::vector<SuiteTransfer> suite_transfers(const SuiteResult& result, const std::vector<std::string>& modes,
                                                  const std::vector<std::uint64_t>& seeds) {
  std::vector<SuiteTransfer> out;
  const auto primary = default_primary_metrics();
  const auto st_metrics = [&](std::uint64_t seed) {
    MetricsByTask st;
    if (const auto* r = result.find("st_cls", seed); r && r->ok && r->metrics.count(Task::Classification)) {
      st[Task::Classification] = r->metrics.at(Task::Classification);
    }
    if (const auto* r = result.find("st_att", seed); r && r->ok && r->metrics.count(Task::Attributes)) {
      st[Task::Attributes] = r->metrics.at(Task::Attributes);
    }
    return st;
  };
  const auto mean_metrics = [&](const std::string& mode, const std::map<Task, std::string>& wanted) {
    MetricsByTask m;
    for (const auto& [task, _] : wanted) {
      TaskMetrics tm;
      bool any = false;
      for (const auto& metric : TaskMetrics::names()) {
        if (const auto* row = result.row(mode, task, metric)) {
          any = true;
          if (metric == "accuracy") tm.accuracy = row->mean;
          if (metric == "average_accuracy") tm.average_accuracy = row->mean;
          if (metric == "macro_f1") tm.macro_f1 = row->mean;
          if (metric == "afa") tm.afa = row->mean;
        }
      }
      if (any) m[task] = tm;
    }
    return m;
  };
  for (const auto& mode : modes) {
    if (mode == "st_cls" || mode == "st_att") continue;
    for (auto seed : seeds) {
      const auto* r = result.find(mode, seed);
      if (!r || !r->ok) continue;
      out.push_back({mode, seed, transfer_report(st_metrics(seed), r->metrics, primary)});
    }
    MetricsByTask st_mean;
    for (auto& [task, m] : mean_metrics("st_cls", {{Task::Classification, ""}})) st_mean[task] = m;
    for (auto& [task, m] : mean_metrics("st_att", {{Task::Attributes, ""}})) st_mean[task] = m;
    out.push_back({mode, std::nullopt, transfer_report(st_mean, mean_metrics(mode, primary), primary)});
  }
  return out;
}

/// Runs every mode for seeds base..base+n-1 on one shared dataset. A failing
/// run is recorded with its error and the suite carries on.
inline SuiteResult run_suite(const ExperimentConfig& base, const std::vector<SuiteMode>& modes, std::size_t n_seeds) {
  if (n_seeds < 1) throw Error(ErrorKind::Config, "suite needs at least one seed");
  const ExperimentData data = load_experiment_data(base.data);
  std::optional<Coupling> coupling;
  if (base.relatedness.kind != RelatednessSource::Kind::None) coupling = resolve_coupling(base.relatedness, data);

  SuiteResult result;
  std::vector<std::string> names;
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < n_seeds; ++s) seeds.push_back(base.seed + s);
  for (const auto& mode : modes) {
    names.push_back(mode.name);
    for (auto seed : seeds) {
      SuiteRun run;
      run.mode = mode.name;
      run.seed = seed;
      try {
        ExperimentConfig cfg = base;
        cfg.mode = mode.mode;
        cfg.seed = seed;
        if (mode.drop_dm) cfg.weights.dm = 0.0;
        if (mode.drop_sca) cfg.weights.sca = 0.0;
        auto trained = train(cfg, data, coupling);
        run.metrics = std::move(trained.final_metrics);
        run.log = std::move(trained.log);
        run.ok = true;
      } catch (const Error& e) {
        run.error = e.what();
      }
      result.runs.push_back(std::move(run));
    }
  }
  result.rows = aggregate(result.runs, names);
  result.transfers = suite_transfers(result, names, seeds);
  return result;
}

inline std::string suite_table_csv(const SuiteResult& result) {
  std::ostringstream out;
  out << "mode,task,metric,mean,spread,runs,failed\n";
  for (const auto& r : result.rows) {
    out << r.mode << ',' << to_string(r.task) << ',' << r.metric << ',' << text::format_double(r.mean) << ','
        << text::format_double(r.spread) << ',' << r.runs << ',' << r.failed << '\n';
  }
  return out.str();
}

/// Aligned plain-text rendering: one line per mode, `mean ± spread` for the
/// accuracy, macro F1 and AFA of each task.
inline std::string suite_table_text(const SuiteResult& result) {
  std::vector<std::string> modes;
  for (const auto& r : result.runs) {
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
  }
  const std::vector<std::pair<Task, std::string>> columns{
      {Task::Classification, "accuracy"}, {Task::Classification, "macro_f1"}, {Task::Classification, "afa"},
      {Task::Attributes, "accuracy"},     {Task::Attributes, "macro_f1"},     {Task::Attributes, "afa"}};
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"mode"};
  for (const auto& [task, metric] : columns) header.push_back(std::string(to_string(task)) + " " + metric);
  header.push_back("failed");
  cells.push_back(header);
  for (const auto& mode : modes) {
    std::vector<std::string> line{mode};
    std::size_t failed = 0;
    for (const auto& r : result.runs) failed += (r.mode == mode && !r.ok);
    for (const auto& [task, metric] : columns) {
      const auto* row = result.row(mode, task, metric);
      line.push_back(row ? text::format_fixed(row->mean) + " ± " + text::format_fixed(row->spread) : "-");
    }
    line.push_back(std::to_string(failed));
    cells.push_back(line);
  }
  // "±" is two bytes but one column wide.
  const auto width_of = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width_of(line[c]));
  }
  std::ostringstream out;
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      out << line[c];
      if (c + 1 < line.size()) out << std::string(widths[c] - width_of(line[c]) + 2, ' ');
    }
    out << '\n';
  }
  return out.str();
}

inline std::string suite_transfer_csv(const SuiteResult& result) {
  std::ostringstream out;
  out << "mode,seed,task,metric,st_score,mt_score,negative_transfer\n";
  for (const auto& t : result.transfers) {
    for (const auto& [task, tt] : t.report.tasks) {
      out << t.mode << ',' << (t.seed ? std::to_string(*t.seed) : std::string("mean")) << ',' << to_string(task)
          << ',' << tt.metric << ',' << text::format_double(tt.st_score) << ',' << text::format_double(tt.mt_score)
          << ',' << (tt.negative_transfer ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

inline std::string suite_metrics_csv(const SuiteResult& result) {
  std::string out = metrics_csv_header();
  for (const auto& r : result.runs) {
    if (r.ok) out += metrics_csv_rows(r.run_id(), r.mode, r.seed, r.metrics);
  }
  return out;
}

inline std::string suite_failures_csv(const SuiteResult& result) {
  std::ostringstream out;
  out << "run_id,mode,seed,error\n";
  for (const auto& r : result.runs) {
    if (r.ok) continue;
    std::string msg = r.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << r.run_id() << ',' << r.mode << ',' << r.seed << ',' << msg << '\n';
  }
  return out.str();
}

/// Writes runs/<run_id>.csv, metrics.csv, comparison.csv, comparison.txt,
/// transfer.csv and failures.csv under `dir`.
inline void write_suite_outputs(const SuiteResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  for (const auto& r : result.runs) {
    if (r.ok) text::write_file((fs::path(dir) / "runs" / (r.run_id() + ".csv")).string(), r.log.to_csv());
  }
  text::write_file((fs::path(dir) / "metrics.csv").string(), suite_metrics_csv(result));
  text::write_file((fs::path(dir) / "comparison.csv").string(), suite_table_csv(result));
  text::write_file((fs::path(dir) / "comparison.txt").string(), suite_table_text(result));
  text::write_file((fs::path(dir) / "transfer.csv").string(), suite_transfer_csv(result));
  text::write_file((fs::path(dir) / "failures.csv").string(), suite_failures_csv(result));
}

}  // namespace cmtl
