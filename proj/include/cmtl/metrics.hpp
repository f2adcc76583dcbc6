#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmtl/error.hpp"
#include "cmtl/numerics.hpp"
#include "cmtl/text.hpp"

namespace cmtl {

enum class Task { Classification, Attributes };

inline const char* to_string(Task task) { return task == Task::Classification ? "cls" : "att"; }

/// Accuracy, macro-averaged recall (AA), macro F1 and AFA = (F1 + Acc) / 2.
struct TaskMetrics {
  double accuracy = 0.0;
  double average_accuracy = 0.0;
  double macro_f1 = 0.0;
  double afa = 0.0;

  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n{"accuracy", "average_accuracy", "macro_f1", "afa"};
    return n;
  }

  double get(const std::string& name) const {
    if (name == "accuracy") return accuracy;
    if (name == "average_accuracy") return average_accuracy;
    if (name == "macro_f1") return macro_f1;
    if (name == "afa") return afa;
    throw Error(ErrorKind::Config, "unknown metric '" + name + "'");
  }
};

using MetricsByTask = std::map<Task, TaskMetrics>;

namespace detail {

// F1 = 2tp / (2tp + fp + fn); a class with no true and no predicted
// positives scores 0.
inline double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace detail

inline TaskMetrics classification_metrics(const std::vector<std::size_t>& predicted,
                                          const std::vector<std::size_t>& truth, std::size_t num_classes) {
  if (predicted.empty()) throw Error(ErrorKind::Metric, "classification metrics on empty input");
  if (predicted.size() != truth.size()) throw Error(ErrorKind::Metric, "prediction/truth length mismatch");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0), support(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const std::size_t y = truth[j];
    const std::size_t p = predicted[j];
    if (y >= num_classes || p >= num_classes) throw Error(ErrorKind::Metric, "class label out of range");
    ++support[y];
    if (p == y) {
      ++correct;
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  TaskMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  double recall_sum = 0.0;
  std::size_t present = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (support[c] > 0) {
      recall_sum += static_cast<double>(tp[c]) / static_cast<double>(support[c]);
      ++present;
    }
    f1_sum += detail::f1_score(tp[c], fp[c], fn[c]);
  }
  m.average_accuracy = recall_sum / static_cast<double>(present);
  m.macro_f1 = f1_sum / static_cast<double>(num_classes);
  m.afa = 0.5 * (m.macro_f1 + m.accuracy);
  return m;
}

/// Binary attribute metrics over annotated cells only. Accuracy and F1 are
/// computed per attribute and averaged over attributes with at least one
/// annotated cell; AA equals the mean per-attribute accuracy.
inline TaskMetrics attribute_metrics(const Matrix& predicted, const Matrix& truth, const Matrix& mask) {
  require_same_shape(predicted, truth, "attribute_metrics");
  require_same_shape(predicted, mask, "attribute_metrics");
  double acc_sum = 0.0, f1_sum = 0.0;
  std::size_t attributes = 0;
  for (std::size_t i = 0; i < truth.cols(); ++i) {
    std::size_t n = 0, correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t j = 0; j < truth.rows(); ++j) {
      if (mask(j, i) == 0.0) continue;
      const bool y = truth(j, i) != 0.0;
      const bool p = predicted(j, i) != 0.0;
      ++n;
      correct += (y == p);
      tp += (y && p);
      fp += (!y && p);
      fn += (y && !p);
    }
    if (n == 0) continue;
    ++attributes;
    acc_sum += static_cast<double>(correct) / static_cast<double>(n);
    f1_sum += detail::f1_score(tp, fp, fn);
  }
  if (attributes == 0) throw Error(ErrorKind::Metric, "attribute metrics with every cell masked");
  TaskMetrics m;
  m.accuracy = acc_sum / static_cast<double>(attributes);
  m.average_accuracy = m.accuracy;
  m.macro_f1 = f1_sum / static_cast<double>(attributes);
  m.afa = 0.5 * (m.macro_f1 + m.accuracy);
  return m;
}

struct TaskTransfer {
  std::string metric;
  double st_score = 0.0;
  double mt_score = 0.0;
  bool negative_transfer = false;
};

/// Multi-task vs single-task comparison; a task is flagged when the
/// multi-task score is strictly below the single-task one.
struct TransferReport {
  std::map<Task, TaskTransfer> tasks;

  bool negative_transfer() const {
    for (const auto& [_, t] : tasks) {
      if (t.negative_transfer) return true;
    }
    return false;
  }

  bool flagged(Task task) const {
    auto it = tasks.find(task);
    return it != tasks.end() && it->second.negative_transfer;
  }
};

/// Metric used per task when no explicit choice is made.
inline std::string default_primary_metric(Task task) {
  return task == Task::Classification ? "macro_f1" : "afa";
}

inline TransferReport transfer_report(const MetricsByTask& st, const MetricsByTask& mt,
                                      const std::map<Task, std::string>& primary_metric) {
  TransferReport report;
  for (const auto& [task, metric] : primary_metric) {
    const auto s = st.find(task);
    const auto m = mt.find(task);
    if (s == st.end() || m == mt.end()) continue;
    TaskTransfer t;
    t.metric = metric;
    t.st_score = s->second.get(metric);
    t.mt_score = m->second.get(metric);
    t.negative_transfer = t.mt_score < t.st_score;
    report.tasks[task] = t;
  }
  return report;
}

inline TransferReport transfer_report(const MetricsByTask& st, const MetricsByTask& mt, const std::string& metric) {
  return transfer_report(st, mt, {{Task::Classification, metric}, {Task::Attributes, metric}});
}

/// Rows of the flat metrics CSV `run_id,mode,seed,task,metric,value`.
inline std::string metrics_csv_header() { return "run_id,mode,seed,task,metric,value\n"; }

inline std::string metrics_csv_rows(const std::string& run_id, const std::string& mode, std::uint64_t seed,
                                    const MetricsByTask& metrics) {
  std::ostringstream out;
  for (const auto& [task, m] : metrics) {
    for (const auto& name : TaskMetrics::names()) {
      out << run_id << ',' << mode << ',' << seed << ',' << to_string(task) << ',' << name << ','
          << text::format_double(m.get(name)) << '\n';
    }
  }
  return out.str();
}

}  // namespace cmtl
