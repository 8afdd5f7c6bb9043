#pragma once

// Classification metrics, confusion matrices, report and plot output.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bst/errors.hpp"
#include "bst/sample.hpp"

namespace bst {

struct EvalReport {
  int n_classes = 0;
  int n_samples = 0;
  double accuracy = 0.0;
  double top2_accuracy = 0.0;
  double macro_f1 = 0.0;
  double min_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<int> empty_classes;  // absent from both labels and predictions; F1 taken as 0
  std::vector<std::vector<long>> confusion;  // rows = true class, cols = predicted
  std::vector<std::vector<double>> row_normalized;
  std::vector<std::vector<double>> column_normalized;
};

/// Top-k class indices by descending probability; ties go to the lower index.
inline std::vector<int> top_classes(std::span<const double> probabilities, int k) {
  std::vector<int> order(probabilities.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(), [&](int a, int b) {
    const double pa = probabilities[static_cast<std::size_t>(a)], pb = probabilities[static_cast<std::size_t>(b)];
    return pa > pb || (pa == pb && a < b);
  });
  order.resize(count);
  return order;
}

/// Metrics from per-sample class probabilities (row-major [N, K]).
inline EvalReport evaluate_probabilities(std::span<const double> probabilities, std::span<const int> labels,
                                         int n_classes) {
  if (n_classes <= 0) throw ValidationError("n_classes must be positive");
  const std::size_t n = labels.size();
  if (probabilities.size() != n * static_cast<std::size_t>(n_classes))
    throw ValidationError("probability matrix does not match labels x classes");
  EvalReport r;
  r.n_classes = n_classes;
  r.n_samples = static_cast<int>(n);
  const auto K = static_cast<std::size_t>(n_classes);
  r.confusion.assign(K, std::vector<long>(K, 0));
  long correct = 0, correct2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= n_classes) throw ValidationError("label " + std::to_string(label) + " out of range");
    const auto top = top_classes(probabilities.subspan(i * K, K), 2);
    const int predicted = top[0];
    ++r.confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(predicted)];
    if (predicted == label) ++correct;
    if (std::find(top.begin(), top.end(), label) != top.end()) ++correct2;
  }
  if (n > 0) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    r.top2_accuracy = static_cast<double>(correct2) / static_cast<double>(n);
  }
  r.per_class_f1.assign(K, 0.0);
  for (std::size_t c = 0; c < K; ++c) {
    long tp = r.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < K; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    const long denom = 2 * tp + fp + fn;
    if (denom == 0) {
      r.empty_classes.push_back(static_cast<int>(c));
      continue;
    }
    r.per_class_f1[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  double total = 0.0;
  for (double f : r.per_class_f1) total += f;
  r.macro_f1 = total / static_cast<double>(K);
  r.min_f1 = *std::min_element(r.per_class_f1.begin(), r.per_class_f1.end());

  r.row_normalized.assign(K, std::vector<double>(K, 0.0));
  r.column_normalized.assign(K, std::vector<double>(K, 0.0));
  for (std::size_t a = 0; a < K; ++a) {
    long row_sum = 0, col_sum = 0;
    for (std::size_t b = 0; b < K; ++b) {
      row_sum += r.confusion[a][b];
      col_sum += r.confusion[b][a];
    }
    for (std::size_t b = 0; b < K; ++b) {
      if (row_sum > 0) r.row_normalized[a][b] = static_cast<double>(r.confusion[a][b]) / static_cast<double>(row_sum);
      if (col_sum > 0)
        r.column_normalized[b][a] = static_cast<double>(r.confusion[b][a]) / static_cast<double>(col_sum);
    }
  }
  return r;
}

/// Metrics from hard predictions (probability mass 1 on the predicted class).
inline EvalReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
  if (predictions.size() != labels.size()) throw ValidationError("prediction and label counts differ");
  std::vector<double> probs(labels.size() * static_cast<std::size_t>(n_classes), 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] < 0 || predictions[i] >= n_classes) throw ValidationError("prediction out of range");
    probs[i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(predictions[i])] = 1.0;
  }
  return evaluate_probabilities(probs, labels, n_classes);
}

/// Runs a model over a dataset in fixed-size batches.
template <typename Model>
EvalReport evaluate(const Model& model, std::span<const StrokeSample> dataset, int batch_size = 128) {
  const int K = model.config().n_classes;
  std::vector<double> probs;
  std::vector<int> labels;
  probs.reserve(dataset.size() * static_cast<std::size_t>(K));
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(dataset.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const StrokeSample*> batch;
    for (std::size_t i = start; i < stop; ++i) {
      batch.push_back(&dataset[i]);
      labels.push_back(dataset[i].label);
    }
    const auto p = model.predict_proba(batch);
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) probs.push_back(static_cast<double>(p(r, c)));
  }
  return evaluate_probabilities(probs, labels, K);
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json doc;
  doc["n_classes"] = r.n_classes;
  doc["n_samples"] = r.n_samples;
  doc["accuracy"] = r.accuracy;
  doc["top2_accuracy"] = r.top2_accuracy;
  doc["macro_f1"] = r.macro_f1;
  doc["min_f1"] = r.min_f1;
  doc["per_class_f1"] = r.per_class_f1;
  doc["empty_classes"] = r.empty_classes;
  doc["confusion"] = r.confusion;
  doc["row_normalized"] = r.row_normalized;
  doc["column_normalized"] = r.column_normalized;
  return doc;
}

inline EvalReport report_from_json(const nlohmann::json& doc) {
  try {
    EvalReport r;
    r.n_classes = doc.at("n_classes").get<int>();
    r.n_samples = doc.at("n_samples").get<int>();
    r.accuracy = doc.at("accuracy").get<double>();
    r.top2_accuracy = doc.at("top2_accuracy").get<double>();
    r.macro_f1 = doc.at("macro_f1").get<double>();
    r.min_f1 = doc.at("min_f1").get<double>();
    r.per_class_f1 = doc.at("per_class_f1").get<std::vector<double>>();
    r.empty_classes = doc.at("empty_classes").get<std::vector<int>>();
    r.confusion = doc.at("confusion").get<std::vector<std::vector<long>>>();
    r.row_normalized = doc.at("row_normalized").get<std::vector<std::vector<double>>>();
    r.column_normalized = doc.at("column_normalized").get<std::vector<std::vector<double>>>();
    const auto K = static_cast<std::size_t>(r.n_classes);
    if (r.confusion.size() != K || r.row_normalized.size() != K || r.column_normalized.size() != K)
      throw ValidationError("report matrices do not match n_classes");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// White -> dark blue ramp.
inline std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(247 - v * (247 - 8));
  const int g = static_cast<int>(251 - v * (251 - 48));
  const int b = static_cast<int>(255 - v * (255 - 107));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

inline void svg_heatmap(std::ostringstream& svg, const std::vector<std::vector<double>>& m,
                        const std::vector<std::string>& names, double x0, double y0, double cell,
                        const std::string& title) {
  const std::size_t K = m.size();
  svg << "<text x=\"" << x0 << "\" y=\"" << y0 - 28 << "\" font-size=\"14\">" << title << "</text>\n";
  for (std::size_t i = 0; i < K; ++i) {
    svg << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + (static_cast<double>(i) + 0.6) * cell
        << "\" font-size=\"9\" text-anchor=\"end\">" << names[i] << "</text>\n";
    svg << "<text x=\"" << x0 + (static_cast<double>(i) + 0.5) * cell << "\" y=\"" << y0 - 4
        << "\" font-size=\"9\" text-anchor=\"middle\">" << names[i] << "</text>\n";
    for (std::size_t j = 0; j < K; ++j) {
      const double v = m[i][j];
      svg << "<rect x=\"" << x0 + static_cast<double>(j) * cell << "\" y=\"" << y0 + static_cast<double>(i) * cell
          << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << heat_color(v) << "\"/>\n";
      svg << "<text x=\"" << x0 + (static_cast<double>(j) + 0.5) * cell << "\" y=\""
          << y0 + (static_cast<double>(i) + 0.6) * cell << "\" font-size=\"8\" text-anchor=\"middle\" fill=\""
          << (v > 0.5 ? "#ffffff" : "#000000") << "\">" << fixed(v, 2) << "</text>\n";
    }
  }
}

}  // namespace detail

/// Writes the column- and row-normalized matrices as side-by-side SVG
/// heatmaps, plus a CSV sidecar (same stem, .csv) holding every cell value.
inline void emit_confusion_plot(const EvalReport& report, const std::filesystem::path& path,
                                std::vector<std::string> class_names = {}) {
  const auto K = static_cast<std::size_t>(report.n_classes);
  if (report.confusion.size() != K) throw ValidationError("report is inconsistent");
  if (class_names.empty())
    for (std::size_t i = 0; i < K; ++i) class_names.push_back(std::to_string(i));
  if (class_names.size() != K) throw ValidationError("class name count does not match n_classes");

  const double cell = 28.0, margin = 90.0;
  const double side = cell * static_cast<double>(K);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * side + 3 * margin << "\" height=\""
      << side + 2 * margin << "\">\n";
  detail::svg_heatmap(svg, report.column_normalized, class_names, margin, margin, cell,
                      "column-normalized (true rows, predicted columns)");
  detail::svg_heatmap(svg, report.row_normalized, class_names, 2 * margin + side, margin, cell,
                      "row-normalized (true rows, predicted columns)");
  svg << "</svg>\n";

  std::ostringstream csv;
  csv << "matrix,true_class,predicted_class,value\n";
  for (const auto& [name, m] : {std::pair{"column_normalized", &report.column_normalized},
                                std::pair{"row_normalized", &report.row_normalized}})
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) csv << name << ',' << i << ',' << j << ',' << detail::fixed((*m)[i][j], 6) << '\n';

  auto write = [](const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("write failed for " + p.string());
  };
  write(path, svg.str());
  auto sidecar = path;
  sidecar.replace_extension(".csv");
  write(sidecar, csv.str());
}

}  // namespace bst
