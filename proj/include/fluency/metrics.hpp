#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "fluency/error.hpp"

namespace fluency {

using ConfusionMatrix = std::vector<std::vector<long>>;

/// rows = true class, columns = predicted class.
inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels, int classes) {
  if (preds.size() != labels.size()) throw Error(Errc::LengthMismatch, "preds and labels differ in length");
  ConfusionMatrix cm(static_cast<std::size_t>(classes), std::vector<long>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes || preds[i] < 0 || preds[i] >= classes) {
      throw Error(Errc::OutOfRange, "class index outside [0, classes)");
    }
    ++cm[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return cm;
}

/// Unweighted mean of per-class F1. Classes absent from both predictions and
/// labels are left out of the mean.
inline double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int classes = 3) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw Error(Errc::LengthMismatch, "macro_f1 needs equal, non-empty sequences");
  }
  const auto cm = confusion_matrix(preds, labels, classes);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    long tp = cm[cc][cc];
    long support = 0;
    long predicted = 0;
    for (int o = 0; o < classes; ++o) {
      support += cm[cc][static_cast<std::size_t>(o)];
      predicted += cm[static_cast<std::size_t>(o)][cc];
    }
    if (support == 0 && predicted == 0) continue;
    const double denom = static_cast<double>(support + predicted);
    sum += denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    ++counted;
  }
  return counted > 0 ? sum / counted : 0.0;
}

/// Equal to accuracy for single-label multiclass.
inline double micro_f1(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw Error(Errc::LengthMismatch, "micro_f1 needs equal, non-empty sequences");
  }
  long hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

/// Sample Pearson correlation; throws ConstantInput when either side has no
/// variance.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::LengthMismatch, "pearson needs two equal sequences of length >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::ConstantInput, "pearson undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

inline double pearson(const std::vector<int>& preds, const std::vector<int>& labels) {
  return pearson(std::vector<double>(preds.begin(), preds.end()), std::vector<double>(labels.begin(), labels.end()));
}

/// Pearson, or nullopt when undefined.
inline std::optional<double> pearson_or_null(const std::vector<int>& preds, const std::vector<int>& labels) {
  try {
    return pearson(preds, labels);
  } catch (const Error& e) {
    if (e.code() == Errc::ConstantInput) return std::nullopt;
    throw;
  }
}

}  // namespace fluency
