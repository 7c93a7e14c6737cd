#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cebench/corpus.hpp"

namespace cebench {

struct ScorePrediction {
  std::optional<int> value;  // absent = invalid answer
};

struct NliPrediction {
  NliLabel label = NliLabel::invalid;
  // Set when keywords for more than one class appear in the response.
  bool low_confidence = false;
};

// What a single run log row stores after extraction.
struct Prediction {
  enum class Kind { none, score, nli };
  Kind kind = Kind::none;
  std::optional<int> score;
  NliLabel nli = NliLabel::invalid;
  bool low_confidence = false;

  bool valid() const {
    switch (kind) {
      case Kind::score: return score.has_value();
      case Kind::nli: return nli != NliLabel::invalid;
      case Kind::none: return false;
    }
    return false;
  }

  nlohmann::json to_json() const {
    switch (kind) {
      case Kind::score:
        return {{"kind", "score"},
                {"value", score ? nlohmann::json(*score) : nlohmann::json()}};
      case Kind::nli:
        return {{"kind", "nli"},
                {"label", to_string(nli)},
                {"low_confidence", low_confidence}};
      case Kind::none: return nlohmann::json();
    }
    return nlohmann::json();
  }

  static Prediction from_json(const nlohmann::json& j) {
    Prediction p;
    if (j.is_null()) return p;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "score") {
      p.kind = Kind::score;
      if (!j.at("value").is_null()) p.score = j.at("value").get<int>();
    } else if (kind == "nli") {
      p.kind = Kind::nli;
      auto l = nli_label_from_string(j.at("label").get<std::string>());
      p.nli = l.value_or(NliLabel::invalid);
      p.low_confidence = j.value("low_confidence", false);
    } else {
      throw std::runtime_error("unknown prediction kind: " + kind);
    }
    return p;
  }
};

// ---- Extraction ------------------------------------------------------------

// First "score" occurrence (any case) followed by optional punctuation or
// whitespace and then digits wins. Occurrences with no trailing integer are
// skipped in favor of later ones.
inline ScorePrediction extract_score(std::string_view response_text) {
  std::string lower(response_text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::size_t pos = 0;
  while ((pos = lower.find("score", pos)) != std::string::npos) {
    std::size_t i = pos + 5;
    bool negative = false;
    while (i < lower.size()) {
      unsigned char c = static_cast<unsigned char>(lower[i]);
      if (std::isalnum(c)) break;
      negative = (c == '-');
      ++i;
    }
    if (i < lower.size() && std::isdigit(static_cast<unsigned char>(lower[i]))) {
      long long v = 0;
      bool overflow = false;
      while (i < lower.size() &&
             std::isdigit(static_cast<unsigned char>(lower[i]))) {
        v = v * 10 + (lower[i] - '0');
        if (v > std::numeric_limits<int>::max()) {
          overflow = true;
          break;
        }
        ++i;
      }
      if (!overflow) return {static_cast<int>(negative ? -v : v)};
    }
    pos += 5;
  }
  return {};
}

// Earliest class keyword in the text wins; priority entailment > contradiction
// > neutral breaks exact position ties. Seeing keywords from two or more
// classes sets low_confidence.
inline NliPrediction extract_nli_label(std::string_view response_text) {
  std::string lower(response_text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  auto first_of = [&](std::initializer_list<std::string_view> keys) {
    std::size_t best = std::string::npos;
    for (auto k : keys) best = std::min(best, lower.find(k));
    return best;
  };
  struct ClassHit {
    NliLabel label;
    std::size_t pos;
  };
  const ClassHit hits[] = {
      {NliLabel::entailment, first_of({"entail"})},
      {NliLabel::contradiction, first_of({"contradict"})},
      {NliLabel::neutral, first_of({"neutral", "not mentioned"})},
  };
  NliPrediction out;
  int classes_present = 0;
  std::size_t best_pos = std::string::npos;
  for (const auto& h : hits) {
    if (h.pos == std::string::npos) continue;
    ++classes_present;
    if (h.pos < best_pos) {
      best_pos = h.pos;
      out.label = h.label;
    }
  }
  out.low_confidence = classes_present >= 2;
  return out;
}

// ---- Metrics ---------------------------------------------------------------

inline double mae(const std::vector<int>& predictions,
                  const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("mae: length mismatch");
  }
  if (predictions.empty()) throw std::invalid_argument("mae: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    sum += std::abs(static_cast<double>(predictions[i]) - labels[i]);
  }
  return sum / static_cast<double>(predictions.size());
}

// TN/(TN+FP) after binarizing both sides at >= threshold. Absent when the
// label side has no negatives at all.
inline std::optional<double> specificity(const std::vector<int>& pred_scores,
                                         const std::vector<int>& label_scores,
                                         int threshold = 10) {
  if (pred_scores.size() != label_scores.size()) {
    throw std::invalid_argument("specificity: length mismatch");
  }
  if (pred_scores.empty()) {
    throw std::invalid_argument("specificity: empty input");
  }
  std::size_t tn = 0, fp = 0;
  for (std::size_t i = 0; i < pred_scores.size(); ++i) {
    if (label_scores[i] >= threshold) continue;  // actual positive
    if (pred_scores[i] >= threshold) ++fp;
    else ++tn;
  }
  if (tn + fp == 0) return std::nullopt;
  return static_cast<double>(tn) / static_cast<double>(tn + fp);
}

enum class F1Averaging { macro, micro };

// Invalid predictions are misses for their true class and hits for none.
// Macro averages per-class F1 over classes that occur in the labels or the
// valid predictions; classes absent from both are left out of the mean.
inline double f1(const std::vector<NliPrediction>& predictions,
                 const std::vector<NliLabel>& labels,
                 F1Averaging averaging = F1Averaging::macro) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("f1: length mismatch");
  }
  if (predictions.empty()) throw std::invalid_argument("f1: empty input");
  const NliLabel classes[] = {NliLabel::entailment, NliLabel::contradiction,
                              NliLabel::neutral};
  std::map<NliLabel, std::size_t> tp, fp, fn;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    NliLabel p = predictions[i].label;
    NliLabel y = labels[i];
    if (y == NliLabel::invalid) {
      throw std::invalid_argument("f1: labels must not be invalid");
    }
    if (p == y) ++tp[y];
    else {
      ++fn[y];
      if (p != NliLabel::invalid) ++fp[p];
    }
  }
  if (averaging == F1Averaging::micro) {
    double tps = 0, fps = 0, fns = 0;
    for (NliLabel c : classes) {
      tps += tp[c];
      fps += fp[c];
      fns += fn[c];
    }
    double p = tps + fps > 0 ? tps / (tps + fps) : 0.0;
    double r = tps + fns > 0 ? tps / (tps + fns) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (NliLabel c : classes) {
    std::size_t support = tp[c] + fn[c];
    std::size_t predicted = tp[c] + fp[c];
    if (support == 0 && predicted == 0) {
      std::cerr << "note: class " << to_string(c)
                << " absent from labels and predictions, excluded from macro F1"
                << std::endl;
      continue;
    }
    ++present;
    double p = predicted > 0 ? static_cast<double>(tp[c]) / predicted : 0.0;
    double r = support > 0 ? static_cast<double>(tp[c]) / support : 0.0;
    sum += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  if (present == 0) throw std::invalid_argument("f1: no classes present");
  return sum / static_cast<double>(present);
}

inline double valid_answer_rate(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) {
    throw std::invalid_argument("valid_answer_rate: empty input");
  }
  std::size_t valid = 0;
  for (const auto& p : predictions) {
    if (p.valid()) ++valid;
  }
  return static_cast<double>(valid) / static_cast<double>(predictions.size());
}

}  // namespace cebench
