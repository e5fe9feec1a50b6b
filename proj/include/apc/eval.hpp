#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "apc/bank.hpp"
#include "apc/image.hpp"

namespace apc {

struct ThresholdF1 {
  double f1 = 0;
  double threshold = 0;
};

/// ROC area with ties counted half (trapezoid over tied groups). Labels are 0/1.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Best F1 over thresholds drawn from the observed scores, predicting anomalous when
/// score >= threshold. Returns the smallest threshold reaching the maximum.
ThresholdF1 f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// F1 from confusion counts, 0 when nothing is predicted or present.
double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);

struct PixelMetrics {
  double auroc_px = 0;
  double f1_px = 0;
  double threshold_px = 0;
};

enum class PixelMode { Histogram, Exact };

/// Map and ground-truth mask of one test image; an absent mask means all-normal.
struct PixelPair {
  GridArray<float> map;
  std::optional<Mask> mask;
  std::string id;
};

/// Pools all pixels of `count` images fetched on demand. Histogram mode makes two passes
/// (range, then fill) and never holds more than one map.
PixelMetrics pixel_metrics(const std::function<PixelPair(std::size_t)>& fetch, std::size_t count,
                           PixelMode mode = PixelMode::Histogram, int bins = 4096);

struct CategoryMetrics {
  double auroc_im = 0, f1_im = 0, auroc_px = 0, f1_px = 0;
  double threshold_im = 0, threshold_px = 0;
};

struct MetricsReport {
  std::string run_id;
  std::string config_hash;
  std::map<std::string, CategoryMetrics> categories;
  CategoryMetrics average;
};

/// Unweighted mean over categories.
MetricsReport make_report(std::map<std::string, CategoryMetrics> categories, std::string run_id,
                          std::string config_hash);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
void write_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report(const std::filesystem::path& path);

}  // namespace apc
