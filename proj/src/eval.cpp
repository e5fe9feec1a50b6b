#include "apc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "apc/error.hpp"

namespace apc {
namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("non-finite score");
  for (auto l : labels)
    if (l > 1) throw ConfigError("labels must be 0 or 1");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return order;
}

// Walks groups of equal score from high to low; `group` receives (score, positives, negatives).
template <typename F>
void for_each_tie_group(std::span<const double> scores, std::span<const std::uint8_t> labels, F&& group) {
  const auto order = descending_order(scores);
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::int64_t pos = 0, neg = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? pos : neg) += 1;
    group(s, pos, neg);
  }
}

// Counts per tie group, ordered by descending score.
struct Group {
  double score;
  std::int64_t pos, neg;
};

double auroc_groups(const std::vector<Group>& groups) {
  std::int64_t P = 0, N = 0;
  for (const auto& g : groups) P += g.pos, N += g.neg;
  if (P == 0 || N == 0) throw UndefinedMetricError("AUROC needs both normal and anomalous samples");
  // Trapezoid in count space: each group adds pos * (negatives above) plus half of pos * neg.
  double area = 0;
  std::int64_t neg_above = 0;
  for (const auto& g : groups) {
    area += double(g.pos) * double(N - neg_above - g.neg) + 0.5 * double(g.pos) * double(g.neg);
    neg_above += g.neg;
  }
  return area / (double(P) * double(N));
}

ThresholdF1 f1_groups(const std::vector<Group>& groups) {
  std::int64_t P = 0;
  for (const auto& g : groups) P += g.pos;
  if (P == 0) throw UndefinedMetricError("F1 needs at least one anomalous sample");
  ThresholdF1 best{-1, 0};
  std::int64_t tp = 0, fp = 0;
  for (const auto& g : groups) {
    tp += g.pos;
    fp += g.neg;
    const double f = f1_from_counts(tp, fp, P - tp);
    if (f >= best.f1) best = {f, g.score};  // later groups have smaller thresholds
  }
  return best;
}

std::vector<Group> exact_groups(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::vector<Group> groups;
  for_each_tie_group(scores, labels, [&](double s, std::int64_t p, std::int64_t n) { groups.push_back({s, p, n}); });
  return groups;
}

}  // namespace

double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  const std::int64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : double(2 * tp) / double(denom);
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  return auroc_groups(exact_groups(scores, labels));
}

ThresholdF1 f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  return f1_groups(exact_groups(scores, labels));
}

namespace {

void check_pair(const PixelPair& p) {
  if (!p.map.allFinite()) throw NumericError("non-finite anomaly map for " + p.id);
  if (p.mask && (p.mask->height != p.map.rows() || p.mask->width != p.map.cols()))
    throw ShapeError("map " + std::to_string(p.map.rows()) + "x" + std::to_string(p.map.cols()) +
                     " and mask " + std::to_string(p.mask->height) + "x" + std::to_string(p.mask->width) +
                     " differ for image " + p.id);
}

bool mask_at(const PixelPair& p, Eigen::Index i) { return p.mask && p.mask->data[i] != 0; }

}  // namespace

PixelMetrics pixel_metrics(const std::function<PixelPair(std::size_t)>& fetch, std::size_t count, PixelMode mode,
                           int bins) {
  if (count == 0) throw UndefinedMetricError("no images for pixel metrics");
  std::vector<Group> groups;
  if (mode == PixelMode::Exact) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (std::size_t k = 0; k < count; ++k) {
      const PixelPair p = fetch(k);
      check_pair(p);
      for (Eigen::Index i = 0; i < p.map.size(); ++i) {
        scores.push_back(p.map.data()[i]);
        labels.push_back(mask_at(p, i));
      }
    }
    groups = exact_groups(scores, labels);
  } else {
    if (bins < 2) throw ConfigError("pixel histogram needs at least 2 bins");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < count; ++k) {
      const PixelPair p = fetch(k);
      check_pair(p);
      lo = std::min(lo, double(p.map.minCoeff()));
      hi = std::max(hi, double(p.map.maxCoeff()));
    }
    const double scale = hi > lo ? double(bins) / (hi - lo) : 0.0;
    std::vector<std::int64_t> pos(std::size_t(bins), 0), neg(std::size_t(bins), 0);
    std::vector<double> bin_min(std::size_t(bins), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < count; ++k) {
      const PixelPair p = fetch(k);
      check_pair(p);
      for (Eigen::Index i = 0; i < p.map.size(); ++i) {
        const double s = p.map.data()[i];
        const auto b = std::size_t(std::clamp(int((s - lo) * scale), 0, bins - 1));
        (mask_at(p, i) ? pos : neg)[b] += 1;
        bin_min[b] = std::min(bin_min[b], s);
      }
    }
    // Each bin acts as one tie group; its threshold is the smallest score it holds.
    for (int b = bins - 1; b >= 0; --b)
      if (pos[std::size_t(b)] + neg[std::size_t(b)] > 0)
        groups.push_back({bin_min[std::size_t(b)], pos[std::size_t(b)], neg[std::size_t(b)]});
  }
  std::int64_t P = 0;
  for (const auto& g : groups) P += g.pos;
  if (P == 0) throw UndefinedMetricError("pixel metrics need at least one anomalous pixel");
  PixelMetrics m;
  m.auroc_px = auroc_groups(groups);
  const auto f = f1_groups(groups);
  m.f1_px = f.f1;
  m.threshold_px = f.threshold;
  return m;
}

MetricsReport make_report(std::map<std::string, CategoryMetrics> categories, std::string run_id,
                          std::string config_hash) {
  if (categories.empty()) throw ConfigError("report needs at least one category");
  MetricsReport r{std::move(run_id), std::move(config_hash), std::move(categories), {}};
  const double n = double(r.categories.size());
  for (const auto& [name, m] : r.categories) {
    r.average.auroc_im += m.auroc_im / n;
    r.average.f1_im += m.f1_im / n;
    r.average.auroc_px += m.auroc_px / n;
    r.average.f1_px += m.f1_px / n;
    r.average.threshold_im += m.threshold_im / n;
    r.average.threshold_px += m.threshold_px / n;
  }
  if (r.categories.size() == 1) r.average = r.categories.begin()->second;
  return r;
}

namespace {

nlohmann::json metrics_json(const CategoryMetrics& m) {
  return {{"auroc_im", m.auroc_im}, {"f1_im", m.f1_im}, {"auroc_px", m.auroc_px}, {"f1_px", m.f1_px},
          {"thresholds", {{"image", m.threshold_im}, {"pixel", m.threshold_px}}}};
}

CategoryMetrics metrics_from(const nlohmann::json& j) {
  CategoryMetrics m;
  m.auroc_im = j.at("auroc_im").get<double>();
  m.f1_im = j.at("f1_im").get<double>();
  m.auroc_px = j.at("auroc_px").get<double>();
  m.f1_px = j.at("f1_px").get<double>();
  m.threshold_im = j.at("thresholds").at("image").get<double>();
  m.threshold_px = j.at("thresholds").at("pixel").get<double>();
  return m;
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [name, m] : r.categories) cats[name] = metrics_json(m);
  return {{"run_id", r.run_id}, {"config_hash", r.config_hash}, {"categories", cats}, {"average", metrics_json(r.average)}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& [name, m] : j.at("categories").items()) r.categories[name] = metrics_from(m);
    r.average = metrics_from(j.at("average"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed metrics report: ") + e.what());
  }
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("report not found: " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

}  // namespace apc
