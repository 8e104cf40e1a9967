#include "sds/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sds/dataio.hpp"

namespace sds {

FilteredGts reasonable_filter(std::span<const Annotation> gts, const ReasonableSetting& setting) {
  FilteredGts out;
  for (const Annotation& a : gts) {
    if (setting.evaluated(a)) {
      out.evaluated.push_back(a);
    } else {
      Annotation ig = a;
      ig.ignore = true;
      out.ignored.push_back(ig);
    }
  }
  return out;
}

std::vector<Annotation> apply_reasonable(std::span<const Annotation> gts, const ReasonableSetting& setting) {
  std::vector<Annotation> out(gts.begin(), gts.end());
  for (Annotation& a : out) a.ignore = !setting.evaluated(a);
  return out;
}

std::size_t MatchResult::true_positives() const {
  return static_cast<std::size_t>(std::count_if(det_match.begin(), det_match.end(), [](int m) { return m >= 0; }));
}

std::size_t MatchResult::false_positives() const {
  return static_cast<std::size_t>(std::count(det_match.begin(), det_match.end(), kFalsePositive));
}

namespace {

std::vector<std::size_t> score_order(std::span<const ScoredBox> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const Annotation> gts, double iou_min) {
  MatchResult r;
  r.det_match.assign(dets.size(), kFalsePositive);
  r.gt_detected.assign(gts.size(), false);
  for (const Annotation& g : gts) r.evaluated_gts += g.ignore ? 0 : 1;

  for (const std::size_t d : score_order(dets)) {
    int best = -1;
    double best_iou = iou_min;
    bool hit_ignore = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(dets[d].box, gts[g].box);
      if (o < iou_min) continue;
      if (gts[g].ignore) {
        hit_ignore = true;
        continue;
      }
      if (r.gt_detected[g]) continue;
      if (best < 0 || o > best_iou) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      r.det_match[d] = best;
      r.gt_detected[static_cast<std::size_t>(best)] = true;
    } else if (hit_ignore) {
      r.det_match[d] = kIgnoredDetection;
    }
  }
  return r;
}

namespace {

struct Outcome {
  double score;
  bool tp;
};

// TP/FP outcomes of every non-ignored detection over all images, sorted
// by descending score (stable in image, then detection order).
std::vector<Outcome> collect_outcomes(std::span<const ImageEval> images, double iou_min, std::size_t& total_gts,
                                      std::vector<double>& all_scores) {
  std::vector<Outcome> outcomes;
  total_gts = 0;
  for (const ImageEval& im : images) {
    const MatchResult m = match_detections(im.dets, im.gts, iou_min);
    total_gts += m.evaluated_gts;
    for (std::size_t d = 0; d < im.dets.size(); ++d) {
      all_scores.push_back(im.dets[d].score);
      if (m.det_match[d] == kIgnoredDetection) continue;
      outcomes.push_back({im.dets[d].score, m.det_match[d] >= 0});
    }
  }
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const Outcome& a, const Outcome& b) { return a.score > b.score; });
  return outcomes;
}

}  // namespace

EvalCurve mr_fppi_curve(std::span<const ImageEval> images, double iou_min) {
  if (images.empty()) throw std::invalid_argument("mr_fppi_curve: no images");
  std::size_t total_gts = 0;
  std::vector<double> scores;
  const std::vector<Outcome> outcomes = collect_outcomes(images, iou_min, total_gts, scores);
  if (total_gts == 0) throw std::invalid_argument("mr_fppi_curve: no evaluated ground truth");

  EvalCurve curve;
  const double n_images = static_cast<double>(images.size());
  const double n_gts = static_cast<double>(total_gts);
  if (scores.empty()) {
    curve.points.push_back({0.0, 1.0});
    curve.thresholds.push_back(INFINITY);
    return curve;
  }
  std::sort(scores.begin(), scores.end(), std::greater<>());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t next = 0;
  for (const double t : scores) {
    while (next < outcomes.size() && outcomes[next].score >= t) {
      (outcomes[next].tp ? tp : fp) += 1;
      ++next;
    }
    curve.points.push_back({static_cast<double>(fp) / n_images, 1.0 - static_cast<double>(tp) / n_gts});
    curve.thresholds.push_back(t);
  }
  return curve;
}

std::array<double, 9> lamr_references() {
  std::array<double, 9> refs{};
  for (std::size_t k = 0; k < refs.size(); ++k) refs[k] = std::pow(10.0, -2.0 + 0.25 * static_cast<double>(k));
  return refs;
}

std::array<double, 9> lamr_samples(const EvalCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("lamr_samples: empty curve");
  std::array<double, 9> out{};
  const auto refs = lamr_references();
  for (std::size_t k = 0; k < refs.size(); ++k) {
    double mr = curve.points.front().second;
    for (const auto& [fppi, miss] : curve.points) {
      if (fppi <= refs[k]) mr = miss;
      else break;
    }
    out[k] = mr;
  }
  return out;
}

double log_average_miss_rate(const EvalCurve& curve) {
  double acc = 0.0;
  for (const double mr : lamr_samples(curve)) acc += std::log(std::max(mr, 1e-10));
  return std::exp(acc / 9.0);
}

EvalCurve precision_recall_curve(std::span<const ImageEval> images, double iou_min) {
  if (images.empty()) throw std::invalid_argument("precision_recall_curve: no images");
  std::size_t total_gts = 0;
  std::vector<double> scores;
  const std::vector<Outcome> outcomes = collect_outcomes(images, iou_min, total_gts, scores);
  if (total_gts == 0) throw std::invalid_argument("precision_recall_curve: no evaluated ground truth");
  EvalCurve curve;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    tp += outcomes[i].tp ? 1 : 0;
    curve.points.push_back({static_cast<double>(tp) / static_cast<double>(total_gts),
                            static_cast<double>(tp) / static_cast<double>(i + 1)});
    curve.thresholds.push_back(outcomes[i].score);
  }
  return curve;
}

std::array<double, 11> ap_samples(const EvalCurve& pr_curve) {
  std::array<double, 11> out{};
  for (std::size_t k = 0; k <= 10; ++k) {
    const double r = static_cast<double>(k) / 10.0;
    double best = 0.0;
    for (const auto& [recall, precision] : pr_curve.points) {
      if (recall >= r) best = std::max(best, precision);
    }
    out[k] = best;
  }
  return out;
}

double average_precision(std::span<const ImageEval> images, double iou_min) {
  double acc = 0.0;
  for (const double p : ap_samples(precision_recall_curve(images, iou_min))) acc += p;
  return acc / 11.0;
}

std::string format_curve_csv(const EvalCurve& curve, std::span<const std::pair<double, double>> summary) {
  std::string out = "x,y\n";
  for (const auto& [x, y] : curve.points) out += format_double(x) + "," + format_double(y) + "\n";
  for (const auto& [x, y] : summary) out += "# x=" + format_double(x) + " y=" + format_double(y) + "\n";
  return out;
}

void write_curve_csv(const EvalCurve& curve, std::span<const std::pair<double, double>> summary,
                     const std::filesystem::path& path) {
  write_text_file(path, format_curve_csv(curve, summary));
}

}  // namespace sds
