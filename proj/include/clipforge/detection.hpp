#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "clipforge/common.hpp"

namespace clipforge {

// ---------------------------------------------------------------------------
// Boxes and overlap geometry.
// ---------------------------------------------------------------------------
struct BoundingBox {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
  int class_id = 0;
  double confidence = 0.0;  // predictions only

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }

  void validate() const {
    require(std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
                std::isfinite(y_max),
            "bounding box coordinates must be finite");
    require(x_max > x_min && y_max > y_min,
            strformat("degenerate bounding box [%g,%g,%g,%g]", x_min, y_min, x_max, y_max));
  }
};

inline double box_iou(const BoundingBox& a, const BoundingBox& b) {
  a.validate();
  b.validate();
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

// Normalized center distance d^2/c^2: squared distance between box centers
// over the squared diagonal of the smallest enclosing box.
inline double diou_penalty(const BoundingBox& pred, const BoundingBox& gt) {
  pred.validate();
  gt.validate();
  const double dx = pred.cx() - gt.cx();
  const double dy = pred.cy() - gt.cy();
  const double cw = std::max(pred.x_max, gt.x_max) - std::min(pred.x_min, gt.x_min);
  const double ch = std::max(pred.y_max, gt.y_max) - std::min(pred.y_min, gt.y_min);
  return (dx * dx + dy * dy) / (cw * cw + ch * ch);
}

// Aspect-ratio consistency v = (4/pi^2) * (atan(wg/hg) - atan(wp/hp))^2.
inline double aspect_term(const BoundingBox& pred, const BoundingBox& gt) {
  pred.validate();
  gt.validate();
  const double q = std::atan(gt.width() / gt.height()) - std::atan(pred.width() / pred.height());
  return 4.0 / (kPi * kPi) * q * q;
}

// CIoU loss = 1 - IoU + d^2/c^2 + v^2/((1-IoU)+v). The final term's
// denominator vanishes only at IoU=1 with v=0, where the term is defined as
// its limit 0.
inline double ciou_loss(const BoundingBox& pred, const BoundingBox& gt) {
  const double iou = box_iou(pred, gt);
  const double r = diou_penalty(pred, gt);
  const double v = aspect_term(pred, gt);
  const double denom = (1.0 - iou) + v;
  const double vterm = denom < 1e-12 ? 0.0 : v * v / denom;
  return 1.0 - iou + r + vterm;
}

struct BoxGrad {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
};

// Analytic gradient of ciou_loss w.r.t. the predicted box coordinates.
// Indicator-gated terms follow the max/min branches taken in the forward
// pass; exact-tie inputs sit on subgradient boundaries and are avoided by
// callers that compare against finite differences.
inline BoxGrad ciou_loss_grad(const BoundingBox& pred, const BoundingBox& gt) {
  pred.validate();
  gt.validate();

  const double wp = pred.width(), hp = pred.height();
  const double wg = gt.width(), hg = gt.height();
  const double area_p = pred.area(), area_g = gt.area();

  // IoU and per-coordinate intersection/union gradients.
  const double iw = std::min(pred.x_max, gt.x_max) - std::max(pred.x_min, gt.x_min);
  const double ih = std::min(pred.y_max, gt.y_max) - std::max(pred.y_min, gt.y_min);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = area_p + area_g - inter;
  const double iou = inter / uni;

  double di[4] = {0, 0, 0, 0};  // d inter / d {x_min, y_min, x_max, y_max}
  if (overlap) {
    if (pred.x_min > gt.x_min) di[0] = -ih;
    if (pred.y_min > gt.y_min) di[1] = -iw;
    if (pred.x_max < gt.x_max) di[2] = ih;
    if (pred.y_max < gt.y_max) di[3] = iw;
  }
  const double da[4] = {-hp, -wp, hp, wp};  // d area_p / d coord
  double diou[4];
  for (int i = 0; i < 4; ++i) {
    const double du = da[i] - di[i];
    diou[i] = (di[i] * uni - inter * du) / (uni * uni);
  }

  // d^2/c^2 gradients.
  const double dx = pred.cx() - gt.cx();
  const double dy = pred.cy() - gt.cy();
  const double d2 = dx * dx + dy * dy;
  const double cw = std::max(pred.x_max, gt.x_max) - std::min(pred.x_min, gt.x_min);
  const double ch = std::max(pred.y_max, gt.y_max) - std::min(pred.y_min, gt.y_min);
  const double c2 = cw * cw + ch * ch;
  const double dd2[4] = {dx, dy, dx, dy};  // d(d^2)/d coord, centers are coord means
  double dc2[4] = {0, 0, 0, 0};
  if (pred.x_min < gt.x_min) dc2[0] = -2.0 * cw;
  if (pred.y_min < gt.y_min) dc2[1] = -2.0 * ch;
  if (pred.x_max > gt.x_max) dc2[2] = 2.0 * cw;
  if (pred.y_max > gt.y_max) dc2[3] = 2.0 * ch;
  double dr[4];
  for (int i = 0; i < 4; ++i) dr[i] = (dd2[i] * c2 - d2 * dc2[i]) / (c2 * c2);

  // Aspect term v and the combined v^2/D factor, D = (1-IoU)+v.
  const double q = std::atan(wg / hg) - std::atan(wp / hp);
  const double v = 4.0 / (kPi * kPi) * q * q;
  const double dv_dw = -8.0 / (kPi * kPi) * q * hp / (hp * hp + wp * wp);
  const double dv_dh = 8.0 / (kPi * kPi) * q * wp / (hp * hp + wp * wp);
  const double dv[4] = {-dv_dw, -dv_dh, dv_dw, dv_dh};

  const double denom = (1.0 - iou) + v;
  double dvterm_diou = 0.0, dvterm_dv = 0.0;
  if (denom >= 1e-12) {
    dvterm_diou = v * v / (denom * denom);
    dvterm_dv = (2.0 * v * denom - v * v) / (denom * denom);
  }

  double g[4];
  for (int i = 0; i < 4; ++i) {
    g[i] = (-1.0 + dvterm_diou) * diou[i] + dr[i] + dvterm_dv * dv[i];
  }
  return BoxGrad{g[0], g[1], g[2], g[3]};
}

// ---------------------------------------------------------------------------
// Pointwise losses.
// ---------------------------------------------------------------------------
inline double clamp_prob(double x) { return std::clamp(x, 1e-12, 1.0 - 1e-12); }

inline double bce_loss(double x, double y, double w) {
  require(y >= 0.0 && y <= 1.0, "bce_loss: target must lie in [0,1]");
  const double p = clamp_prob(x);
  return -w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

inline double bce_loss_grad(double x, double y, double w) {
  const double p = clamp_prob(x);
  return -w * (y / p - (1.0 - y) / (1.0 - p));
}

inline double bce_loss_mean(const std::vector<double>& xs, const std::vector<double>& ys,
                            double w) {
  require(!xs.empty() && xs.size() == ys.size(), "bce_loss_mean: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) sum += bce_loss(xs[i], ys[i], w);
  return sum / static_cast<double>(xs.size());
}

// Distribution focal loss over the two bins bracketing the target:
// -[(y_hi - y) log S_lo + (y - y_lo) log S_hi], unit bin width.
inline double dfl_loss(double s_lo, double s_hi, double y, double y_lo, double y_hi) {
  require(y_lo < y_hi, "dfl_loss: bins must satisfy y_lo < y_hi");
  require(y >= y_lo && y <= y_hi,
          strformat("dfl_loss: target %g outside bin range [%g,%g]", y, y_lo, y_hi));
  return -((y_hi - y) * std::log(clamp_prob(s_lo)) + (y - y_lo) * std::log(clamp_prob(s_hi)));
}

inline std::pair<double, double> dfl_loss_grad(double s_lo, double s_hi, double y, double y_lo,
                                               double y_hi) {
  require(y_lo < y_hi && y >= y_lo && y <= y_hi, "dfl_loss_grad: invalid bins or target");
  return {-(y_hi - y) / clamp_prob(s_lo), -(y - y_lo) / clamp_prob(s_hi)};
}

// ---------------------------------------------------------------------------
// Counting metrics.
// ---------------------------------------------------------------------------
inline double accuracy(long tp, long tn, long fp, long fn) {
  const long total = tp + tn + fp + fn;
  require(total > 0, "accuracy: no samples");
  return static_cast<double>(tp + tn) / static_cast<double>(total);
}

inline double precision(long tp, long fp) {
  require(tp + fp > 0, "precision undefined: no positive predictions");
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

inline double recall(long tp, long fn) {
  require(tp + fn > 0, "recall undefined: no positive ground truth");
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

// F-beta from counts: (1+b^2)tp / ((1+b^2)tp + b^2 fn + fp).
inline double fbeta(long tp, long fp, long fn, double beta) {
  require(beta >= 0.0, "fbeta: beta must be non-negative");
  require(tp + fp + fn > 0, "fbeta undefined: all counts zero");
  const double b2 = beta * beta;
  const double denom = (1.0 + b2) * tp + b2 * fn + fp;
  require(denom > 0.0, "fbeta undefined: zero denominator");
  return (1.0 + b2) * tp / denom;
}

inline double f1(long tp, long fp, long fn) { return fbeta(tp, fp, fn, 1.0); }

// ---------------------------------------------------------------------------
// Detection evaluation: greedy IoU matching, P-R curves, AP, mAP@50.
// ---------------------------------------------------------------------------
struct DetectionSet {
  std::string image_id;
  std::vector<BoundingBox> ground_truth;
  std::vector<BoundingBox> predictions;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ClassEval {
  int class_id = 0;
  double ap = 0.0;
  long gt_count = 0;
  std::vector<PrPoint> pr;  // cumulative points in confidence order
};

struct MapReport {
  std::vector<ClassEval> per_class;  // classes with ground truth, ascending id
  double map50 = 0.0;
};

struct MatchCounts {
  long tp = 0, fp = 0, fn = 0;
};

namespace detail {

struct RankedPrediction {
  const BoundingBox* box;
  std::size_t image;
  std::size_t order;  // original position, keeps sorting stable under ties
};

// All-points interpolation: integrate the running maximum of precision over
// recall, right to left.
inline double average_precision(const std::vector<PrPoint>& pr) {
  double ap = 0.0;
  double pmax = 0.0;
  for (std::size_t i = pr.size(); i-- > 0;) {
    pmax = std::max(pmax, pr[i].precision);
    const double r_prev = i == 0 ? 0.0 : pr[i - 1].recall;
    ap += (pr[i].recall - r_prev) * pmax;
  }
  return ap;
}

}  // namespace detail

inline MapReport map50(const std::vector<DetectionSet>& sets, double iou_threshold = 0.5) {
  long total_gt = 0;
  std::map<int, long> gt_per_class;
  for (const DetectionSet& set : sets) {
    for (const BoundingBox& gt : set.ground_truth) {
      gt.validate();
      ++gt_per_class[gt.class_id];
      ++total_gt;
    }
  }
  require(total_gt > 0, "map50 needs at least one ground-truth box");

  MapReport report;
  std::map<int, std::vector<detail::RankedPrediction>> preds_per_class;
  std::size_t order = 0;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (const BoundingBox& p : sets[s].predictions) {
      p.validate();
      require(p.confidence >= 0.0 && p.confidence <= 1.0,
              strformat("prediction confidence %g outside [0,1]", p.confidence));
      preds_per_class[p.class_id].push_back({&p, s, order++});
    }
  }

  for (auto& [cls, preds] : preds_per_class) {
    std::stable_sort(preds.begin(), preds.end(),
                     [](const detail::RankedPrediction& a, const detail::RankedPrediction& b) {
                       if (a.box->confidence != b.box->confidence) {
                         return a.box->confidence > b.box->confidence;
                       }
                       return a.order < b.order;
                     });
  }

  double ap_sum = 0.0;
  for (const auto& [cls, gt_count] : gt_per_class) {
    ClassEval eval;
    eval.class_id = cls;
    eval.gt_count = gt_count;
    auto it = preds_per_class.find(cls);
    if (it != preds_per_class.end()) {
      // matched[s][g]: ground-truth g of image s already claimed
      std::vector<std::vector<bool>> matched(sets.size());
      for (std::size_t s = 0; s < sets.size(); ++s) {
        matched[s].assign(sets[s].ground_truth.size(), false);
      }
      long tp = 0, fp = 0;
      for (const detail::RankedPrediction& rp : it->second) {
        const std::vector<BoundingBox>& gts = sets[rp.image].ground_truth;
        double best_iou = 0.0;
        std::size_t best = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (gts[g].class_id != cls || matched[rp.image][g]) continue;
          const double iou = box_iou(*rp.box, gts[g]);
          if (iou > best_iou) {
            best_iou = iou;
            best = g;
          }
        }
        if (best < gts.size() && best_iou >= iou_threshold) {
          matched[rp.image][best] = true;
          ++tp;
        } else {
          ++fp;
        }
        eval.pr.push_back({static_cast<double>(tp) / static_cast<double>(gt_count),
                           static_cast<double>(tp) / static_cast<double>(tp + fp)});
      }
      eval.ap = detail::average_precision(eval.pr);
    }
    ap_sum += eval.ap;
    report.per_class.push_back(std::move(eval));
  }
  report.map50 = ap_sum / static_cast<double>(gt_per_class.size());
  return report;
}

// TP/FP/FN under greedy IoU matching, keeping only predictions at or above
// the confidence threshold. Feeds the F1-at-confidence metric.
inline MatchCounts detection_counts(const std::vector<DetectionSet>& sets, double iou_threshold,
                                    double conf_threshold) {
  MatchCounts counts;
  for (const DetectionSet& set : sets) {
    std::vector<detail::RankedPrediction> preds;
    for (std::size_t i = 0; i < set.predictions.size(); ++i) {
      const BoundingBox& p = set.predictions[i];
      p.validate();
      if (p.confidence >= conf_threshold) preds.push_back({&p, 0, i});
    }
    std::stable_sort(preds.begin(), preds.end(),
                     [](const detail::RankedPrediction& a, const detail::RankedPrediction& b) {
                       if (a.box->confidence != b.box->confidence) {
                         return a.box->confidence > b.box->confidence;
                       }
                       return a.order < b.order;
                     });
    std::vector<bool> matched(set.ground_truth.size(), false);
    for (const detail::RankedPrediction& rp : preds) {
      double best_iou = 0.0;
      std::size_t best = set.ground_truth.size();
      for (std::size_t g = 0; g < set.ground_truth.size(); ++g) {
        if (set.ground_truth[g].class_id != rp.box->class_id || matched[g]) continue;
        const double iou = box_iou(*rp.box, set.ground_truth[g]);
        if (iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
      if (best < set.ground_truth.size() && best_iou >= iou_threshold) {
        matched[best] = true;
        ++counts.tp;
      } else {
        ++counts.fp;
      }
    }
    counts.fn += static_cast<long>(set.ground_truth.size()) -
                 static_cast<long>(std::count(matched.begin(), matched.end(), true));
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Interchange files.
// ---------------------------------------------------------------------------
namespace detail {

inline double parse_strict_double(const std::string& field, const char* what, int line) {
  require(!field.empty(), strformat("detection csv line %d: empty %s", line, what));
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  require(end == begin + field.size() && std::isfinite(v),
          strformat("detection csv line %d: bad %s '%s'", line, what, field.c_str()));
  return v;
}

inline long parse_strict_long(const std::string& field, const char* what, int line) {
  require(!field.empty(), strformat("detection csv line %d: empty %s", line, what));
  const char* begin = field.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  require(end == begin + field.size(),
          strformat("detection csv line %d: bad %s '%s'", line, what, field.c_str()));
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

inline const char* kDetectionCsvHeader = "image_id,class_id,x_min,y_min,x_max,y_max,confidence";

// CSV with one box per row; an empty confidence field marks ground truth.
// Images appear in first-encounter order; rows keep file order within images.
inline std::vector<DetectionSet> read_detections(std::istream& in, const std::string& what) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), strformat("%s: empty file", what.c_str()));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kDetectionCsvHeader,
          strformat("%s: expected header '%s', got '%s'", what.c_str(), kDetectionCsvHeader,
                    line.c_str()));
  std::vector<DetectionSet> sets;
  std::map<std::string, std::size_t> index;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = detail::split_csv_line(line);
    require(f.size() == 7,
            strformat("%s line %d: expected 7 fields, got %zu", what.c_str(), line_no, f.size()));
    require(!f[0].empty(), strformat("%s line %d: empty image_id", what.c_str(), line_no));
    BoundingBox box;
    box.class_id = static_cast<int>(detail::parse_strict_long(f[1], "class_id", line_no));
    box.x_min = detail::parse_strict_double(f[2], "x_min", line_no);
    box.y_min = detail::parse_strict_double(f[3], "y_min", line_no);
    box.x_max = detail::parse_strict_double(f[4], "x_max", line_no);
    box.y_max = detail::parse_strict_double(f[5], "y_max", line_no);
    box.validate();
    auto [it, inserted] = index.try_emplace(f[0], sets.size());
    if (inserted) {
      sets.push_back(DetectionSet{f[0], {}, {}});
    }
    DetectionSet& set = sets[it->second];
    if (f[6].empty()) {
      set.ground_truth.push_back(box);
    } else {
      box.confidence = detail::parse_strict_double(f[6], "confidence", line_no);
      require(box.confidence >= 0.0 && box.confidence <= 1.0,
              strformat("%s line %d: confidence outside [0,1]", what.c_str(), line_no));
      set.predictions.push_back(box);
    }
  }
  return sets;
}

inline std::vector<DetectionSet> read_detections(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), strformat("cannot open detection file '%s'", path.c_str()));
  return read_detections(in, path);
}

inline void write_detections(std::ostream& out, const std::vector<DetectionSet>& sets) {
  out << kDetectionCsvHeader << '\n';
  for (const DetectionSet& set : sets) {
    for (const BoundingBox& gt : set.ground_truth) {
      out << set.image_id << ',' << gt.class_id << ',' << format_double(gt.x_min) << ','
          << format_double(gt.y_min) << ',' << format_double(gt.x_max) << ','
          << format_double(gt.y_max) << ",\n";
    }
    for (const BoundingBox& p : set.predictions) {
      out << set.image_id << ',' << p.class_id << ',' << format_double(p.x_min) << ','
          << format_double(p.y_min) << ',' << format_double(p.x_max) << ','
          << format_double(p.y_max) << ',' << format_double(p.confidence) << '\n';
    }
  }
}

inline void write_pr_csv(std::ostream& out, const MapReport& report) {
  out << "class_id,recall,precision\n";
  for (const ClassEval& eval : report.per_class) {
    for (const PrPoint& pt : eval.pr) {
      out << eval.class_id << ',' << format_double(pt.recall) << ','
          << format_double(pt.precision) << '\n';
    }
  }
}

// Metrics table: per-class AP, mAP@50, and F1 over predictions with
// confidence >= 0.5. An undefined F1 (no boxes survive) is reported as an
// empty value rather than an error.
inline void write_detect_metrics_csv(std::ostream& out, const MapReport& report,
                                     const MatchCounts& counts) {
  out << "metric,class_id,value\n";
  for (const ClassEval& eval : report.per_class) {
    out << "ap," << eval.class_id << ',' << format_double(eval.ap) << '\n';
  }
  out << "map50,," << format_double(report.map50) << '\n';
  out << "f1@conf0.5,,";
  if (counts.tp + counts.fp + counts.fn > 0) {
    out << format_double(f1(counts.tp, counts.fp, counts.fn));
  }
  out << '\n';
}

}  // namespace clipforge
