#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "clipforge/detection.hpp"
#include "clipforge/gradcheck.hpp"
#include "clipforge/rng.hpp"
#include "detection_oracle.hpp"

using namespace clipforge;
using Catch::Matchers::ContainsSubstring;
using detoracle::box;
using detoracle::lattice_box;
using detoracle::lattice_iou;
using detoracle::oracle_class_ap;
using detoracle::oracle_map50;
using detoracle::random_detection_scenario;

TEST_CASE("iou matches the lattice-counting oracle on 1000 random pairs") {
  Rng rng(41);
  long overlapping = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const BoundingBox a = lattice_box(rng);
    const BoundingBox b = lattice_box(rng);
    const double iou = box_iou(a, b);
    REQUIRE(iou == Catch::Approx(lattice_iou(a, b)).margin(1e-12));
    REQUIRE(iou >= 0.0);
    REQUIRE(iou <= 1.0);
    if (iou > 0.0) ++overlapping;
  }
  REQUIRE(overlapping > 100);  // the case mix actually exercises overlaps
  REQUIRE(box_iou(box(0, 0, 2, 2), box(0, 0, 2, 2)) == 1.0);
  REQUIRE(box_iou(box(0, 0, 1, 1), box(2, 2, 3, 3)) == 0.0);
}

TEST_CASE("overlap-loss worked example: unit-offset squares") {
  // pred (0,0,2,2) vs gt (1,1,3,3): IoU = 1/7, d^2 = 2, c^2 = 18, equal
  // aspect ratios so v = 0; loss = 1 - 1/7 + 2/18 = 61/63.
  const BoundingBox pred = box(0, 0, 2, 2);
  const BoundingBox gt = box(1, 1, 3, 3);
  REQUIRE(box_iou(pred, gt) == Catch::Approx(1.0 / 7.0).margin(1e-15));
  REQUIRE(diou_penalty(pred, gt) == Catch::Approx(2.0 / 18.0).margin(1e-15));
  REQUIRE(aspect_term(pred, gt) == 0.0);
  const double loss = ciou_loss(pred, gt);
  REQUIRE(loss == Catch::Approx(61.0 / 63.0).margin(1e-12));
  REQUIRE(std::fabs(loss - 0.968254) < 1e-6);
}

TEST_CASE("aspect term evaluates the arctangent difference") {
  // Same-center 2x1 vs 1x2 boxes: (4/pi^2)(atan 2 - atan 0.5)^2.
  const BoundingBox wide = box(-1.0, -0.5, 1.0, 0.5);
  const BoundingBox tall = box(-0.5, -1.0, 0.5, 1.0);
  const double v = aspect_term(tall, wide);  // gt aspect 2, pred aspect 0.5
  REQUIRE(v == Catch::Approx(0.16782584597716224).margin(1e-12));
  REQUIRE(aspect_term(wide, tall) == Catch::Approx(v).margin(1e-12));  // symmetric in q^2
  // Matching aspect ratios zero the term regardless of scale.
  REQUIRE(aspect_term(box(0, 0, 2, 4), box(5, 5, 6, 7)) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("overlap loss dominates its ablations and vanishes only at identity") {
  Rng rng(43);
  for (int trial = 0; trial < 1000; ++trial) {
    const BoundingBox a = lattice_box(rng);
    const BoundingBox b = lattice_box(rng);
    const double iou = box_iou(a, b);
    const double loss = ciou_loss(a, b);
    REQUIRE(loss >= 0.0);
    // Adding the center and aspect penalties never lowers the loss.
    REQUIRE(loss >= 1.0 - iou + diou_penalty(a, b) - 1e-15);
    REQUIRE(loss >= 1.0 - iou - 1e-15);
  }
  // Identical boxes: IoU=1, both penalties 0, the v^2 term takes its limit 0.
  const BoundingBox same = box(1.5, 2.0, 4.0, 3.25);
  REQUIRE(ciou_loss(same, same) == 0.0);
  // Any distinct pair is strictly positive.
  REQUIRE(ciou_loss(box(0, 0, 2, 2), box(0, 0, 2, 2.25)) > 0.0);
}

namespace {

// Random box pair staying clear of the min/max branch boundaries so central
// differences at h=1e-5 cannot flip a branch.
std::pair<BoundingBox, BoundingBox> generic_pair(Rng& rng) {
  while (true) {
    const BoundingBox p = box(rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0), 0, 0);
    BoundingBox pred = box(p.x_min, p.y_min, p.x_min + rng.uniform(0.5, 4.0),
                           p.y_min + rng.uniform(0.5, 4.0));
    const BoundingBox g = box(rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0), 0, 0);
    BoundingBox gt = box(g.x_min, g.y_min, g.x_min + rng.uniform(0.5, 4.0),
                         g.y_min + rng.uniform(0.5, 4.0));
    const double margin = 0.02;
    const double diffs[4] = {pred.x_min - gt.x_min, pred.y_min - gt.y_min,
                             pred.x_max - gt.x_max, pred.y_max - gt.y_max};
    bool ok = true;
    for (double d : diffs) ok = ok && std::fabs(d) > margin;
    const double iw = std::min(pred.x_max, gt.x_max) - std::max(pred.x_min, gt.x_min);
    const double ih = std::min(pred.y_max, gt.y_max) - std::max(pred.y_min, gt.y_min);
    ok = ok && std::fabs(iw) > margin && std::fabs(ih) > margin;
    // Keep the loss smooth: only fully overlapping or fully separated pairs.
    ok = ok && !(iw > 0.0) == !(ih > 0.0);
    if (ok) return {pred, gt};
  }
}

}  // namespace

TEST_CASE("overlap-loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 13);
    for (int rep = 0; rep < 20; ++rep) {
      auto [pred, gt] = generic_pair(rng);
      const BoxGrad g = ciou_loss_grad(pred, gt);
      double* coords[4] = {&pred.x_min, &pred.y_min, &pred.x_max, &pred.y_max};
      const double analytic[4] = {g.x_min, g.y_min, g.x_max, g.y_max};
      for (int i = 0; i < 4; ++i) {
        const double saved = *coords[i];
        const double h = 1e-5;
        *coords[i] = saved + h;
        const double up = ciou_loss(pred, gt);
        *coords[i] = saved - h;
        const double down = ciou_loss(pred, gt);
        *coords[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        INFO("seed " << seed << " rep " << rep << " coord " << i);
        REQUIRE(grad_rel_err(analytic[i], numeric) < 1e-4);
      }
    }
  }
}

TEST_CASE("binary cross-entropy values and gradients") {
  REQUIRE(bce_loss(0.5, 1.0, 1.0) == Catch::Approx(std::log(2.0)).margin(1e-15));
  REQUIRE(bce_loss(0.5, 0.0, 1.0) == Catch::Approx(std::log(2.0)).margin(1e-15));
  REQUIRE(bce_loss(0.9, 1.0, 2.0) == Catch::Approx(-2.0 * std::log(0.9)).margin(1e-15));
  REQUIRE(bce_loss(1.0, 1.0, 1.0) >= 0.0);  // clamp keeps the endpoints finite
  REQUIRE(std::isfinite(bce_loss(0.0, 1.0, 1.0)));
  REQUIRE_THROWS_AS(bce_loss(0.5, 1.5, 1.0), Error);

  REQUIRE(bce_loss_mean({0.5, 0.5}, {1.0, 0.0}, 1.0) ==
          Catch::Approx(std::log(2.0)).margin(1e-15));
  REQUIRE_THROWS_AS(bce_loss_mean({}, {}, 1.0), Error);
  REQUIRE_THROWS_AS(bce_loss_mean({0.5}, {1.0, 0.0}, 1.0), Error);

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 7);
    for (int rep = 0; rep < 30; ++rep) {
      const double x = rng.uniform(0.05, 0.95);
      const double y = rep % 3 == 0 ? 1.0 : (rep % 3 == 1 ? 0.0 : rng.uniform());
      const double w = rng.uniform(0.2, 3.0);
      const double h = 1e-5;
      const double numeric = (bce_loss(x + h, y, w) - bce_loss(x - h, y, w)) / (2.0 * h);
      REQUIRE(grad_rel_err(bce_loss_grad(x, y, w), numeric) < 1e-4);
    }
  }
}

TEST_CASE("bin-pair focal loss values and gradients") {
  // Equal mass on both bins with the target midway: -log(1/2).
  REQUIRE(dfl_loss(0.5, 0.5, 0.5, 0.0, 1.0) == Catch::Approx(std::log(2.0)).margin(1e-15));
  // Target on a bin edge reads only that bin.
  REQUIRE(dfl_loss(0.8, 0.3, 2.0, 2.0, 3.0) == Catch::Approx(-std::log(0.8)).margin(1e-15));
  REQUIRE(dfl_loss(0.3, 0.8, 3.0, 2.0, 3.0) == Catch::Approx(-std::log(0.8)).margin(1e-15));
  REQUIRE_THROWS_AS(dfl_loss(0.5, 0.5, 1.5, 2.0, 3.0), Error);  // target outside bins
  REQUIRE_THROWS_AS(dfl_loss(0.5, 0.5, 2.0, 3.0, 2.0), Error);  // inverted bins

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 3 + 1);
    for (int rep = 0; rep < 30; ++rep) {
      const double s_lo = rng.uniform(0.05, 0.95);
      const double s_hi = rng.uniform(0.05, 0.95);
      const double y_lo = rng.uniform(0.0, 2.0);
      const double y_hi = y_lo + 1.0;
      const double y = rng.uniform(y_lo + 0.05, y_hi - 0.05);
      const auto [g_lo, g_hi] = dfl_loss_grad(s_lo, s_hi, y, y_lo, y_hi);
      const double h = 1e-5;
      const double n_lo =
          (dfl_loss(s_lo + h, s_hi, y, y_lo, y_hi) - dfl_loss(s_lo - h, s_hi, y, y_lo, y_hi)) /
          (2.0 * h);
      const double n_hi =
          (dfl_loss(s_lo, s_hi + h, y, y_lo, y_hi) - dfl_loss(s_lo, s_hi - h, y, y_lo, y_hi)) /
          (2.0 * h);
      REQUIRE(grad_rel_err(g_lo, n_lo) < 1e-4);
      REQUIRE(grad_rel_err(g_hi, n_hi) < 1e-4);
    }
  }
}

TEST_CASE("counting metrics match their closed forms") {
  REQUIRE(f1(2, 1, 1) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(accuracy(3, 5, 1, 1) == Catch::Approx(0.8).margin(1e-15));
  REQUIRE(precision(3, 1) == Catch::Approx(0.75).margin(1e-15));
  REQUIRE(recall(3, 2) == Catch::Approx(0.6).margin(1e-15));
  // beta -> 0 recovers precision; beta = 2 weighs recall four times as much.
  REQUIRE(fbeta(3, 1, 2, 0.0) == Catch::Approx(precision(3, 1)).margin(1e-15));
  REQUIRE(fbeta(3, 1, 2, 2.0) == Catch::Approx(5.0 * 3.0 / (5.0 * 3.0 + 4.0 * 2.0 + 1.0))
                                     .margin(1e-15));
  REQUIRE_THROWS_AS(precision(0, 0), Error);
  REQUIRE_THROWS_AS(recall(0, 0), Error);
  REQUIRE_THROWS_AS(accuracy(0, 0, 0, 0), Error);
  REQUIRE_THROWS_AS(fbeta(0, 0, 0, 1.0), Error);
  REQUIRE_THROWS_AS(fbeta(1, 1, 1, -1.0), Error);
}

TEST_CASE("greedy matching counts true/false positives and misses") {
  DetectionSet set;
  set.image_id = "a";
  set.ground_truth = {box(0, 0, 4, 4), box(10, 10, 14, 14), box(20, 20, 24, 24)};
  set.predictions = {
      box(0, 0, 4, 4, 0, 0.9),          // exact hit
      box(0.5, 0.5, 4.5, 4.5, 0, 0.8),  // same gt, already claimed -> FP
      box(10, 10, 14, 15, 0, 0.7),      // IoU 0.8 with the second gt -> TP
  };
  const MatchCounts c = detection_counts({set}, 0.5, 0.5);
  REQUIRE(c.tp == 2);
  REQUIRE(c.fp == 1);
  REQUIRE(c.fn == 1);
  REQUIRE(f1(c.tp, c.fp, c.fn) == Catch::Approx(2.0 / 3.0).margin(1e-15));

  // Raising the confidence threshold drops the third prediction.
  const MatchCounts strict = detection_counts({set}, 0.5, 0.75);
  REQUIRE(strict.tp == 1);
  REQUIRE(strict.fp == 1);
  REQUIRE(strict.fn == 2);

  // Class mismatches never match even at IoU 1.
  DetectionSet cls;
  cls.image_id = "b";
  cls.ground_truth = {box(0, 0, 4, 4, 1)};
  cls.predictions = {box(0, 0, 4, 4, 0, 0.9)};
  const MatchCounts cc = detection_counts({cls}, 0.5, 0.0);
  REQUIRE(cc.tp == 0);
  REQUIRE(cc.fp == 1);
  REQUIRE(cc.fn == 1);

  // Confidence order decides who claims a contested box, not file order.
  DetectionSet contested;
  contested.image_id = "c";
  contested.ground_truth = {box(0, 0, 4, 4)};
  contested.predictions = {box(0.5, 0.5, 4.5, 4.5, 0, 0.4), box(0, 0, 4, 4, 0, 0.9)};
  const MatchCounts order = detection_counts({contested}, 0.5, 0.0);
  REQUIRE(order.tp == 1);
  REQUIRE(order.fp == 1);
}

TEST_CASE("average precision on a hand-worked ranking") {
  // One class, two images, one gt each. Ranked predictions: TP, FP, TP.
  // PR points: (0.5,1), (0.5,0.5), (1,2/3); all-points AP = 0.5*1 + 0.5*(2/3).
  std::vector<DetectionSet> sets(2);
  sets[0].image_id = "i0";
  sets[0].ground_truth = {box(0, 0, 4, 4)};
  sets[0].predictions = {box(0, 0, 4, 4, 0, 0.9), box(8, 8, 10, 10, 0, 0.8)};
  sets[1].image_id = "i1";
  sets[1].ground_truth = {box(0, 0, 4, 4)};
  sets[1].predictions = {box(0, 0, 4, 4, 0, 0.7)};
  const MapReport report = map50(sets);
  REQUIRE(report.per_class.size() == 1);
  REQUIRE(report.per_class[0].gt_count == 2);
  REQUIRE(report.per_class[0].pr.size() == 3);
  REQUIRE(report.per_class[0].pr[0].recall == Catch::Approx(0.5));
  REQUIRE(report.per_class[0].pr[0].precision == Catch::Approx(1.0));
  REQUIRE(report.per_class[0].pr[2].recall == Catch::Approx(1.0));
  REQUIRE(report.per_class[0].pr[2].precision == Catch::Approx(2.0 / 3.0));
  REQUIRE(report.map50 == Catch::Approx(0.5 + 0.5 * 2.0 / 3.0).margin(1e-12));

  // Perfect predictions: AP 1 for both classes, mean 1.
  std::vector<DetectionSet> perfect(1);
  perfect[0].image_id = "p";
  perfect[0].ground_truth = {box(0, 0, 4, 4, 0), box(6, 6, 9, 9, 1)};
  perfect[0].predictions = {box(0, 0, 4, 4, 0, 0.9), box(6, 6, 9, 9, 1, 0.8)};
  const MapReport ideal = map50(perfect);
  REQUIRE(ideal.map50 == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(ideal.per_class.size() == 2);

  // A gt class with no predictions contributes AP 0 to the mean.
  std::vector<DetectionSet> half(1);
  half[0].image_id = "h";
  half[0].ground_truth = {box(0, 0, 4, 4, 0), box(6, 6, 9, 9, 1)};
  half[0].predictions = {box(0, 0, 4, 4, 0, 0.9)};
  REQUIRE(map50(half).map50 == Catch::Approx(0.5).margin(1e-12));

  REQUIRE_THROWS_AS(map50({}), Error);
}

TEST_CASE("equal-confidence ranking keeps file order") {
  // Two equal-confidence predictions: the earlier row is ranked first, so the
  // running curve passes through precision 1 before the false positive.
  std::vector<DetectionSet> sets(1);
  sets[0].image_id = "t";
  sets[0].ground_truth = {box(0, 0, 4, 4)};
  sets[0].predictions = {box(0, 0, 4, 4, 0, 0.5), box(8, 8, 10, 10, 0, 0.5)};
  const MapReport report = map50(sets);
  REQUIRE(report.per_class[0].pr[0].precision == Catch::Approx(1.0));
  REQUIRE(report.map50 == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("map50 equals the threshold-sweep oracle on random scenarios") {
  Rng rng(2718);
  for (int scenario = 0; scenario < 100; ++scenario) {
    const std::vector<DetectionSet> sets = random_detection_scenario(rng);

    const MapReport report = map50(sets);
    const double oracle = oracle_map50(sets, 0.5);
    INFO("scenario " << scenario);
    REQUIRE(std::fabs(report.map50 - oracle) <= 1e-9);
    for (const ClassEval& eval : report.per_class) {
      REQUIRE(std::fabs(eval.ap - oracle_class_ap(sets, eval.class_id, eval.gt_count, 0.5)) <=
              1e-9);
    }
  }
}

TEST_CASE("detection csv parses strictly and round-trips") {
  std::vector<DetectionSet> sets(2);
  sets[0].image_id = "a";
  sets[0].ground_truth = {box(0, 0, 4, 4, 1)};
  sets[0].predictions = {box(0.5, 0.25, 4, 4, 1, 0.625)};
  sets[1].image_id = "b";
  sets[1].ground_truth = {box(1, 1, 2, 3, 0)};

  std::ostringstream out;
  write_detections(out, sets);
  std::istringstream in(out.str());
  const std::vector<DetectionSet> back = read_detections(in, "roundtrip");
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].image_id == "a");
  REQUIRE(back[0].ground_truth.size() == 1);
  REQUIRE(back[0].predictions.size() == 1);
  REQUIRE(back[0].predictions[0].confidence == 0.625);
  REQUIRE(back[0].predictions[0].x_min == 0.5);
  REQUIRE(back[1].ground_truth[0].class_id == 0);

  const auto parse = [](const std::string& text) {
    std::istringstream s(text);
    return read_detections(s, "t");
  };
  const std::string header = "image_id,class_id,x_min,y_min,x_max,y_max,confidence\n";
  REQUIRE_THROWS_WITH(parse(""), ContainsSubstring("empty file"));
  REQUIRE_THROWS_WITH(parse("bogus\n"), ContainsSubstring("expected header"));
  REQUIRE_THROWS_WITH(parse(header + "a,0,0,0,1,1,\na,0,0,0,1\n"),
                      ContainsSubstring("line 3"));
  REQUIRE_THROWS_WITH(parse(header + "a,0,zero,0,1,1,\n"), ContainsSubstring("bad x_min"));
  REQUIRE_THROWS_WITH(parse(header + "a,0,0,0,1,1,1.5\n"),
                      ContainsSubstring("confidence outside [0,1]"));
  REQUIRE_THROWS_WITH(parse(header + "a,0,2,2,1,1,\n"), ContainsSubstring("degenerate"));
  REQUIRE_THROWS_WITH(parse(header + ",0,0,0,1,1,\n"), ContainsSubstring("empty image_id"));

  // CRLF and blank lines are tolerated; boxes group by first encounter.
  const std::vector<DetectionSet> crlf =
      parse(header + "a,0,0,0,1,1,\r\n\nb,0,0,0,1,1,0.5\r\na,1,2,2,3,3,\n");
  REQUIRE(crlf.size() == 2);
  REQUIRE(crlf[0].ground_truth.size() == 2);
  REQUIRE(crlf[1].predictions.size() == 1);
}

TEST_CASE("metric and curve files list every row") {
  std::vector<DetectionSet> sets(1);
  sets[0].image_id = "a";
  sets[0].ground_truth = {box(0, 0, 4, 4, 0), box(5, 5, 8, 8, 1)};
  sets[0].predictions = {box(0, 0, 4, 4, 0, 0.9), box(5, 5, 8, 8, 1, 0.8)};
  const MapReport report = map50(sets);
  const MatchCounts counts = detection_counts(sets, 0.5, 0.5);

  std::ostringstream metrics;
  write_detect_metrics_csv(metrics, report, counts);
  REQUIRE_THAT(metrics.str(), ContainsSubstring("metric,class_id,value"));
  REQUIRE_THAT(metrics.str(), ContainsSubstring("ap,0,1"));
  REQUIRE_THAT(metrics.str(), ContainsSubstring("ap,1,1"));
  REQUIRE_THAT(metrics.str(), ContainsSubstring("map50,,1"));
  REQUIRE_THAT(metrics.str(), ContainsSubstring("f1@conf0.5,,1"));

  std::ostringstream pr;
  write_pr_csv(pr, report);
  std::istringstream lines(pr.str());
  std::string line;
  int rows = 0;
  std::getline(lines, line);
  REQUIRE(line == "class_id,recall,precision");
  while (std::getline(lines, line)) ++rows;
  REQUIRE(rows == 2);  // one ranked prediction per class

  // With no predictions above threshold the F1 cell is left empty.
  std::ostringstream empty_metrics;
  write_detect_metrics_csv(empty_metrics, report, MatchCounts{});
  REQUIRE_THAT(empty_metrics.str(), ContainsSubstring("f1@conf0.5,,\n"));
}

TEST_CASE("degenerate boxes are rejected everywhere") {
  REQUIRE_THROWS_AS(box(0, 0, 0, 1).validate(), Error);
  REQUIRE_THROWS_AS(box(0, 0, 1, 0).validate(), Error);
  REQUIRE_THROWS_AS(box_iou(box(0, 0, 0, 1), box(0, 0, 1, 1)), Error);
  REQUIRE_THROWS_AS(ciou_loss(box(0, 0, 1, 1), box(2, 2, 2, 3)), Error);
}
