#include <catch2/catch_amalgamated.hpp>

#include "fgrr/evaluation.hpp"

using namespace fgrr;

namespace {

// Independent AP oracle: explicit confusion bookkeeping over score-sorted
// detections and trapezoid-free envelope integration over unique recalls.
double ap_oracle(std::vector<std::tuple<double, bool>> recs, int num_gt) {
  if (num_gt == 0) return 0.0;
  std::sort(recs.begin(), recs.end(),
            [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  std::vector<double> prec, rec;
  int tp = 0, n = 0;
  for (const auto& [score, hit] : recs) {
    ++n;
    if (hit) ++tp;
    prec.push_back(double(tp) / n);
    rec.push_back(double(tp) / num_gt);
  }
  double ap = 0.0;
  for (int g = 1; g <= num_gt; ++g) {
    const double r = double(g) / num_gt;
    // max precision at recall >= r
    double best = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i)
      if (rec[i] >= r) best = std::max(best, prec[i]);
    ap += best / num_gt;
  }
  return ap;
}

}  // namespace

TEST_CASE("perfect predictions give mAP 1", "[evaluation]") {
  ImageEval img;
  img.gt_boxes = {Box{0, 0, 10, 10}, Box{30, 30, 50, 50}};
  img.gt_labels = {1, 2};
  img.detections = {Detection{Box{0, 0, 10, 10}, 1, 1.0},
                    Detection{Box{30, 30, 50, 50}, 2, 1.0}};
  CHECK(evaluate_map({img}, 0.5) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("zero predictions give mAP 0", "[evaluation]") {
  ImageEval img;
  img.gt_boxes = {Box{0, 0, 10, 10}};
  img.gt_labels = {1};
  CHECK(evaluate_map({img}, 0.5) == 0.0);
}

TEST_CASE("hand-built TP/FP/TP case integrates to 5/6", "[evaluation]") {
  ImageEval img;
  img.gt_boxes = {Box{0, 0, 10, 10}, Box{50, 50, 60, 60}};
  img.gt_labels = {1, 1};
  img.detections = {
      Detection{Box{2.5, 0, 12.5, 10}, 1, 0.9},    // IoU 0.6 with gt1 -> TP
      Detection{Box{5, 0, 15, 10}, 1, 0.8},        // best unmatched IoU < 0.5 -> FP
      Detection{Box{51.5, 50, 61.5, 60}, 1, 0.7},  // IoU ~0.74 with gt2 -> TP
  };
  // PR points: (r=0.5, p=1), (r=0.5, p=0.5), (r=1, p=2/3)
  // all-points AP = 0.5 * 1 + 0.5 * (2/3) = 5/6
  CHECK(evaluate_map({img}, 0.5) == Catch::Approx(5.0 / 6.0).margin(1e-9));
}

TEST_CASE("classes without ground truth are excluded from the mean", "[evaluation]") {
  ImageEval img;
  img.gt_boxes = {Box{0, 0, 10, 10}};
  img.gt_labels = {1};
  img.detections = {Detection{Box{0, 0, 10, 10}, 1, 0.9},
                    Detection{Box{20, 20, 30, 30}, 2, 0.8}};  // class 2 never in GT
  CHECK(evaluate_map({img}, 0.5) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("duplicate detections of one object count as false positives", "[evaluation]") {
  ImageEval img;
  img.gt_boxes = {Box{0, 0, 10, 10}};
  img.gt_labels = {1};
  img.detections = {Detection{Box{0, 0, 10, 10}, 1, 0.9},
                    Detection{Box{0.5, 0, 10.5, 10}, 1, 0.8}};
  // AP: first detection TP at recall 1; envelope max precision at r=1 is 1.
  CHECK(evaluate_map({img}, 0.5) == Catch::Approx(1.0).margin(1e-12));
  // A sub-threshold detection outranking the true one caps precision at
  // recall 1 to 1/2.
  img.detections = {Detection{Box{6, 0, 16, 10}, 1, 0.9},  // IoU 0.25 -> FP
                    Detection{Box{0, 0, 10, 10}, 1, 0.8}};
  CHECK(evaluate_map({img}, 0.5) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("evaluate_map agrees with an independent matcher on random cases",
          "[evaluation]") {
  Rng rng(1201);
  for (int inst = 0; inst < 50; ++inst) {
    const int n_img = rng.uniform_int(1, 4);
    std::vector<ImageEval> images(static_cast<std::size_t>(n_img));
    // Single class keeps the oracle simple while the matcher is exercised.
    std::map<int, std::vector<std::tuple<double, bool>>> class_recs;
    std::map<int, int> class_gt;
    for (auto& img : images) {
      const int n_gt = rng.uniform_int(0, 3);
      for (int g = 0; g < n_gt; ++g) {
        const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
        img.gt_boxes.push_back(Box{x, y, x + rng.uniform(8, 20), y + rng.uniform(8, 20)});
        img.gt_labels.push_back(rng.uniform_int(1, 2));
      }
      const int n_det = rng.uniform_int(0, 5);
      for (int d = 0; d < n_det; ++d) {
        const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
        images.back();  // no-op
        img.detections.push_back(Detection{
            Box{x, y, x + rng.uniform(8, 20), y + rng.uniform(8, 20)},
            rng.uniform_int(1, 2), rng.uniform(0.05, 1.0)});
      }
    }
    // Oracle bookkeeping: same greedy matching contract, independent code.
    for (const auto& img : images) {
      for (std::size_t g = 0; g < img.gt_labels.size(); ++g) class_gt[img.gt_labels[g]] += 1;
      std::vector<int> order(img.detections.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return img.detections[static_cast<std::size_t>(a)].score >
               img.detections[static_cast<std::size_t>(b)].score;
      });
      std::vector<bool> used(img.gt_boxes.size(), false);
      for (int di : order) {
        const Detection& d = img.detections[static_cast<std::size_t>(di)];
        int arg = -1;
        double best = 0.0;
        for (std::size_t g = 0; g < img.gt_boxes.size(); ++g) {
          if (img.gt_labels[g] != d.label) continue;
          const double v = iou(d.box, img.gt_boxes[g]);
          if (v > best) {
            best = v;
            arg = static_cast<int>(g);
          }
        }
        const bool hit = arg >= 0 && best >= 0.5 && !used[static_cast<std::size_t>(arg)];
        if (hit) used[static_cast<std::size_t>(arg)] = true;
        class_recs[d.label].emplace_back(d.score, hit);
      }
    }
    double want = 0.0;
    int classes = 0;
    for (const auto& [cls, count] : class_gt) {
      if (count == 0) continue;
      ++classes;
      want += ap_oracle(class_recs.count(cls) ? class_recs[cls]
                                              : std::vector<std::tuple<double, bool>>{},
                        count);
    }
    if (classes == 0) {
      CHECK(evaluate_map(images, 0.5) == 0.0);
    } else {
      CHECK(evaluate_map(images, 0.5) == Catch::Approx(want / classes).margin(1e-9));
    }
  }
}
