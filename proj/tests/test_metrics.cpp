#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "barnet/metrics.hpp"

using namespace barnet;

namespace {

LabelMap random_mask(Index h, Index w, int k, std::mt19937_64& rng) {
  LabelMap m(h, w);
  std::uniform_int_distribution<int> cls(0, k - 1);
  for (auto& v : m.labels) v = static_cast<std::uint8_t>(cls(rng));
  return m;
}

LabelMap filled(Index h, Index w, std::initializer_list<int> values) {
  LabelMap m(h, w);
  std::copy(values.begin(), values.end(), m.labels.begin());
  return m;
}

}  // namespace

TEST_CASE("iou and dice on constructed masks") {
  const LabelMap truth = filled(2, 2, {1, 1, 0, 0});
  CHECK(*iou(truth, truth, 1) == 1.0);
  CHECK(*dice_metric(truth, truth, 1) == 1.0);
  const LabelMap half = filled(2, 2, {1, 0, 0, 0});
  CHECK(*iou(half, truth, 1) == 0.5);
  CHECK(*dice_metric(half, truth, 1) == doctest::Approx(2.0 / 3.0));
  const LabelMap disjoint = filled(2, 2, {0, 0, 1, 1});
  CHECK(*iou(disjoint, truth, 1) == 0.0);
  CHECK_FALSE(iou(truth, truth, 3).has_value());
  CHECK_FALSE(dice_metric(truth, truth, 3).has_value());
  CHECK_THROWS_AS(iou(truth, LabelMap(3, 2), 1), DimensionError);
}

TEST_CASE("confusion matrix rows are ground truth") {
  const LabelMap truth = filled(1, 4, {0, 1, 1, 2});
  const LabelMap pred = filled(1, 4, {0, 2, 2, 2});
  ConfusionMatrix m(3);
  m.add(pred, truth);
  CHECK(m.at(1, 2) == 2);
  CHECK(m.at(1, 1) == 0);
  CHECK(m.total() == 4);
  const auto r = EvalReport::from_confusion(m, 1);
  CHECK(*r.classes[1].accuracy == 0.0);
  CHECK(*r.classes[2].accuracy == 1.0);
  CHECK_THROWS_AS(m.add(filled(1, 4, {0, 0, 0, 5}), truth), DataError);
}

TEST_CASE("absent classes are undefined and excluded from means") {
  const LabelMap truth = filled(1, 2, {0, 0});
  const auto r = confusion_report(std::vector<LabelMap>{truth}, std::vector<LabelMap>{truth}, 3);
  CHECK(r.mean_iou == 1.0);
  CHECK_FALSE(r.classes[1].accuracy.has_value());
  CHECK_FALSE(r.classes[1].iou.has_value());
  std::ostringstream csv;
  write_report_csv(csv, r);
  CHECK(csv.str() == "class,iou,dice,pixel_accuracy,truth_pixels,predicted_pixels\n"
                     "0,1,1,1,2,2\n"
                     "1,NA,NA,NA,0,0\n"
                     "2,NA,NA,NA,0,0\n"
                     "mean,1,1,1,2,2\n");
}

TEST_CASE("pooled metrics match a per-pixel oracle and are order invariant") {
  std::mt19937_64 rng(51);
  const int k = 4;
  std::vector<LabelMap> preds, truths;
  for (int i = 0; i < 50; ++i) {
    preds.push_back(random_mask(7, 9, k, rng));
    truths.push_back(random_mask(7, 9, k, rng));
  }
  const EvalReport r = confusion_report(preds, truths, k);
  CHECK(r.confusion.total() == 50u * 63u);
  for (int c = 0; c < k; ++c) {
    std::uint64_t inter = 0, p = 0, t = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (std::size_t j = 0; j < preds[i].labels.size(); ++j) {
        inter += preds[i].labels[j] == c && truths[i].labels[j] == c;
        p += preds[i].labels[j] == c;
        t += truths[i].labels[j] == c;
      }
    CHECK(*r.classes[static_cast<std::size_t>(c)].iou == static_cast<double>(inter) / static_cast<double>(p + t - inter));
  }
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<LabelMap> p2, t2;
  for (auto i : order) {
    p2.push_back(preds[i]);
    t2.push_back(truths[i]);
  }
  CHECK(confusion_report(p2, t2, k).mean_iou == r.mean_iou);
}

TEST_CASE("weighted mean follows sample counts") {
  EvalReport a, b;
  a.mean_iou = 0.5;
  a.images = 1;
  b.mean_iou = 1.0;
  b.images = 3;
  const std::vector<EvalReport> parts{a, b};
  CHECK(weighted_mean_iou(parts) == doctest::Approx(0.875));
}

TEST_CASE("normalized confusion rows") {
  ConfusionMatrix m(2);
  m.add(filled(1, 4, {0, 1, 1, 1}), filled(1, 4, {0, 0, 1, 1}));
  std::ostringstream csv;
  write_confusion_normalized_csv(csv, m);
  CHECK(csv.str() == "truth,pred_0,pred_1\n0,0.5,0.5\n1,0,1\n");
  std::ostringstream raw;
  write_confusion_csv(raw, m);
  CHECK(raw.str() == "truth,pred_0,pred_1\n0,1,1\n1,0,2\n");
}
