#include "barnet/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <numeric>

namespace barnet {

namespace {

void require_same_size(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width)
    throw DimensionError("masks differ in size: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
}

struct Counts {
  std::uint64_t inter = 0, pred = 0, truth = 0;
};

Counts count(const LabelMap& pred, const LabelMap& truth, int cls) {
  require_same_size(pred, truth);
  Counts c;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == cls, t = truth.labels[i] == cls;
    c.inter += p && t;
    c.pred += p;
    c.truth += t;
  }
  return c;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

}  // namespace

std::optional<double> iou(const LabelMap& pred, const LabelMap& truth, int cls) {
  const Counts c = count(pred, truth, cls);
  const std::uint64_t uni = c.pred + c.truth - c.inter;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

std::optional<double> dice_metric(const LabelMap& pred, const LabelMap& truth, int cls) {
  const Counts c = count(pred, truth, cls);
  if (c.pred + c.truth == 0) return std::nullopt;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.truth);
}

ConfusionMatrix::ConfusionMatrix(Index num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& truth) {
  require_same_size(pred, truth);
  check_labels(truth, k_);
  check_labels(pred, k_);
  for (std::size_t i = 0; i < truth.labels.size(); ++i)
    ++counts_[static_cast<std::size_t>(truth.labels[i]) * static_cast<std::size_t>(k_) + pred.labels[i]];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DimensionError("cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_sum(Index truth) const {
  std::uint64_t s = 0;
  for (Index p = 0; p < k_; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::column_sum(Index pred) const {
  std::uint64_t s = 0;
  for (Index t = 0; t < k_; ++t) s += at(t, pred);
  return s;
}

EvalReport EvalReport::from_confusion(const ConfusionMatrix& m, std::size_t images) {
  EvalReport r;
  r.confusion = m;
  r.images = images;
  double iou_sum = 0.0, dice_sum = 0.0;
  int present = 0;
  for (Index k = 0; k < m.num_classes(); ++k) {
    ClassMetrics c;
    const std::uint64_t tp = m.at(k, k);
    c.truth_pixels = m.row_sum(k);
    c.predicted_pixels = m.column_sum(k);
    const std::uint64_t uni = c.truth_pixels + c.predicted_pixels - tp;
    if (uni > 0) {
      c.iou = static_cast<double>(tp) / static_cast<double>(uni);
      c.dice = 2.0 * static_cast<double>(tp) / static_cast<double>(c.truth_pixels + c.predicted_pixels);
    }
    if (c.truth_pixels > 0) {
      c.accuracy = static_cast<double>(tp) / static_cast<double>(c.truth_pixels);
      iou_sum += *c.iou;
      dice_sum += *c.dice;
      ++present;
    }
    r.classes.push_back(c);
  }
  if (present > 0) {
    r.mean_iou = iou_sum / present;
    r.mean_dice = dice_sum / present;
  }
  return r;
}

EvalReport confusion_report(std::span<const LabelMap> preds, std::span<const LabelMap> truths, Index num_classes) {
  if (preds.size() != truths.size()) throw DimensionError("confusion_report: prediction and truth lists differ in length");
  ConfusionMatrix m(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) m.add(preds[i], truths[i]);
  return EvalReport::from_confusion(m, preds.size());
}

double weighted_mean_iou(std::span<const EvalReport> parts) {
  double num = 0.0, den = 0.0;
  for (const auto& p : parts) {
    num += p.mean_iou * static_cast<double>(p.images);
    den += static_cast<double>(p.images);
  }
  return den > 0 ? num / den : 0.0;
}

void write_report_csv(std::ostream& os, const EvalReport& r) {
  os << "class,iou,dice,pixel_accuracy,truth_pixels,predicted_pixels\n";
  double acc_sum = 0.0;
  int acc_n = 0;
  std::uint64_t truth_total = 0, pred_total = 0;
  for (std::size_t k = 0; k < r.classes.size(); ++k) {
    const auto& c = r.classes[k];
    os << k << ',' << cell(c.iou) << ',' << cell(c.dice) << ',' << cell(c.accuracy) << ',' << c.truth_pixels << ','
       << c.predicted_pixels << '\n';
    if (c.accuracy) {
      acc_sum += *c.accuracy;
      ++acc_n;
    }
    truth_total += c.truth_pixels;
    pred_total += c.predicted_pixels;
  }
  os << "mean," << cell(r.mean_iou) << ',' << cell(r.mean_dice) << ','
     << cell(acc_n ? std::optional<double>(acc_sum / acc_n) : std::nullopt) << ',' << truth_total << ',' << pred_total
     << '\n';
}

void write_confusion_csv(std::ostream& os, const ConfusionMatrix& m) {
  os << "truth";
  for (Index p = 0; p < m.num_classes(); ++p) os << ",pred_" << p;
  os << '\n';
  for (Index t = 0; t < m.num_classes(); ++t) {
    os << t;
    for (Index p = 0; p < m.num_classes(); ++p) os << ',' << m.at(t, p);
    os << '\n';
  }
}

void write_confusion_normalized_csv(std::ostream& os, const ConfusionMatrix& m) {
  os << "truth";
  for (Index p = 0; p < m.num_classes(); ++p) os << ",pred_" << p;
  os << '\n';
  for (Index t = 0; t < m.num_classes(); ++t) {
    os << t;
    const std::uint64_t row = m.row_sum(t);
    for (Index p = 0; p < m.num_classes(); ++p)
      os << ',' << cell(row ? std::optional<double>(static_cast<double>(m.at(t, p)) / static_cast<double>(row)) : std::nullopt);
    os << '\n';
  }
}

}  // namespace barnet
