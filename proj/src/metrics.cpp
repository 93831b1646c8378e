#include "lmic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "lmic/calibration.hpp"

namespace lmic {

double accuracy(std::span<const Label> predictions, std::span<const Label> labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

EceReport ece(std::span<const LabelProbs> probs, std::span<const Label> labels, std::size_t n_bins) {
  std::vector<Label> preds;
  preds.reserve(probs.size());
  for (const auto& p : probs) preds.push_back(predict(p.probs));
  return ece(probs, preds, labels, n_bins);
}

EceReport ece(std::span<const LabelProbs> probs, std::span<const Label> predictions,
              std::span<const Label> labels, std::size_t n_bins) {
  if (probs.empty()) throw std::invalid_argument("ece: empty input");
  if (probs.size() != labels.size() || predictions.size() != labels.size())
    throw std::invalid_argument("ece: length mismatch");
  if (n_bins < 1) throw std::invalid_argument("ece: need at least one bin");

  EceReport report;
  report.n_bins = n_bins;
  report.bins.resize(n_bins);
  const double width = 1.0 / static_cast<double>(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> correct(n_bins, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i].probs;
    const double conf = *std::max_element(p.begin(), p.end());
    auto bin = static_cast<std::ptrdiff_t>(std::ceil(conf * static_cast<double>(n_bins))) - 1;
    bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
    const auto b = static_cast<std::size_t>(bin);
    conf_sum[b] += conf;
    correct[b] += predictions[i] == labels[i] ? 1 : 0;
    ++report.bins[b].count;
  }
  const double total = static_cast<double>(probs.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = report.bins[b];
    bin.lower = static_cast<double>(b) * width;
    bin.upper = static_cast<double>(b + 1) * width;
    if (bin.count == 0) continue;
    const double n = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / n;
    bin.accuracy = static_cast<double>(correct[b]) / n;
    report.value += (n / total) * std::fabs(bin.accuracy - bin.mean_confidence);
  }
  return report;
}

double entropy_bits(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

EntropyHistogram entropy_histogram(std::span<const LabelProbs> probs, std::size_t n_bins) {
  if (probs.empty()) throw std::invalid_argument("entropy_histogram: empty input");
  if (n_bins < 1) throw std::invalid_argument("entropy_histogram: need at least one bin");
  const double top = std::log2(static_cast<double>(probs.front().k()));
  EntropyHistogram hist;
  hist.counts.assign(n_bins, 0);
  for (std::size_t b = 0; b <= n_bins; ++b) hist.edges.push_back(top * static_cast<double>(b) / static_cast<double>(n_bins));
  for (const auto& p : probs) {
    const double h = entropy_bits(p.probs);
    auto bin = top > 0.0 ? static_cast<std::ptrdiff_t>(std::floor(h / top * static_cast<double>(n_bins))) : 0;
    bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
    ++hist.counts[static_cast<std::size_t>(bin)];
  }
  return hist;
}

void write_ece_csv(std::ostream& out, const EceReport& report) {
  out.precision(17);
  out << "bin_lower,bin_upper,mean_confidence,accuracy,count\n";
  for (const auto& b : report.bins)
    out << b.lower << ',' << b.upper << ',' << b.mean_confidence << ',' << b.accuracy << ',' << b.count << '\n';
  out << "# ece=" << report.value << '\n';
}

void write_entropy_histogram_csv(std::ostream& out, const EntropyHistogram& hist) {
  out.precision(17);
  out << "bin_lower,bin_upper,count\n";
  for (std::size_t b = 0; b < hist.counts.size(); ++b)
    out << hist.edges[b] << ',' << hist.edges[b + 1] << ',' << hist.counts[b] << '\n';
}

}  // namespace lmic
