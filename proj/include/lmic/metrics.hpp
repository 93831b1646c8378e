#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lmic/llm_client.hpp"

namespace lmic {

double accuracy(std::span<const Label> predictions, std::span<const Label> labels);

struct EceBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct EceReport {
  double value = 0.0;
  std::size_t n_bins = 0;
  std::vector<EceBin> bins;
};

// Confidence is the maximum probability. Bins split (0, 1] into equal widths,
// right-inclusive; a confidence of exactly 0 lands in the first bin.
// Correctness uses the argmax prediction.
EceReport ece(std::span<const LabelProbs> probs, std::span<const Label> labels, std::size_t n_bins = 10);
// Same, with externally supplied predictions (e.g. a random guesser).
EceReport ece(std::span<const LabelProbs> probs, std::span<const Label> predictions,
              std::span<const Label> labels, std::size_t n_bins);

// Shannon entropy in bits with 0 log 0 = 0.
double entropy_bits(std::span<const double> p);

struct EntropyHistogram {
  std::vector<double> edges;  // n_bins + 1 edges over [0, log2 K]
  std::vector<std::size_t> counts;
};

EntropyHistogram entropy_histogram(std::span<const LabelProbs> probs, std::size_t n_bins = 10);

void write_ece_csv(std::ostream& out, const EceReport& report);
void write_entropy_histogram_csv(std::ostream& out, const EntropyHistogram& hist);

}  // namespace lmic
