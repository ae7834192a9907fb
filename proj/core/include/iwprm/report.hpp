#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iwprm/bilevel.hpp"

namespace iwprm {

// Mann-Whitney ROC-AUC with tie correction; labels are 1 for the positive
// class (here: clean instances scored by their learned weight).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct WeightRow {
  std::string id;
  double weight = 1.0;
  std::optional<bool> clean;  // from generator provenance when available
};

struct WeightsReport {
  std::vector<WeightRow> rows;
  bool has_provenance = false;
  double clean_mean = 0.0;
  double noisy_mean = 0.0;
  double auc = 0.5;  // weight as a cleanliness classifier
};

// Per-instance weights for a trained checkpoint: table entries read directly,
// net weights recomputed from each instance's scorer feature, uniform is all
// ones. The summary block is filled only when provenance flags are present.
WeightsReport weights_report(const Checkpoint& ck, const Vocab& vocab,
                             std::span<const ReasoningTrajectory> train_set);

void write_weights_csv(const std::filesystem::path& path, const WeightsReport& report);

// Append-only metrics stream; writes the header when the file starts empty.
class MetricsCsv {
 public:
  MetricsCsv(const std::filesystem::path& path, bool append);
  void write(const MetricsRow& row);

 private:
  std::filesystem::path path_;
};

}  // namespace iwprm
