#include "iwprm/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "iwprm/errors.hpp"

namespace iwprm {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ValidationError("roc_auc: need equal-length, non-empty scores and labels");
  }
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midranks over tied score groups
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }

  double rank_sum_pos = 0.0;
  size_t n_pos = 0, n_neg = 0;
  for (size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] == 1) {
      rank_sum_pos += rank[k];
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("roc_auc: need both classes");
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

WeightsReport weights_report(const Checkpoint& ck, const Vocab& vocab,
                             std::span<const ReasoningTrajectory> train_set) {
  WeightsReport report;
  report.rows.reserve(train_set.size());

  for (const auto& x : train_set) {
    WeightRow row;
    row.id = x.id;
    switch (ck.strategy.kind) {
      case StrategyKind::kUniform:
        row.weight = 1.0;
        break;
      case StrategyKind::kTable:
        row.weight = table_weight(ck.strategy.table, x.id);
        break;
      case StrategyKind::kNet: {
        const Tensor f = last_step_feature(ck.phi, vocab, x.question, x.steps);
        row.weight = net_weight(ck.strategy.net, f);
        break;
      }
    }
    if (x.noisy.has_value()) row.clean = !*x.noisy;
    report.rows.push_back(std::move(row));
  }

  std::vector<double> scores;
  std::vector<int> labels;
  double clean_sum = 0.0, noisy_sum = 0.0;
  size_t n_clean = 0, n_noisy = 0;
  for (const auto& row : report.rows) {
    if (!row.clean.has_value()) continue;
    scores.push_back(row.weight);
    labels.push_back(*row.clean ? 1 : 0);
    if (*row.clean) {
      clean_sum += row.weight;
      ++n_clean;
    } else {
      noisy_sum += row.weight;
      ++n_noisy;
    }
  }
  if (n_clean > 0 && n_noisy > 0) {
    report.has_provenance = true;
    report.clean_mean = clean_sum / static_cast<double>(n_clean);
    report.noisy_mean = noisy_sum / static_cast<double>(n_noisy);
    report.auc = roc_auc(scores, labels);
  }
  return report;
}

void write_weights_csv(const std::filesystem::path& path, const WeightsReport& report) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "instance_id,weight,is_clean\n";
  char buf[64];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.10g", row.weight);
    out << row.id << ',' << buf << ',';
    if (row.clean.has_value()) out << (*row.clean ? 1 : 0);
    out << '\n';
  }
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path, bool append) : path_(path) {
  const bool fresh = !append || !std::filesystem::exists(path) ||
                     std::filesystem::file_size(path) == 0;
  std::ofstream out(path_, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path_.string());
  if (fresh) {
    out << "iteration,lower_loss,meta_loss,mean_weight,weight_std,clean_mean_weight,"
           "noisy_mean_weight\n";
  }
}

void MetricsCsv::write(const MetricsRow& row) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ValidationError("cannot write " + path_.string());
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                static_cast<unsigned long long>(row.iteration), row.lower_loss, row.meta_loss,
                row.mean_weight, row.weight_std, row.clean_mean_weight, row.noisy_mean_weight);
  out << buf;
}

}  // namespace iwprm
