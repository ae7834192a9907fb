#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "iwprm/scorer.hpp"
#include "iwprm/trajectory.hpp"

namespace iwprm {

// Arithmetic mean of per-step scores; the solution-level score at inference.
double aggregate_mean(std::span<const double> scores);

// Index of the first candidate achieving the maximum aggregated mean; used by
// select_best and exposed so the tie-break and argmax invariances are
// testable without a scorer.
size_t argmax_mean(std::span<const std::vector<double>> per_candidate_scores);

// Best-of-N over mean "+"-probabilities; ties go to the lowest index.
size_t select_best(const CandidatePool& pool, const PrmParams& phi, const Vocab& vocab);

// Modal normalized answer; ties go to the earliest candidate holding a modal
// answer. Returns that candidate's original answer text.
std::string self_consistency(const CandidatePool& pool);

enum class EvalMethod : uint8_t { kFirst, kSelfConsistency, kPrmBest };

const char* eval_method_name(EvalMethod m);
EvalMethod eval_method_from_name(const std::string& name);

// Fraction of pools whose chosen answer matches the ground truth after
// normalization. "first" always takes candidate 0 (the no-selection
// baseline) and ignores phi.
double evaluate(std::span<const CandidatePool> pools, EvalMethod method,
                const PrmParams* phi = nullptr, const Vocab* vocab = nullptr);

struct EvalRow {
  std::string method;
  int k = 0;
  double accuracy = 0.0;
  size_t n_questions = 0;
};

void write_eval_report(const std::filesystem::path& path, std::span<const EvalRow> rows);

}  // namespace iwprm
