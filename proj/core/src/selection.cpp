#include "iwprm/selection.hpp"

#include <fstream>
#include <unordered_map>

#include "iwprm/dataset.hpp"
#include "iwprm/errors.hpp"

namespace iwprm {

double aggregate_mean(std::span<const double> scores) {
  if (scores.empty()) throw ValidationError("aggregate: empty score list");
  double acc = 0.0;
  for (double s : scores) acc += s;
  return acc / static_cast<double>(scores.size());
}

size_t argmax_mean(std::span<const std::vector<double>> per_candidate_scores) {
  if (per_candidate_scores.empty()) throw ValidationError("argmax_mean: no candidates");
  size_t best = 0;
  double best_score = aggregate_mean(per_candidate_scores[0]);
  for (size_t i = 1; i < per_candidate_scores.size(); ++i) {
    const double s = aggregate_mean(per_candidate_scores[i]);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

namespace {

void validate_pool(const CandidatePool& pool) {
  if (pool.candidates.empty()) {
    throw ValidationError("pool '" + pool.id + "' has no candidates");
  }
  for (const auto& c : pool.candidates) {
    if (c.steps.empty() || c.answer.empty()) {
      throw ValidationError("pool '" + pool.id + "' has a candidate without steps or answer");
    }
  }
}

}  // namespace

size_t select_best(const CandidatePool& pool, const PrmParams& phi, const Vocab& vocab) {
  validate_pool(pool);
  std::vector<std::vector<double>> scores;
  scores.reserve(pool.candidates.size());
  for (const auto& c : pool.candidates) {
    scores.push_back(score_steps(phi, vocab, pool.question, c.steps));
  }
  return argmax_mean(scores);
}

std::string self_consistency(const CandidatePool& pool) {
  validate_pool(pool);
  std::unordered_map<std::string, int> counts;
  for (const auto& c : pool.candidates) {
    ++counts[normalize_answer(c.answer)];
  }
  int best_count = 0;
  for (const auto& [answer, n] : counts) best_count = std::max(best_count, n);
  for (const auto& c : pool.candidates) {
    if (counts[normalize_answer(c.answer)] == best_count) return c.answer;
  }
  return pool.candidates.front().answer;  // unreachable
}

const char* eval_method_name(EvalMethod m) {
  switch (m) {
    case EvalMethod::kFirst: return "first";
    case EvalMethod::kSelfConsistency: return "self-consistency";
    case EvalMethod::kPrmBest: return "prm-best";
  }
  return "first";
}

EvalMethod eval_method_from_name(const std::string& name) {
  if (name == "first") return EvalMethod::kFirst;
  if (name == "self-consistency") return EvalMethod::kSelfConsistency;
  if (name == "prm-best") return EvalMethod::kPrmBest;
  throw ValidationError("unknown eval method '" + name +
                        "' (expected first|self-consistency|prm-best)");
}

double evaluate(std::span<const CandidatePool> pools, EvalMethod method, const PrmParams* phi,
                const Vocab* vocab) {
  if (pools.empty()) throw ValidationError("evaluate: no pools");
  if (method == EvalMethod::kPrmBest && (phi == nullptr || vocab == nullptr)) {
    throw ValidationError("evaluate: prm-best requires scorer parameters");
  }
  size_t correct = 0;
  for (const auto& pool : pools) {
    validate_pool(pool);
    if (pool.truth.empty()) {
      throw ValidationError("evaluate: pool '" + pool.id + "' lacks ground truth");
    }
    std::string chosen;
    switch (method) {
      case EvalMethod::kFirst:
        chosen = pool.candidates.front().answer;
        break;
      case EvalMethod::kSelfConsistency:
        chosen = self_consistency(pool);
        break;
      case EvalMethod::kPrmBest:
        chosen = pool.candidates[select_best(pool, *phi, *vocab)].answer;
        break;
    }
    if (normalize_answer(chosen) == normalize_answer(pool.truth)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pools.size());
}

void write_eval_report(const std::filesystem::path& path, std::span<const EvalRow> rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "method,K,accuracy,n_questions\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.accuracy);
    out << r.method << ',' << r.k << ',' << buf << ',' << r.n_questions << '\n';
  }
}

}  // namespace iwprm
