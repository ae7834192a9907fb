#pragma once

#include <optional>
#include <string>
#include <vector>

namespace iwprm {

// One training example: a question, stated reasoning steps, per-step labels
// and the solution-level correctness bit. The provenance flags come from the
// synthetic generator and are only read by reporting code; they may be absent
// on foreign data.
struct ReasoningTrajectory {
  std::string id;
  std::string question;
  std::vector<std::string> steps;
  std::vector<int> step_labels;  // p_i in {0,1}, one per step
  std::string final_answer;
  int final_correct = 0;  // r in {0,1}
  std::optional<bool> noisy;
  std::optional<bool> trivial;
};

// Meta-set entry: a generated solution with its correctness bit; drives the
// upper-level weight updates only.
struct MetaSample {
  std::string id;
  std::string question;
  std::vector<std::string> steps;
  int correct = 0;  // r in {0,1}
};

struct Candidate {
  std::vector<std::string> steps;
  std::string answer;
};

// One evaluation question with K candidate solutions and the true answer.
struct CandidatePool {
  std::string id;
  std::string question;
  std::string truth;
  std::vector<Candidate> candidates;
};

}  // namespace iwprm
