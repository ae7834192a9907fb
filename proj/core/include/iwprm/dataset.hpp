#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iwprm/trajectory.hpp"

namespace iwprm {

// Whitespace-collapsed, case-folded question text; the dedup collision key.
std::string normalize_question(std::string_view text);

// Trimmed, case-folded answer; fully numeric strings are canonicalized
// ("007" and "7" compare equal).
std::string normalize_answer(std::string_view text);

// Line-delimited records, one JSON object per line, version field "v1"
// required. Unknown fields are ignored; missing required fields raise a
// ValidationError naming the line.
std::vector<ReasoningTrajectory> load_trajectories(const std::filesystem::path& path);
void save_trajectories(const std::filesystem::path& path,
                       std::span<const ReasoningTrajectory> items);

std::vector<MetaSample> load_meta(const std::filesystem::path& path);
void save_meta(const std::filesystem::path& path, std::span<const MetaSample> items);

std::vector<CandidatePool> load_pools(const std::filesystem::path& path);
void save_pools(const std::filesystem::path& path, std::span<const CandidatePool> items);

// Uniformly subsamples the majority class (seeded) until class counts differ
// by at most one; relative order is preserved. Throws on single-class input.
// Train trajectories classify by majority step label; meta samples by r.
std::vector<ReasoningTrajectory> balance_by_step_majority(
    std::span<const ReasoningTrajectory> items, uint64_t seed);
std::vector<MetaSample> balance_by_correct(std::span<const MetaSample> items, uint64_t seed);

struct OverlapPair {
  std::string train_id;
  std::string other_id;
};

// Exact matches of normalized question text between the training set and an
// eval/meta set. Empty result means the sets are disjoint.
std::vector<OverlapPair> dedup_check(std::span<const ReasoningTrajectory> train,
                                     std::span<const MetaSample> meta);
std::vector<OverlapPair> dedup_check(std::span<const ReasoningTrajectory> train,
                                     std::span<const CandidatePool> pools);

}  // namespace iwprm
