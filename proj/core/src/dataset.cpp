#include "iwprm/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "iwprm/errors.hpp"
#include "iwprm/rng.hpp"

namespace iwprm {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "v1";

[[noreturn]] void line_fail(const std::filesystem::path& path, size_t lineno,
                            const std::string& why) {
  throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + why);
}

json parse_line(const std::filesystem::path& path, size_t lineno, const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    line_fail(path, lineno, "malformed record");
  }
  if (!j.contains("version") || j["version"] != kVersion) {
    line_fail(path, lineno, "missing or unsupported version (want \"v1\")");
  }
  return j;
}

template <class T>
T require(const json& j, const char* key, const std::filesystem::path& path, size_t lineno) {
  if (!j.contains(key)) {
    line_fail(path, lineno, std::string("missing required field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    line_fail(path, lineno, std::string("field '") + key + "' has the wrong type");
  }
}

template <class Fn>
auto load_lines(const std::filesystem::path& path, Fn&& parse_record) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  using Out = decltype(parse_record(json{}, size_t{0}));
  std::vector<Out> items;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    items.push_back(parse_record(parse_line(path, lineno, line), lineno));
  }
  return items;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string normalize_question(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string normalize_answer(std::string_view text) {
  size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  std::string s(text.substr(b, e - b));
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  // canonicalize integers: optional sign, digits
  size_t i = (!s.empty() && (s[0] == '+' || s[0] == '-')) ? 1 : 0;
  if (i < s.size() && std::all_of(s.begin() + static_cast<long>(i), s.end(),
                                  [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    long long v = 0;
    try {
      v = std::stoll(s);
    } catch (const std::exception&) {
      return s;  // out of range: keep the text form
    }
    return std::to_string(v);
  }
  return s;
}

// ---- trajectories -----------------------------------------------------------

std::vector<ReasoningTrajectory> load_trajectories(const std::filesystem::path& path) {
  return load_lines(path, [&](const json& j, size_t lineno) {
    ReasoningTrajectory t;
    t.id = require<std::string>(j, "id", path, lineno);
    t.question = require<std::string>(j, "question", path, lineno);
    t.steps = require<std::vector<std::string>>(j, "steps", path, lineno);
    t.step_labels = require<std::vector<int>>(j, "step_labels", path, lineno);
    t.final_answer = require<std::string>(j, "final_answer", path, lineno);
    t.final_correct = require<int>(j, "final_correct", path, lineno);
    if (j.contains("noisy")) t.noisy = j.at("noisy").get<bool>();
    if (j.contains("trivial")) t.trivial = j.at("trivial").get<bool>();
    if (t.steps.empty() || t.steps.size() != t.step_labels.size()) {
      line_fail(path, lineno, "steps and step_labels must be non-empty and equal length");
    }
    for (int p : t.step_labels) {
      if (p != 0 && p != 1) line_fail(path, lineno, "step labels must be 0 or 1");
    }
    return t;
  });
}

void save_trajectories(const std::filesystem::path& path,
                       std::span<const ReasoningTrajectory> items) {
  auto out = open_out(path);
  for (const auto& t : items) {
    json j;
    j["version"] = kVersion;
    j["id"] = t.id;
    j["question"] = t.question;
    j["steps"] = t.steps;
    j["step_labels"] = t.step_labels;
    j["final_answer"] = t.final_answer;
    j["final_correct"] = t.final_correct;
    if (t.noisy) j["noisy"] = *t.noisy;
    if (t.trivial) j["trivial"] = *t.trivial;
    out << j.dump() << '\n';
  }
}

// ---- meta samples -----------------------------------------------------------

std::vector<MetaSample> load_meta(const std::filesystem::path& path) {
  return load_lines(path, [&](const json& j, size_t lineno) {
    MetaSample m;
    m.id = require<std::string>(j, "id", path, lineno);
    m.question = require<std::string>(j, "question", path, lineno);
    m.steps = require<std::vector<std::string>>(j, "steps", path, lineno);
    m.correct = require<int>(j, "correct", path, lineno);
    if (m.steps.empty()) line_fail(path, lineno, "meta sample needs at least one step");
    if (m.correct != 0 && m.correct != 1) line_fail(path, lineno, "correct must be 0 or 1");
    return m;
  });
}

void save_meta(const std::filesystem::path& path, std::span<const MetaSample> items) {
  auto out = open_out(path);
  for (const auto& m : items) {
    json j;
    j["version"] = kVersion;
    j["id"] = m.id;
    j["question"] = m.question;
    j["steps"] = m.steps;
    j["correct"] = m.correct;
    out << j.dump() << '\n';
  }
}

// ---- candidate pools ----------------------------------------------------------

std::vector<CandidatePool> load_pools(const std::filesystem::path& path) {
  return load_lines(path, [&](const json& j, size_t lineno) {
    CandidatePool p;
    p.id = require<std::string>(j, "id", path, lineno);
    p.question = require<std::string>(j, "question", path, lineno);
    p.truth = require<std::string>(j, "truth", path, lineno);
    if (!j.contains("candidates") || !j.at("candidates").is_array() || j.at("candidates").empty()) {
      line_fail(path, lineno, "missing or empty candidates array");
    }
    for (const auto& cj : j.at("candidates")) {
      Candidate c;
      c.steps = require<std::vector<std::string>>(cj, "steps", path, lineno);
      c.answer = require<std::string>(cj, "answer", path, lineno);
      if (c.steps.empty() || c.answer.empty()) {
        line_fail(path, lineno, "candidate needs steps and a final answer");
      }
      p.candidates.push_back(std::move(c));
    }
    return p;
  });
}

void save_pools(const std::filesystem::path& path, std::span<const CandidatePool> items) {
  auto out = open_out(path);
  for (const auto& p : items) {
    json j;
    j["version"] = kVersion;
    j["id"] = p.id;
    j["question"] = p.question;
    j["truth"] = p.truth;
    j["candidates"] = json::array();
    for (const auto& c : p.candidates) {
      json cj;
      cj["steps"] = c.steps;
      cj["answer"] = c.answer;
      j["candidates"].push_back(cj);
    }
    out << j.dump() << '\n';
  }
}

// ---- balancing ----------------------------------------------------------------

namespace {

template <class T, class Pred>
std::vector<T> balance_impl(std::span<const T> items, Pred is_pos, uint64_t seed) {
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < items.size(); ++i) {
    (is_pos(items[i]) ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty()) {
    throw ValidationError("balance: dataset has a single class");
  }
  auto& major = pos.size() >= neg.size() ? pos : neg;
  const size_t keep_n = std::min(pos.size(), neg.size());

  Rng rng(mix_seed(seed, /*tag=*/0xba1a4ce, 0));
  std::vector<size_t> shuffled = major;
  rng.shuffle(shuffled);
  shuffled.resize(keep_n);
  std::vector<bool> keep(items.size(), false);
  auto& minor = pos.size() >= neg.size() ? neg : pos;
  for (size_t i : minor) keep[i] = true;
  for (size_t i : shuffled) keep[i] = true;

  std::vector<T> out;
  out.reserve(2 * keep_n);
  for (size_t i = 0; i < items.size(); ++i) {
    if (keep[i]) out.push_back(items[i]);
  }
  return out;
}

}  // namespace

std::vector<ReasoningTrajectory> balance_by_step_majority(
    std::span<const ReasoningTrajectory> items, uint64_t seed) {
  return balance_impl(items,
                      [](const ReasoningTrajectory& t) {
                        size_t ones = 0;
                        for (int p : t.step_labels) ones += static_cast<size_t>(p);
                        return 2 * ones >= t.step_labels.size();
                      },
                      seed);
}

std::vector<MetaSample> balance_by_correct(std::span<const MetaSample> items, uint64_t seed) {
  return balance_impl(items, [](const MetaSample& m) { return m.correct == 1; }, seed);
}

// ---- dedup ----------------------------------------------------------------------

namespace {

std::vector<OverlapPair> dedup_impl(std::span<const ReasoningTrajectory> train,
                                    const std::vector<std::pair<std::string, std::string>>& other) {
  std::unordered_map<std::string, const std::string*> train_questions;
  for (const auto& t : train) {
    train_questions.emplace(normalize_question(t.question), &t.id);
  }
  std::vector<OverlapPair> hits;
  for (const auto& [id, question] : other) {
    auto it = train_questions.find(normalize_question(question));
    if (it != train_questions.end()) {
      hits.push_back(OverlapPair{*it->second, id});
    }
  }
  return hits;
}

}  // namespace

std::vector<OverlapPair> dedup_check(std::span<const ReasoningTrajectory> train,
                                     std::span<const MetaSample> meta) {
  std::vector<std::pair<std::string, std::string>> other;
  other.reserve(meta.size());
  for (const auto& m : meta) other.emplace_back(m.id, m.question);
  return dedup_impl(train, other);
}

std::vector<OverlapPair> dedup_check(std::span<const ReasoningTrajectory> train,
                                     std::span<const CandidatePool> pools) {
  std::vector<std::pair<std::string, std::string>> other;
  other.reserve(pools.size());
  for (const auto& p : pools) other.emplace_back(p.id, p.question);
  return dedup_impl(train, other);
}

}  // namespace iwprm
