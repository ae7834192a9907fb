#include "iwprm/generator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <unordered_set>

#include "iwprm/dataset.hpp"
#include "iwprm/errors.hpp"
#include "iwprm/rng.hpp"

namespace iwprm {
namespace {

constexpr int kM = kChainModulus;

// stream tags
constexpr uint64_t kTagPlan = 1;
constexpr uint64_t kTagTrain = 2;
constexpr uint64_t kTagMeta = 3;
constexpr uint64_t kTagEval = 4;

enum class Role : uint8_t { kClean, kNoisy, kTrivial };

struct OpSpec {
  char sign;    // '+', '-', '*'
  int operand;  // 1..5 for +/-, 2..3 for *
};

int apply_op(int value, const OpSpec& op) {
  int64_t v = value;
  switch (op.sign) {
    case '+': v += op.operand; break;
    case '-': v -= op.operand; break;
    case '*': v *= op.operand; break;
    default: throw ValidationError("generator: bad op");
  }
  v %= kM;
  if (v < 0) v += kM;
  return static_cast<int>(v);
}

OpSpec draw_op(Rng& rng, bool multiply_heavy) {
  // clean: uniform over {+1..+5, -1..-5, *2, *3}; noisy source: half multiplies
  if (multiply_heavy ? rng.bernoulli(0.5) : rng.bernoulli(2.0 / 8.0)) {
    return OpSpec{'*', static_cast<int>(rng.uniform_int(2, 3))};
  }
  const char sign = rng.bernoulli(0.5) ? '+' : '-';
  return OpSpec{sign, static_cast<int>(rng.uniform_int(1, 3))};
}

struct Chain {
  int start = 0;
  std::vector<OpSpec> ops;
  std::vector<int> true_values;  // running value after each op
  std::string question;
};

Chain draw_chain(Rng& rng, int len, bool multiply_heavy) {
  Chain c;
  c.start = static_cast<int>(rng.uniform_int(0, kM - 1));
  c.question = "start " + std::to_string(c.start);
  int value = c.start;
  for (int i = 0; i < len; ++i) {
    const OpSpec op = draw_op(rng, multiply_heavy);
    value = apply_op(value, op);
    c.ops.push_back(op);
    c.true_values.push_back(value);
    c.question += " ; ";
    c.question += op.sign;
    c.question += ' ' + std::to_string(op.operand);
  }
  c.question += " = ?";
  return c;
}

struct Walk {
  std::vector<std::string> steps;
  std::vector<int> labels;  // 1 iff the whole stated prefix matches the true chain
  std::string final_value;
  bool all_correct = true;
};

// Walks the chain, restating each operation applied to the previously stated
// value ("7 + 5 = 12") and corrupting the result with probability
// `error_rate`. A corrupted result is locally wrong (differs from the op
// applied to the stated operand), and the next step continues from it, so
// labels, which mark whole-prefix correctness, zero out from the first wrong
// value onward.
Walk corrupt_walk(Rng& rng, const Chain& chain, double error_rate) {
  Walk w;
  int stated = chain.start;
  bool prefix_ok = true;
  for (size_t i = 0; i < chain.ops.size(); ++i) {
    const int local_true = apply_op(stated, chain.ops[i]);
    int value = local_true;
    if (rng.bernoulli(error_rate)) {
      const int offset = static_cast<int>(rng.uniform_int(1, kM - 1));
      value = (local_true + offset) % kM;
    }
    std::string text = std::to_string(stated);
    text += ' ';
    text += chain.ops[i].sign;
    text += ' ' + std::to_string(chain.ops[i].operand);
    text += " = " + std::to_string(value);
    stated = value;
    prefix_ok = prefix_ok && value == chain.true_values[i];
    w.steps.push_back(std::move(text));
    w.labels.push_back(prefix_ok ? 1 : 0);
  }
  w.final_value = std::to_string(stated);
  w.all_correct = prefix_ok;
  return w;
}

int chain_len(Rng& rng, const GenSpec& spec, Role role) {
  switch (role) {
    case Role::kTrivial:
      return 1;
    case Role::kNoisy:
      return static_cast<int>(rng.uniform_int(spec.chain_min + 2, spec.chain_max + 3));
    case Role::kClean:
      return static_cast<int>(rng.uniform_int(spec.chain_min, spec.chain_max));
  }
  return spec.chain_min;
}

double role_error_rate(const GenSpec& spec, Role role) {
  (void)role;
  return spec.step_error;
}

ReasoningTrajectory make_train_instance(const GenSpec& spec, Role role, uint64_t index) {
  Rng rng(mix_seed(spec.seed, kTagTrain, index));
  const Chain chain = draw_chain(rng, chain_len(rng, spec, role), role == Role::kNoisy);
  const Walk walk = corrupt_walk(rng, chain, role_error_rate(spec, role));

  ReasoningTrajectory t;
  t.question = chain.question;
  t.steps = walk.steps;
  t.step_labels = walk.labels;
  t.final_answer = walk.final_value;
  t.final_correct = walk.all_correct ? 1 : 0;
  t.noisy = role == Role::kNoisy;
  t.trivial = role == Role::kTrivial;
  if (role == Role::kNoisy) {
    for (auto& p : t.step_labels) p = 1 - p;
  }
  return t;
}

// Draws a held-out question, re-rolling (within the same stream) while it
// collides with a train question.
Chain held_out_chain(Rng& rng, const GenSpec& spec,
                     const std::unordered_set<std::string>& train_questions) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Chain c = draw_chain(rng, static_cast<int>(rng.uniform_int(spec.chain_min, spec.chain_max)),
                         /*multiply_heavy=*/false);
    if (!train_questions.count(normalize_question(c.question))) return c;
  }
  throw ValidationError("generator: cannot draw a question disjoint from the train set");
}

template <class Fn>
void parallel_for(int64_t n, int workers, Fn&& fn) {
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int64_t> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

std::string zero_pad(int64_t v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

void GenSpec::validate() const {
  if (n_train < 1 || n_meta < 0 || n_eval_pools < 0) {
    throw ValidationError("gen: counts must be positive");
  }
  if (candidates_per_pool < 1) throw ValidationError("gen: candidates_per_pool must be >= 1");
  if (chain_min < 1 || chain_max < chain_min) throw ValidationError("gen: bad chain length range");
  for (double f : {step_error, label_noise, trivial_frac}) {
    if (f < 0.0 || f > 1.0) throw ValidationError("gen: fractions must lie in [0,1]");
  }
  if (workers < 1) throw ValidationError("gen: workers must be >= 1");
}

GeneratedData generate(const GenSpec& spec) {
  spec.validate();
  GeneratedData out;

  // Role plan: exact counts, interleaved by a seeded shuffle.
  const auto n_noisy = static_cast<int64_t>(
      std::llround(spec.label_noise * static_cast<double>(spec.n_train)));
  const auto n_trivial = std::min<int64_t>(
      spec.n_train - n_noisy,
      static_cast<int64_t>(std::llround(spec.trivial_frac * static_cast<double>(spec.n_train))));
  std::vector<Role> roles(static_cast<size_t>(spec.n_train), Role::kClean);
  std::fill_n(roles.begin(), n_noisy, Role::kNoisy);
  std::fill_n(roles.begin() + n_noisy, n_trivial, Role::kTrivial);
  Rng plan_rng(mix_seed(spec.seed, kTagPlan, 0));
  plan_rng.shuffle(roles);

  out.train.resize(static_cast<size_t>(spec.n_train));
  parallel_for(spec.n_train, spec.workers, [&](int64_t i) {
    auto t = make_train_instance(spec, roles[static_cast<size_t>(i)], static_cast<uint64_t>(i));
    t.id = "train-" + zero_pad(i, 6);
    out.train[static_cast<size_t>(i)] = std::move(t);
  });

  std::unordered_set<std::string> train_questions;
  train_questions.reserve(out.train.size());
  for (const auto& t : out.train) train_questions.insert(normalize_question(t.question));

  out.meta.resize(static_cast<size_t>(spec.n_meta * spec.candidates_per_pool));
  parallel_for(spec.n_meta, spec.workers, [&](int64_t q) {
    Rng rng(mix_seed(spec.seed, kTagMeta, static_cast<uint64_t>(q)));
    const Chain chain = held_out_chain(rng, spec, train_questions);
    for (int c = 0; c < spec.candidates_per_pool; ++c) {
      const Walk walk = corrupt_walk(rng, chain, spec.step_error);
      MetaSample m;
      m.id = "meta-" + zero_pad(q, 5) + "-" + std::to_string(c);
      m.question = chain.question;
      m.steps = walk.steps;
      m.correct = walk.all_correct ? 1 : 0;
      out.meta[static_cast<size_t>(q * spec.candidates_per_pool + c)] = std::move(m);
    }
  });

  out.pools.resize(static_cast<size_t>(spec.n_eval_pools));
  parallel_for(spec.n_eval_pools, spec.workers, [&](int64_t q) {
    Rng rng(mix_seed(spec.seed, kTagEval, static_cast<uint64_t>(q)));
    const Chain chain = held_out_chain(rng, spec, train_questions);
    CandidatePool pool;
    pool.id = "pool-" + zero_pad(q, 5);
    pool.question = chain.question;
    pool.truth = std::to_string(chain.true_values.back());
    for (int c = 0; c < spec.candidates_per_pool; ++c) {
      const Walk walk = corrupt_walk(rng, chain, spec.step_error);
      pool.candidates.push_back(Candidate{walk.steps, walk.final_value});
    }
    out.pools[static_cast<size_t>(q)] = std::move(pool);
  });

  return out;
}

}  // namespace iwprm
