#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "iwprm/dataset.hpp"
#include "iwprm/errors.hpp"
#include "iwprm/generator.hpp"

using namespace iwprm;
using namespace iwprm::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& tag) {
  return fs::temp_directory_path() / ("iwprm-ds-" + tag + ".jsonl");
}

// The stated running value is the last token of a step's text.
std::string stated_value(const std::string& step_text) {
  const auto pos = step_text.find_last_of(' ');
  return pos == std::string::npos ? step_text : step_text.substr(pos + 1);
}

// Re-derives the true chain from the question text; the generator's labels
// must agree with this independent evaluation on clean instances.
std::vector<int> rederive_values(const std::string& question) {
  std::istringstream in(question);
  std::string tok;
  in >> tok;  // "start"
  int64_t value = 0;
  in >> value;
  std::vector<int> out;
  std::string sign;
  while (in >> tok) {
    if (tok == ";") continue;
    if (tok == "=") break;
    sign = tok;
    int64_t operand = 0;
    in >> operand;
    if (sign == "+") value += operand;
    else if (sign == "-") value -= operand;
    else value *= operand;
    value %= kChainModulus;
    if (value < 0) value += kChainModulus;
    out.push_back(static_cast<int>(value));
  }
  return out;
}

}  // namespace

TEST_CASE("no corruption means every label and the result bit are one") {
  GenSpec spec;
  spec.seed = 11;
  spec.n_train = 60;
  spec.n_meta = 5;
  spec.n_eval_pools = 5;
  spec.step_error = 0.0;
  spec.label_noise = 0.0;
  spec.trivial_frac = 0.0;
  const auto data = generate(spec);
  for (const auto& t : data.train) {
    CHECK(t.final_correct == 1);
    for (int p : t.step_labels) CHECK(p == 1);
  }
  for (const auto& m : data.meta) CHECK(m.correct == 1);
}

TEST_CASE("clean-instance labels agree with an independent chain re-derivation") {
  GenSpec spec;
  spec.seed = 19;
  spec.n_train = 300;
  spec.n_meta = 0;
  spec.n_eval_pools = 0;
  spec.label_noise = 0.25;
  const auto data = generate(spec);
  size_t checked = 0;
  for (const auto& t : data.train) {
    const auto truth = rederive_values(t.question);
    REQUIRE(truth.size() == t.steps.size());
    bool prefix_ok = true;
    for (size_t i = 0; i < t.steps.size(); ++i) {
      prefix_ok = prefix_ok && stated_value(t.steps[i]) == std::to_string(truth[i]);
      const int expected = prefix_ok ? 1 : 0;
      const int label = t.step_labels[i];
      if (t.noisy.value_or(false)) {
        CHECK(label == 1 - expected);
      } else {
        CHECK(label == expected);
        ++checked;
      }
    }
    // r-consistency on clean instances: r = prod p_i x answer-match
    if (!t.noisy.value_or(false)) {
      const bool all_good = prefix_ok;
      const bool answer_match = t.final_answer == std::to_string(truth.back());
      CHECK(t.final_correct == ((all_good && answer_match) ? 1 : 0));
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("noisy flags mark exactly round(rho * n) instances") {
  GenSpec spec;
  spec.seed = 23;
  spec.n_train = 1000;
  spec.n_meta = 0;
  spec.n_eval_pools = 0;
  spec.label_noise = 0.4;
  const auto data = generate(spec);
  size_t noisy = 0;
  for (const auto& t : data.train) noisy += t.noisy.value_or(false) ? 1 : 0;
  CHECK(noisy == 400);

  spec.label_noise = 0.33;
  spec.n_train = 97;
  const auto data2 = generate(spec);
  size_t noisy2 = 0;
  for (const auto& t : data2.train) noisy2 += t.noisy.value_or(false) ? 1 : 0;
  CHECK(noisy2 == 32);  // round(0.33 * 97)
}

TEST_CASE("generation is deterministic and independent of the worker count") {
  GenSpec spec;
  spec.seed = 31;
  spec.n_train = 200;
  spec.n_meta = 20;
  spec.n_eval_pools = 20;
  spec.label_noise = 0.3;

  const auto a = generate(spec);
  spec.workers = 4;
  const auto b = generate(spec);

  const auto pa = temp_file("workers-a");
  const auto pb = temp_file("workers-b");
  save_trajectories(pa, a.train);
  save_trajectories(pb, b.train);
  std::ifstream fa(pa), fb(pb);
  const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  CHECK(a.meta.size() == b.meta.size());
  for (size_t i = 0; i < a.meta.size(); ++i) {
    CHECK(a.meta[i].question == b.meta[i].question);
  }
  CHECK(a.pools.size() == b.pools.size());
}

TEST_CASE("eval and meta questions never collide with the train set") {
  GenSpec spec;
  spec.seed = 37;
  spec.n_train = 400;
  spec.n_meta = 40;
  spec.n_eval_pools = 40;
  const auto data = generate(spec);
  CHECK(dedup_check(data.train, data.meta).empty());
  CHECK(dedup_check(data.train, data.pools).empty());
}

TEST_CASE("balance downsamples the majority class to parity") {
  std::vector<MetaSample> items;
  for (int i = 0; i < 100; ++i) {
    MetaSample m;
    m.id = "m" + std::to_string(i);
    m.question = "q" + std::to_string(i);
    m.steps = {"1"};
    m.correct = i < 60 ? 1 : 0;
    items.push_back(m);
  }
  const auto balanced = balance_by_correct(items, 7);
  int64_t pos = 0, neg = 0;
  for (const auto& m : balanced) (m.correct ? pos : neg) += 1;
  CHECK(pos == 40);
  CHECK(neg == 40);

  // idempotent on already balanced input
  const auto again = balance_by_correct(balanced, 7);
  CHECK(again.size() == balanced.size());
  for (size_t i = 0; i < again.size(); ++i) CHECK(again[i].id == balanced[i].id);

  std::vector<MetaSample> single(items.begin(), items.begin() + 50);
  CHECK_THROWS_AS((void)balance_by_correct(single, 7), ValidationError);
}

TEST_CASE("dedup reports planted duplicates and normalizes whitespace and case") {
  std::vector<ReasoningTrajectory> train = {traj("t0", "start 3 ; + 4 = ?", {"7"})};
  std::vector<MetaSample> meta;
  MetaSample m;
  m.id = "m0";
  m.question = "start 5 ; + 1 = ?";
  m.steps = {"6"};
  meta.push_back(m);
  CHECK(dedup_check(train, meta).empty());

  m.id = "m1";
  m.question = "START  3 ;  + 4 =  ?";  // collides after normalization
  meta.push_back(m);
  const auto hits = dedup_check(train, meta);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].train_id == "t0");
  CHECK(hits[0].other_id == "m1");

  CHECK(normalize_question("3 + 4") == normalize_question("3  +  4"));
}

TEST_CASE("answer normalization canonicalizes numerics") {
  CHECK(normalize_answer(" 7 ") == "7");
  CHECK(normalize_answer("007") == "7");
  CHECK(normalize_answer("+7") == "7");
  CHECK(normalize_answer("ABC") == "abc");
  CHECK(normalize_answer("-0") == "0");
}

TEST_CASE("trajectory files round-trip and reject malformed lines") {
  GenSpec spec;
  spec.seed = 41;
  spec.n_train = 25;
  spec.n_meta = 4;
  spec.n_eval_pools = 4;
  const auto data = generate(spec);

  const auto path = temp_file("roundtrip");
  save_trajectories(path, data.train);
  const auto loaded = load_trajectories(path);
  REQUIRE(loaded.size() == data.train.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == data.train[i].id);
    CHECK(loaded[i].question == data.train[i].question);
    CHECK(loaded[i].steps == data.train[i].steps);
    CHECK(loaded[i].step_labels == data.train[i].step_labels);
    CHECK(loaded[i].final_answer == data.train[i].final_answer);
    CHECK(loaded[i].final_correct == data.train[i].final_correct);
    CHECK(loaded[i].noisy == data.train[i].noisy);
    CHECK(loaded[i].trivial == data.train[i].trivial);
  }

  const auto pools_path = temp_file("pools");
  save_pools(pools_path, data.pools);
  const auto pools = load_pools(pools_path);
  REQUIRE(pools.size() == data.pools.size());
  CHECK(pools[0].candidates.size() == data.pools[0].candidates.size());

  SUBCASE("truncated line names its line number") {
    std::ofstream out(path, std::ios::app);
    out << "{\"version\":\"v1\",\"id\":\"broken\"\n";
    out.close();
    try {
      (void)load_trajectories(path);
      FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(":26:") != std::string::npos);
    }
  }

  SUBCASE("missing required fields are errors, unknown fields are ignored") {
    const auto extra = temp_file("extra");
    {
      std::ofstream out(extra);
      out << R"({"version":"v1","id":"x","question":"start 1 ; + 1 = ?","steps":["2"],)"
          << R"("step_labels":[1],"final_answer":"2","final_correct":1,"someday":"maybe"})"
          << "\n";
    }
    CHECK(load_trajectories(extra).size() == 1);

    const auto missing = temp_file("missing");
    {
      std::ofstream out(missing);
      out << R"({"version":"v1","id":"x","question":"q","steps":["2"]})" << "\n";
    }
    CHECK_THROWS_AS((void)load_trajectories(missing), ValidationError);

    const auto badver = temp_file("badver");
    {
      std::ofstream out(badver);
      out << R"({"version":"v9","id":"x"})" << "\n";
    }
    CHECK_THROWS_AS((void)load_trajectories(badver), ValidationError);
  }

  SUBCASE("an empty file is an empty dataset") {
    const auto empty = temp_file("empty");
    std::ofstream(empty).close();
    CHECK(load_trajectories(empty).empty());
  }
}

TEST_CASE("rejected generator specs") {
  GenSpec spec;
  spec.label_noise = 1.5;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = GenSpec{};
  spec.chain_min = 0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = GenSpec{};
  spec.candidates_per_pool = 0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}
