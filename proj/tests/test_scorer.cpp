#include <doctest.h>

#include "helpers.hpp"
#include "iwprm/errors.hpp"
#include "iwprm/generator.hpp"
#include "iwprm/scorer.hpp"

using namespace iwprm;
using namespace iwprm::testing;

namespace {

Vocab test_vocab() { return synthetic_vocab(kChainModulus); }

PrmParams small_params(uint64_t seed, int64_t width = 8) {
  Rng rng(seed);
  return PrmParams::init(test_vocab().size(), width, rng);
}

}  // namespace

TEST_CASE("reserved vocab ids are distinct and round-trip") {
  const Vocab v = test_vocab();
  CHECK(Vocab::kPlus != Vocab::kMinus);
  for (int32_t id = 0; id < v.size(); ++id) {
    CHECK(v.id(v.token(id)) == id);
  }
  CHECK_THROWS_AS((void)v.id("not-a-token"), ValidationError);
}

TEST_CASE("first-turn context is question ++ SEP ++ step_1") {
  const Vocab v = test_vocab();
  const auto t = traj("t0", "start 7 ; + 5 = ?", {"12"});
  const auto ctx = encode_context(v, t, 1);
  std::vector<int32_t> want = v.encode("start 7 ; + 5 = ?");
  want.push_back(Vocab::kSep);
  want.push_back(v.id("12"));
  CHECK(ctx.ids == want);
}

TEST_CASE("contexts are strict prefix extensions across steps") {
  const Vocab v = test_vocab();
  const auto t = traj("t0", "start 7 ; + 5 ; * 3 = ?", {"12", "6"});
  const auto c1 = encode_context(v, t, 1);
  const auto c2 = encode_context(v, t, 2);
  REQUIRE(c1.ids.size() < c2.ids.size());
  CHECK(std::equal(c1.ids.begin(), c1.ids.end(), c2.ids.begin()));
}

TEST_CASE("encoding rejects bad inputs") {
  const Vocab v = test_vocab();
  auto empty = traj("t0", "start 7 = ?", {"7"});
  empty.steps.clear();
  empty.step_labels.clear();
  CHECK_THROWS_AS((void)encode_context(v, empty, 1), ValidationError);

  const auto t = traj("t1", "start 7 ; + 5 = ?", {"12"});
  CHECK_THROWS_AS((void)encode_context(v, t, 0), ValidationError);
  CHECK_THROWS_AS((void)encode_context(v, t, 2), ValidationError);

  const auto bad = traj("t2", "start banana = ?", {"12"});
  CHECK_THROWS_AS((void)encode_context(v, bad, 1), ValidationError);
}

TEST_CASE("zero-initialized head emits (0,0) and deterministic logits") {
  const Vocab v = test_vocab();
  const PrmParams p = small_params(3);  // head starts at zero by construction
  const auto ctx = encode_context(v, traj("t0", "start 7 ; + 5 = ?", {"12"}), 1);
  const auto a = step_logits(p, ctx);
  CHECK(a.z_plus == 0.0);
  CHECK(a.z_minus == 0.0);
  const auto b = step_logits(p, ctx);
  CHECK(a.z_plus == b.z_plus);
  CHECK(a.z_minus == b.z_minus);
  CHECK(a.hidden.data == b.hidden.data);
}

TEST_CASE("step score values") {
  CHECK(step_score(0.0, 0.0) == 0.5);
  CHECK(step_score(1.0, 0.0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  const double tiny = step_score(-50.0, 50.0);
  CHECK(tiny > 0.0);
  CHECK(tiny < 1e-30);
}

TEST_CASE("perturbing a later step leaves earlier logits unchanged") {
  const Vocab v = test_vocab();
  PrmParams p = small_params(5);
  {  // non-trivial head so logits actually move
    Rng rng(17);
    for (auto& w : p.head_w.data) w = rng.uniform(-0.5, 0.5);
  }
  auto t1 = traj("t0", "start 7 ; + 5 ; * 3 = ?", {"12", "6"});
  auto t2 = t1;
  t2.steps[1] = "9";

  const auto l1 = step_logits(p, encode_context(v, t1, 1));
  const auto l1b = step_logits(p, encode_context(v, t2, 1));
  CHECK(l1.z_plus == l1b.z_plus);
  CHECK(l1.z_minus == l1b.z_minus);

  const auto l2 = step_logits(p, encode_context(v, t1, 2));
  const auto l2b = step_logits(p, encode_context(v, t2, 2));
  CHECK(l2.z_plus != l2b.z_plus);
}

TEST_CASE("trajectory scores equal per-prefix recomputation and stay in (0,1)") {
  const Vocab v = test_vocab();
  PrmParams p = small_params(11);
  {
    Rng rng(23);
    for (auto& w : p.head_w.data) w = rng.uniform(-0.8, 0.8);
  }
  const auto t = traj("t0", "start 4 ; + 3 ; * 2 ; - 1 = ?", {"7", "14", "13"});
  const auto scores = score_trajectory(p, v, t);
  REQUIRE(scores.size() == 3);
  for (int i = 1; i <= 3; ++i) {
    const auto l = step_logits(p, encode_context(v, t, i));
    CHECK(scores[static_cast<size_t>(i - 1)] ==
          doctest::Approx(step_score(l.z_plus, l.z_minus)).epsilon(1e-14));
  }
  for (double s : scores) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }

  // truncation keeps the prefix scores
  auto shorter = t;
  shorter.steps.resize(2);
  shorter.step_labels.resize(2);
  const auto s2 = score_trajectory(p, v, shorter);
  CHECK(s2[0] == scores[0]);
  CHECK(s2[1] == scores[1]);
}

TEST_CASE("all-zero params score 0.5 everywhere") {
  const Vocab v = test_vocab();
  PrmParams p = small_params(1);
  for (Tensor* t : p.tensors()) {
    for (auto& x : t->data) x = 0.0;
  }
  const auto scores =
      score_trajectory(p, v, traj("t0", "start 4 ; + 3 ; * 2 = ?", {"7", "14"}));
  for (double s : scores) CHECK(s == 0.5);
}

TEST_CASE("scorer gradients match finite differences on a tiny config") {
  // < 100 parameters: width 2, few vocab rows exercised
  const Vocab v = test_vocab();
  Rng rng(31);
  PrmParams p = PrmParams::init(v.size(), 2, rng);
  for (auto& w : p.head_w.data) w = rng.uniform(-0.5, 0.5);
  const auto t = traj("t0", "start 4 ; + 3 = ?", {"7"});
  const auto enc = encode_trajectory(v, t.question, t.steps);

  // gradient of the step score wrt the recurrent tensors (embedding rows not
  // touched by the context stay zero, which FD confirms too)
  std::vector<Tensor> at = {p.wz, p.wr, p.wh, p.uz, p.ur, p.uh,
                            p.bz, p.br, p.bh, p.head_w, p.head_b};
  auto eval = [&](const std::vector<double>& flat) {
    PrmParams q = p;
    std::vector<Tensor*> slots = {&q.wz, &q.wr, &q.wh, &q.uz, &q.ur, &q.uh,
                                  &q.bz, &q.br, &q.bh, &q.head_w, &q.head_b};
    size_t off = 0;
    for (Tensor* s : slots) {
      for (int64_t i = 0; i < s->numel(); ++i) (*s)[i] = flat[off++];
    }
    const auto scores = score_trajectory(q, v, t);
    return scores[0];
  };

  Tape tape;
  PrmVals pv = register_prm_leaves(tape, p);
  const auto nodes = forward_steps(tape, pv, enc);
  Value score = tape.sigmoid(tape.sub(nodes[0].z_plus, nodes[0].z_minus));
  const std::vector<Value> wrt = {pv.wz, pv.wr, pv.wh, pv.uz, pv.ur, pv.uh,
                                  pv.bz, pv.br, pv.bh, pv.head_w, pv.head_b};
  const auto grads = tape.gradients(score, wrt);

  // coordinates far below the FD noise floor compare absolutely
  const auto fd = fd_grad(eval, flatten(at), 1e-5);
  const auto g = flatten(grads);
  double worst = 0.0;
  for (size_t i = 0; i < g.size(); ++i) worst = std::max(worst, rel_err(g[i], fd[i], 1e-6));
  CHECK(worst <= 1e-5);
}
