#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dualroute/routing.hpp"
#include "dualroute/rng.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace dualroute;

namespace {

struct HeadFixture {
  Mat cls_w, cls_b, w_ocr, b_ocr, w_dec, b_dec, end_row, gw1, gb1, gw2, gb2;

  RoutingParams bind(Tape& tape) {
    RoutingParams p;
    p.cls_w = tape.leaf(&cls_w, false);
    p.cls_b = tape.leaf(&cls_b, false);
    p.ptr_w_ocr = tape.leaf(&w_ocr, false);
    p.ptr_b_ocr = tape.leaf(&b_ocr, false);
    p.ptr_w_dec = tape.leaf(&w_dec, false);
    p.ptr_b_dec = tape.leaf(&b_dec, false);
    p.ptr_end = tape.leaf(&end_row, false);
    p.gate_w1 = tape.leaf(&gw1, false);
    p.gate_b1 = tape.leaf(&gb1, false);
    p.gate_w2 = tape.leaf(&gw2, false);
    p.gate_b2 = tape.leaf(&gb2, false);
    return p;
  }
};

HeadFixture identity_pointer_fixture(int d) {
  HeadFixture fx;
  fx.cls_w = Mat::Identity(d, d);
  fx.cls_b = Mat::Zero(1, d);
  fx.w_ocr = Mat::Identity(d, d);
  fx.b_ocr = Mat::Zero(1, d);
  fx.w_dec = Mat::Identity(d, d);
  fx.b_dec = Mat::Zero(1, d);
  fx.end_row = Mat::Zero(1, d);
  fx.gw1 = Mat::Zero(1, d);
  fx.gb1 = Mat::Zero(1, 1);
  fx.gw2 = Mat::Zero(1, 1);
  fx.gb2 = Mat::Zero(1, 1);
  return fx;
}

TargetBundle ptr_bundle(const Mat& targets, int valid_steps) {
  TargetBundle b;
  b.g = 0;
  b.ptr_targets = targets;
  b.valid_steps = valid_steps;
  return b;
}

}  // namespace

TEST_SUITE("routing") {

TEST_CASE("classifier with zero parameters outputs 0.5 everywhere") {
  Mat w = Mat::Zero(3, 4);
  Mat b = Mat::Zero(1, 3);
  Mat z = Mat::Ones(1, 4);
  Tape tape;
  const Tape::NodeId probs =
      classify(tape, tape.constant(z), tape.leaf(&w, false), tape.leaf(&b, false));
  CHECK((tape.val(probs).array() == 0.5).all());
}

TEST_CASE("classifier hand case: sigmoid of (2, -2)") {
  Mat w = Mat::Identity(2, 2);
  Mat b = Mat::Zero(1, 2);
  Mat z(1, 2);
  z << 2.0, -2.0;
  Tape tape;
  const Tape::NodeId probs =
      classify(tape, tape.constant(z), tape.leaf(&w, false), tape.leaf(&b, false));
  CHECK(tape.val(probs)(0, 0) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(tape.val(probs)(0, 1) == doctest::Approx(0.1192).epsilon(1e-4));
}

TEST_CASE("adding a constant to z_cls with identity weights keeps the argmax") {
  const int d = 5;
  Mat w = Mat::Identity(d, d);
  Mat b = Mat::Zero(1, d);
  Rng rng(3);
  const Mat z = testutil::random_mat(1, d, rng);
  const Mat shifted = z.array() + 2.5;
  Tape tape;
  const Tape::NodeId p1 =
      classify(tape, tape.constant(z), tape.leaf(&w, false), tape.leaf(&b, false));
  const Tape::NodeId p2 =
      classify(tape, tape.constant(shifted), tape.leaf(&w, false), tape.leaf(&b, false));
  int a1 = 0, a2 = 0;
  for (int c = 1; c < d; ++c) {
    if (tape.val(p1)(0, c) > tape.val(p1)(0, a1)) a1 = c;
    if (tape.val(p2)(0, c) > tape.val(p2)(0, a2)) a2 = c;
  }
  CHECK(a1 == a2);
}

TEST_CASE("classifier loss") {
  SUBCASE("perfect 0/1 predictions cost only the clamp epsilon") {
    Mat s_hat(1, 2);
    s_hat << 1.0, 0.0;
    Mat targets(1, 2);
    targets << 1.0, 0.0;
    Tape tape;
    const Tape::NodeId loss = classifier_loss(tape, tape.constant(s_hat), targets, {1});
    CHECK(std::abs(tape.val(loss)(0, 0)) < 1e-6);
  }
  SUBCASE("all pointer-branch flags zero out the loss") {
    Mat s_hat(2, 3);
    s_hat.setConstant(0.7);
    Mat targets = Mat::Zero(2, 3);
    Tape tape;
    const Tape::NodeId loss = classifier_loss(tape, tape.constant(s_hat), targets, {0, 0});
    CHECK(tape.val(loss)(0, 0) == 0.0);
  }
  SUBCASE("hand case: uniform 0.5 over two classes costs 2 log 2") {
    Mat s_hat(1, 2);
    s_hat.setConstant(0.5);
    Mat targets(1, 2);
    targets << 1.0, 0.0;
    Tape tape;
    const Tape::NodeId loss = classifier_loss(tape, tape.constant(s_hat), targets, {1});
    CHECK(tape.val(loss)(0, 0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("pointer score hand case: identity weights give the dot product") {
  const int d = 2;
  HeadFixture fx = identity_pointer_fixture(d);
  Mat z_ocr(1, d);
  z_ocr << 1.0, 0.0;
  Mat z_dec(1, d);
  z_dec << 3.0, 4.0;
  Tape tape;
  const RoutingParams p = fx.bind(tape);
  const Tape::NodeId y = pointer_score(tape, tape.constant(z_ocr), tape.constant(z_dec), p);
  CHECK(tape.val(y)(0, 0) == doctest::Approx(3.0));
  CHECK(tape.val(y)(0, 1) == doctest::Approx(0.0));  // END row is zero here
}

TEST_CASE("pointer score is zero when the decoder side vanishes") {
  const int d = 3;
  HeadFixture fx = identity_pointer_fixture(d);
  Rng rng(4);
  const Mat z_ocr = testutil::random_mat(2, d, rng);
  Tape tape;
  const RoutingParams p = fx.bind(tape);
  const Tape::NodeId y =
      pointer_score(tape, tape.constant(z_ocr), tape.constant(Mat::Zero(1, d)), p);
  CHECK(tape.val(y).isZero(0.0));
}

TEST_CASE("pointer score scales with z_dec and keeps the argmax") {
  const int d = 4;
  HeadFixture fx = identity_pointer_fixture(d);
  Rng rng(5);
  const Mat z_ocr = testutil::random_mat(3, d, rng);
  const Mat z_dec = testutil::random_mat(1, d, rng);
  const Mat z_dec3 = 3.0 * z_dec;
  Tape tape;
  const RoutingParams p = fx.bind(tape);
  const Tape::NodeId y1 = pointer_score(tape, tape.constant(z_ocr), tape.constant(z_dec), p);
  const Tape::NodeId y3 = pointer_score(tape, tape.constant(z_ocr), tape.constant(z_dec3), p);
  CHECK((3.0 * tape.val(y1) - tape.val(y3)).cwiseAbs().maxCoeff() < 1e-9);
  int a1 = 0, a3 = 0;
  for (int m = 1; m < tape.val(y1).cols(); ++m) {
    if (tape.val(y1)(0, m) > tape.val(y1)(0, a1)) a1 = m;
    if (tape.val(y3)(0, m) > tape.val(y3)(0, a3)) a3 = m;
  }
  CHECK(a1 == a3);
}

TEST_CASE("pointer loss") {
  SUBCASE("no pointer-branch instances mean zero loss and a warning") {
    testutil::WarnCapture warnings;
    Tape tape;
    TargetBundle t = ptr_bundle(Mat::Zero(2, 3), 2);
    t.g = 1;
    const Tape::NodeId y = tape.constant(Mat::Zero(2, 3));
    const Tape::NodeId loss =
        pointer_loss(tape, {y}, {&t}, {{true, true, true}}, {1});
    CHECK(tape.val(loss)(0, 0) == 0.0);
    CHECK(warnings.any_contains("no valid decoding steps"));
  }

  SUBCASE("hand case: one valid step over two slots costs 2 log 2") {
    Tape tape;
    Mat targets = Mat::Zero(3, 2);
    targets(0, 0) = 1.0;
    const TargetBundle t = ptr_bundle(targets, 1);
    const Tape::NodeId y = tape.constant(Mat::Zero(3, 2));  // sigmoid -> 0.5
    const Tape::NodeId loss = pointer_loss(tape, {y}, {&t}, {{true, true}}, {0});
    CHECK(tape.val(loss)(0, 0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
  }

  SUBCASE("replicating every instance leaves the average unchanged") {
    Rng rng(6);
    Mat y_val = testutil::random_mat(3, 4, rng);
    Mat targets = Mat::Zero(3, 4);
    targets(0, 1) = 2.0 / 3.0;
    targets(1, 3) = 1.0;
    const TargetBundle t = ptr_bundle(targets, 2);
    const std::vector<bool> slots = {true, true, false, true};

    Tape tape;
    const Tape::NodeId y = tape.constant(y_val);
    const double once = tape.val(pointer_loss(tape, {y}, {&t}, {slots}, {0}))(0, 0);
    const double thrice = tape.val(pointer_loss(tape, {y, y, y}, {&t, &t, &t},
                                                {slots, slots, slots}, {0, 0, 0}))(0, 0);
    CHECK(std::abs(once - thrice) < 1e-9);
  }
}

TEST_CASE("gate MLP") {
  const int d = 4;
  SUBCASE("all-zero parameters output 0.5") {
    HeadFixture fx = identity_pointer_fixture(d);
    Tape tape;
    const RoutingParams p = fx.bind(tape);
    const Tape::NodeId g = gate(tape, tape.constant(Mat::Ones(1, d)), p);
    CHECK(tape.val(g)(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("ReLU kills negative hidden activations") {
    HeadFixture fx = identity_pointer_fixture(d);
    fx.gw1 = Mat::Zero(1, d);
    fx.gw1(0, 0) = 1.0;
    fx.gw2 = Mat::Ones(1, 1);
    Mat z = Mat::Zero(1, d);
    z(0, 0) = -3.0;
    Tape tape;
    const RoutingParams p = fx.bind(tape);
    CHECK(tape.val(gate(tape, tape.constant(z), p))(0, 0) == doctest::Approx(0.5));
    z(0, 0) = 2.0;
    Tape tape2;
    const RoutingParams p2 = fx.bind(tape2);
    CHECK(tape2.val(gate(tape2, tape2.constant(z), p2))(0, 0) ==
          doctest::Approx(0.8808).epsilon(1e-4));
  }
}

TEST_CASE("gating loss") {
  SUBCASE("exact predictions cost only the clamp epsilon") {
    Mat g_hat(2, 1);
    g_hat << 1.0, 0.0;
    Tape tape;
    const Tape::NodeId loss = gating_loss(tape, tape.constant(g_hat), {1, 0});
    CHECK(std::abs(tape.val(loss)(0, 0)) < 1e-6);
  }
  SUBCASE("uniform 0.5 costs log 2") {
    Mat g_hat = Mat::Constant(4, 1, 0.5);
    Tape tape;
    const Tape::NodeId loss = gating_loss(tape, tape.constant(g_hat), {1, 0, 1, 0});
    CHECK(tape.val(loss)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("symmetric under joint label/score flips") {
    Mat g_hat(3, 1);
    g_hat << 0.3, 0.8, 0.6;
    Mat flipped = Mat::Ones(3, 1) - g_hat;
    Tape tape;
    const double a = tape.val(gating_loss(tape, tape.constant(g_hat), {1, 0, 1}))(0, 0);
    const double b = tape.val(gating_loss(tape, tape.constant(flipped), {0, 1, 0}))(0, 0);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("routing threshold sends ties to the classifier branch") {
  CHECK(route(0.9) == 1);
  CHECK(route(0.1) == 0);
  CHECK(route(0.5) == 1);
  CHECK(route(0.4, 0.4) == 1);
}

TEST_CASE("branch weights and the composite objective") {
  SUBCASE("7 of 10 classifier instances give 0.7 / 0.3") {
    std::vector<int> flags(10, 1);
    flags[0] = flags[1] = flags[2] = 0;
    double wc = 0.0, wp = 0.0;
    branch_weights(flags, &wc, &wp);
    CHECK(wc == doctest::Approx(0.7));
    CHECK(wp == doctest::Approx(0.3));
    CHECK(wc + wp == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("all-classifier batches drop the pointer term") {
    Tape tape;
    const Tape::NodeId lc = tape.constant(Mat::Constant(1, 1, 1.25));
    const Tape::NodeId lp = tape.constant(Mat::Constant(1, 1, 99.0));
    const Tape::NodeId lg = tape.constant(Mat::Constant(1, 1, 0.5));
    LossBreakdown bd;
    const Tape::NodeId total = total_loss(tape, lc, lp, lg, {1, 1, 1}, &bd);
    CHECK(tape.val(total)(0, 0) == doctest::Approx(1.75));
    CHECK(bd.omega_ptr == 0.0);
  }
  SUBCASE("weighted recombination arithmetic") {
    Tape tape;
    const Tape::NodeId lc = tape.constant(Mat::Constant(1, 1, 1.0));
    const Tape::NodeId lp = tape.constant(Mat::Constant(1, 1, 2.0));
    const Tape::NodeId lg = tape.constant(Mat::Constant(1, 1, 0.5));
    LossBreakdown bd;
    const Tape::NodeId total = total_loss(tape, lc, lp, lg, {1, 0, 0, 0}, &bd);
    CHECK(bd.omega_cls == doctest::Approx(0.25));
    CHECK(tape.val(total)(0, 0) == doctest::Approx(0.25 + 1.5 + 0.5));
  }
}

TEST_CASE("greedy decoding") {
  SUBCASE("END at step 1 gives an empty answer") {
    const auto scorer = [](const std::vector<int>&, int) {
      Eigen::VectorXd s(3);
      s << 0.0, 0.0, 5.0;  // END wins
      return s;
    };
    CHECK(decode_greedy(scorer, 4).empty());
  }
  SUBCASE("rigged scores select slot t at step t until END") {
    const auto scorer = [](const std::vector<int>& prev, int t) {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(5);
      if (t <= 3) {
        s[t - 1] = 10.0;
      } else {
        s[4] = 10.0;  // END
      }
      CHECK(static_cast<int>(prev.size()) == t - 1);
      return s;
    };
    CHECK(decode_greedy(scorer, 6) == std::vector<int>{0, 1, 2});
  }
  SUBCASE("output length never exceeds T") {
    const auto scorer = [](const std::vector<int>&, int) {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
      s[0] = 1.0;  // never END
      return s;
    };
    CHECK(static_cast<int>(decode_greedy(scorer, 5).size()) == 5);
  }
}

TEST_CASE("losses match the scalar-loop oracles on random micro-batches") {
  testutil::WarnCapture warnings;  // all-classifier batches warn by design
  Rng rng(99);
  for (int round = 0; round < 40; ++round) {
    const int n = rng.uniform_int(1, 4);
    const int C = rng.uniform_int(1, 5);
    const int M = rng.uniform_int(1, 3);
    const int T = rng.uniform_int(1, 3);

    std::vector<int> flags;
    for (int i = 0; i < n; ++i) flags.push_back(rng.bernoulli(0.5) ? 1 : 0);

    Mat s_hat(n, C), cls_targets(n, C);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < C; ++c) {
        s_hat(i, c) = rng.uniform(0.001, 0.999);
        cls_targets(i, c) = rng.bernoulli(0.5) ? rng.uniform(0.0, 1.0) : 0.0;
      }
    }
    Mat g_hat(n, 1);
    for (int i = 0; i < n; ++i) g_hat(i, 0) = rng.uniform(0.001, 0.999);

    std::vector<Mat> ys;
    std::vector<TargetBundle> bundles;
    std::vector<std::vector<bool>> slot_masks;
    for (int i = 0; i < n; ++i) {
      ys.push_back(testutil::random_mat(T, M + 1, rng, 2.0));
      Mat pt(T, M + 1);
      for (int t = 0; t < T; ++t) {
        for (int m = 0; m <= M; ++m) pt(t, m) = rng.uniform(0.0, 1.0);
      }
      bundles.push_back(ptr_bundle(pt, rng.uniform_int(1, T)));
      std::vector<bool> slots;
      for (int m = 0; m <= M; ++m) slots.push_back(m == M || rng.bernoulli(0.7));
      slot_masks.push_back(slots);
    }

    Tape tape;
    std::vector<Tape::NodeId> y_nodes;
    std::vector<const TargetBundle*> bundle_ptrs;
    for (int i = 0; i < n; ++i) {
      y_nodes.push_back(tape.constant(ys[static_cast<std::size_t>(i)]));
      bundle_ptrs.push_back(&bundles[static_cast<std::size_t>(i)]);
    }

    const double lc = tape.val(classifier_loss(tape, tape.constant(s_hat), cls_targets, flags))(0, 0);
    const double lp = tape.val(pointer_loss(tape, y_nodes, bundle_ptrs, slot_masks, flags))(0, 0);
    const double lg = tape.val(gating_loss(tape, tape.constant(g_hat), flags))(0, 0);

    CHECK(std::abs(lc - oracles::classifier_loss(s_hat, cls_targets, flags)) < 1e-9);
    CHECK(std::abs(lp - oracles::pointer_loss(ys, bundles, slot_masks, flags)) < 1e-9);
    CHECK(std::abs(lg - oracles::gating_loss(g_hat, flags)) < 1e-9);

    double wc = 0.0, wp = 0.0;
    branch_weights(flags, &wc, &wp);
    Tape tape2;
    LossBreakdown bd;
    const Tape::NodeId total = total_loss(
        tape2, tape2.constant(Mat::Constant(1, 1, lc)), tape2.constant(Mat::Constant(1, 1, lp)),
        tape2.constant(Mat::Constant(1, 1, lg)), flags, &bd);
    CHECK(std::abs(tape2.val(total)(0, 0) - (wc * lc + wp * lp + lg)) < 1e-9);
  }
}

}  // TEST_SUITE
