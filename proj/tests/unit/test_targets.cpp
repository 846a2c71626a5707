#include <doctest.h>

#include "dualroute/common.hpp"
#include "dualroute/synthgen.hpp"
#include "dualroute/targets.hpp"
#include "testutil.hpp"

using namespace dualroute;

namespace {

std::array<std::string, 10> answers10(const std::vector<std::string>& head) {
  std::array<std::string, 10> out;
  for (std::size_t i = 0; i < 10; ++i) out[i] = head[i % head.size()];
  return out;
}

// k copies of `hit`, the rest distinct fillers
std::array<std::string, 10> answers_with_matches(const std::string& hit, int k) {
  std::array<std::string, 10> out;
  for (int i = 0; i < 10; ++i) {
    out[static_cast<std::size_t>(i)] =
        i < k ? hit : "filler" + std::to_string(i);
  }
  return out;
}

VQAInstance sign_instance(const std::vector<std::string>& token_texts,
                          const std::array<std::string, 10>& answers) {
  VQAInstance inst;
  inst.instance_id = "sign";
  inst.question_words = {"what", "does", "the", "sign", "say"};
  for (const auto& text : token_texts) {
    OCRTokenRecord tok;
    tok.text = text;
    tok.x_ft = Vec::Zero(4);
    tok.x_p = Vec::Zero(4);
    tok.x_fr = Vec::Zero(4);
    tok.x_spt << 0.1, 0.1, 0.2, 0.2;
    inst.ocr_tokens.push_back(tok);
  }
  inst.human_answers = answers;
  inst.answer_type = AnswerType::kOther;
  return inst;
}

}  // namespace

TEST_SUITE("targets") {

TEST_CASE("normalization golden cases") {
  CHECK(normalize_answer("The Dog") == "dog");
  CHECK(normalize_answer("Seven") == "7");
  CHECK(normalize_answer("") == "");
  CHECK(normalize_answer("A   red  ball!") == "red ball");
  CHECK(normalize_answer("t-shirt") == "t-shirt");
  CHECK(normalize_answer("-dash") == "dash");
  CHECK(normalize_answer("it's") == "its");
  CHECK(normalize_answer("TEN") == "10");
  CHECK(normalize_answer("an apple") == "apple");
}

TEST_CASE("normalization is idempotent") {
  const std::vector<std::string> samples = {
      "The Dog", "Seven", "", "A   red  ball!", "t-shirt", "FLAMING LIPS ALLEY",
      "it's a    trap", "zero one two THREE", "the-the", "7 eleven",
  };
  for (const auto& s : samples) {
    const std::string once = normalize_answer(s);
    CHECK(normalize_answer(once) == once);
  }
}

TEST_CASE("consensus accuracy sweeps k/3 capped at 1") {
  for (int k = 0; k <= 10; ++k) {
    const auto humans = answers_with_matches("red", k);
    const double expected = std::min(static_cast<double>(k) / 3.0, 1.0);
    CHECK(vqa_accuracy("red", humans) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("consensus accuracy ignores answer order and candidate casing") {
  auto humans = answers_with_matches("red", 2);
  const double base = vqa_accuracy("red", humans);
  CHECK(base == doctest::Approx(2.0 / 3.0));
  std::swap(humans[0], humans[9]);
  std::swap(humans[1], humans[5]);
  CHECK(vqa_accuracy("red", humans) == doctest::Approx(base));
  CHECK(vqa_accuracy("The RED!", humans) == doctest::Approx(base));
}

TEST_CASE("most frequent answer breaks ties lexicographically") {
  const auto humans = answers10({"blue", "red", "blue", "red", "green",
                                 "blue", "red", "green", "zed", "zed"});
  // blue x3, red x3, green x2, zed x2 -> "blue" < "red"
  CHECK(most_frequent_answer(humans) == "blue");
}

TEST_CASE("routing: candidate-set answers take the classifier branch") {
  const CandidateSet candidates({"2", "dog", "red"});
  VQAInstance inst = sign_instance({"FLAMING"}, answers_with_matches("2", 10));
  const TargetBundle bundle = derive_routing(inst, candidates);
  CHECK(bundle.g == 1);
  CHECK_FALSE(bundle.eliminated);
}

TEST_CASE("routing: OCR-composable answers take the pointer branch") {
  const CandidateSet candidates({"2", "dog", "red"});
  const VQAInstance inst =
      sign_instance({"FLAMING", "LIPS", "ALLEY", "EXIT"},
                    answers_with_matches("FLAMING LIPS ALLEY", 10));
  const TargetBundle bundle = derive_routing(inst, candidates);
  CHECK(bundle.g == 0);
  CHECK_FALSE(bundle.eliminated);
  CHECK(bundle.ocr_index_sequence == std::vector<int>{0, 1, 2});
}

TEST_CASE("routing: unmatched answers are eliminated") {
  const CandidateSet candidates({"2", "dog", "red"});
  const VQAInstance inst =
      sign_instance({"FLAMING", "LIPS"}, answers_with_matches("metropolis", 10));
  const TargetBundle bundle = derive_routing(inst, candidates);
  CHECK(bundle.eliminated);
}

TEST_CASE("routing: candidate set wins when both branches match") {
  const CandidateSet candidates({"exit"});
  const VQAInstance inst = sign_instance({"EXIT"}, answers_with_matches("exit", 10));
  const TargetBundle bundle = derive_routing(inst, candidates);
  CHECK(bundle.g == 1);
}

TEST_CASE("routing: duplicate OCR tokens match their first occurrence") {
  const CandidateSet candidates({"red"});
  const VQAInstance inst =
      sign_instance({"EXIT", "EXIT", "NORTH"}, answers_with_matches("exit north", 10));
  const TargetBundle bundle = derive_routing(inst, candidates);
  CHECK(bundle.g == 0);
  CHECK(bundle.ocr_index_sequence == std::vector<int>{0, 2});
}

TEST_CASE("classifier targets score every candidate by consensus") {
  const CandidateSet candidates({"blue", "green", "red"});

  SUBCASE("unanimous answer gets 1.0, others 0") {
    const VQAInstance inst = sign_instance({}, answers_with_matches("red", 10));
    const Vec t = build_cls_targets(inst, candidates);
    CHECK(t[0] == 0.0);
    CHECK(t[1] == 0.0);
    CHECK(t[2] == 1.0);
  }

  SUBCASE("split answers get fractional scores") {
    auto humans = answers_with_matches("blue", 8);
    humans[8] = "red";
    humans[9] = "red";
    const VQAInstance inst = sign_instance({}, humans);
    const Vec t = build_cls_targets(inst, candidates);
    CHECK(t[0] == doctest::Approx(1.0));          // 8/3 capped
    CHECK(t[2] == doctest::Approx(2.0 / 3.0));    // 2 matches
    CHECK(t[1] == 0.0);
  }

  SUBCASE("no candidate matches any human answer") {
    const VQAInstance inst = sign_instance({}, answers_with_matches("metropolis", 10));
    const Vec t = build_cls_targets(inst, candidates);
    CHECK(t.isZero(0.0));
  }
}

TEST_CASE("pointer targets: first token scored, rest full, END last") {
  const int T = 6, M = 4;

  SUBCASE("one-token answer with full agreement") {
    const VQAInstance inst = sign_instance({"EXIT"}, answers_with_matches("exit", 10));
    int valid_steps = 0;
    bool eliminated = false;
    const Mat t = build_ptr_targets(inst, {0}, T, M, &valid_steps, &eliminated);
    CHECK_FALSE(eliminated);
    CHECK(valid_steps == 2);
    CHECK(t(0, 0) == doctest::Approx(1.0));
    CHECK(t(1, M) == doctest::Approx(1.0));
    CHECK(t.sum() == doctest::Approx(2.0));
  }

  SUBCASE("three-token answer scored 2/3 by consensus") {
    auto humans = answers_with_matches("flaming lips alley", 2);
    const VQAInstance inst = sign_instance({"FLAMING", "LIPS", "ALLEY"}, humans);
    int valid_steps = 0;
    bool eliminated = false;
    const Mat t = build_ptr_targets(inst, {0, 1, 2}, T, M, &valid_steps, &eliminated);
    CHECK_FALSE(eliminated);
    CHECK(valid_steps == 4);
    CHECK(t(0, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(t(1, 1) == doctest::Approx(1.0));
    CHECK(t(2, 2) == doctest::Approx(1.0));
    CHECK(t(3, M) == doctest::Approx(1.0));
  }

  SUBCASE("answers that do not fit into T are eliminated") {
    testutil::WarnCapture warnings;
    const VQAInstance inst =
        sign_instance({"A1", "B2", "C3"}, answers_with_matches("a1 b2 c3", 10));
    int valid_steps = 0;
    bool eliminated = false;
    build_ptr_targets(inst, {0, 1, 2}, /*T=*/3, M, &valid_steps, &eliminated);
    CHECK(eliminated);
    CHECK(warnings.any_contains("eliminating"));
  }
}

TEST_CASE("pointer target rows sum to at most 1") {
  GenConfig gen;
  gen.n_instances = 60;
  gen.p_text_question = 1.0;
  gen.seed = 4;
  ModelConfig dims;
  dims.d = 16;
  dims.V = 16;
  dims.E = 6;
  dims.M = 8;
  dims.T = 5;
  dims.C = 4;
  dims.num_layers = 0;
  dims.num_heads = 1;
  dims.D_ft = 4;
  dims.D_p = 4;
  dims.D_fr = 4;
  dims.D_obj = 4;
  dims.dropout = 0.0;
  const CandidateSet candidates(emit_candidate_set(gen));
  for (const auto& inst : generate(gen, dims)) {
    const TargetBundle bundle = build_targets(inst, candidates, dims.T, dims.M);
    REQUIRE_FALSE(bundle.eliminated);
    for (int t = 0; t < dims.T; ++t) {
      CHECK(bundle.ptr_targets.row(t).sum() <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("replaying pointer-target argmaxes reconstructs the answer") {
  GenConfig gen;
  gen.n_instances = 80;
  gen.p_text_question = 1.0;
  gen.annotator_noise = 0.15;
  gen.seed = 12;
  ModelConfig dims;
  dims.d = 16;
  dims.V = 16;
  dims.E = 6;
  dims.M = 8;
  dims.T = 5;
  dims.C = 4;
  dims.num_layers = 0;
  dims.num_heads = 1;
  dims.D_ft = 4;
  dims.D_p = 4;
  dims.D_fr = 4;
  dims.D_obj = 4;
  dims.dropout = 0.0;
  const CandidateSet candidates(emit_candidate_set(gen));
  for (const auto& inst : generate(gen, dims)) {
    const TargetBundle bundle = build_targets(inst, candidates, dims.T, dims.M);
    REQUIRE(bundle.g == 0);
    std::string rebuilt;
    for (int t = 0; t < bundle.valid_steps; ++t) {
      int best = 0;
      for (int m = 1; m <= dims.M; ++m) {
        if (bundle.ptr_targets(t, m) > bundle.ptr_targets(t, best)) best = m;
      }
      if (best == dims.M) break;  // END
      if (!rebuilt.empty()) rebuilt.push_back(' ');
      rebuilt += normalize_answer(inst.ocr_tokens[static_cast<std::size_t>(best)].text);
    }
    CHECK(rebuilt == bundle.target_answer);
  }
}

TEST_CASE("every instance lands in exactly one routing state") {
  GenConfig gen;
  gen.n_instances = 60;
  gen.p_text_question = 0.5;
  gen.seed = 21;
  ModelConfig dims;
  dims.d = 16;
  dims.V = 16;
  dims.E = 6;
  dims.M = 8;
  dims.T = 5;
  dims.C = 16;
  dims.num_layers = 0;
  dims.num_heads = 1;
  dims.D_ft = 4;
  dims.D_p = 4;
  dims.D_fr = 4;
  dims.D_obj = 4;
  dims.dropout = 0.0;
  const CandidateSet candidates(emit_candidate_set(gen));
  for (const auto& inst : generate(gen, dims)) {
    const TargetBundle bundle = build_targets(inst, candidates, dims.T, dims.M);
    if (bundle.eliminated) continue;
    if (bundle.g == 1) {
      CHECK(bundle.ptr_targets.isZero(0.0));
      CHECK(bundle.valid_steps == 0);
    } else {
      CHECK(bundle.cls_targets.isZero(0.0));
      CHECK(bundle.valid_steps >= 2);
    }
  }
}

TEST_CASE("candidate set file round trips and indexes") {
  testutil::TempDir dir("cands");
  const CandidateSet cands({"blue", "dog", "red"});
  const std::string path = dir.file("candidates.txt");
  cands.save(path);
  const CandidateSet loaded = CandidateSet::load(path);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded.answer(0) == "blue");
  CHECK(loaded.index_of("red") == 2);
  CHECK(loaded.index_of("cat") == -1);
}

}  // TEST_SUITE
