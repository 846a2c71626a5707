#include <doctest.h>

#include <fstream>

#include "dualroute/common.hpp"
#include "dualroute/schema.hpp"
#include "dualroute/synthgen.hpp"
#include "testutil.hpp"

using namespace dualroute;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.V = 20;
  cfg.E = 6;
  cfg.M = 8;
  cfg.T = 5;
  cfg.C = 16;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.D_ft = 8;
  cfg.D_p = 8;
  cfg.D_fr = 12;
  cfg.D_obj = 16;
  cfg.dropout = 0.0;
  cfg.batch_size = 4;
  cfg.epochs = 0;
  return cfg;
}

bool instances_equal(const VQAInstance& a, const VQAInstance& b, double tol) {
  if (a.instance_id != b.instance_id) return false;
  if (a.question_words != b.question_words) return false;
  if (a.object_tags != b.object_tags) return false;
  if (a.human_answers != b.human_answers) return false;
  if (a.answer_type != b.answer_type) return false;
  if (a.object_features.size() != b.object_features.size()) return false;
  for (std::size_t i = 0; i < a.object_features.size(); ++i) {
    if ((a.object_features[i] - b.object_features[i]).cwiseAbs().maxCoeff() > tol) return false;
  }
  if (a.ocr_tokens.size() != b.ocr_tokens.size()) return false;
  for (std::size_t i = 0; i < a.ocr_tokens.size(); ++i) {
    const auto& ta = a.ocr_tokens[i];
    const auto& tb = b.ocr_tokens[i];
    if (ta.text != tb.text) return false;
    if ((ta.x_ft - tb.x_ft).cwiseAbs().maxCoeff() > tol) return false;
    if ((ta.x_p - tb.x_p).cwiseAbs().maxCoeff() > tol) return false;
    if ((ta.x_fr - tb.x_fr).cwiseAbs().maxCoeff() > tol) return false;
    if ((ta.x_spt - tb.x_spt).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("schema") {

TEST_CASE("empty dataset round trips to a header-only file") {
  testutil::TempDir dir("schema-empty");
  const std::string path = dir.file("empty.jsonl");
  save_dataset({}, path);

  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 1);  // header only

  const auto loaded = load_dataset(path, toy_config());
  CHECK(loaded.empty());
}

TEST_CASE("single instance round trips field for field") {
  testutil::TempDir dir("schema-one");
  const ModelConfig cfg = toy_config();
  const VQAInstance inst = testutil::tiny_instance(cfg);
  const std::string path = dir.file("one.jsonl");
  save_dataset({inst}, path);
  const auto loaded = load_dataset(path, cfg);
  REQUIRE(loaded.size() == 1);
  CHECK(instances_equal(inst, loaded[0], 1e-9));
}

TEST_CASE("generated corpus round trips within 1e-9") {
  testutil::TempDir dir("schema-rt");
  const ModelConfig cfg = toy_config();
  GenConfig gen;
  gen.n_instances = 100;
  gen.seed = 99;
  gen.max_answer_tokens = cfg.T - 1;
  gen.max_objects = cfg.E - 1;
  const auto instances = generate(gen, cfg);
  REQUIRE(instances.size() == 100);
  const std::string path = dir.file("corpus.jsonl");
  save_dataset(instances, path);
  const auto loaded = load_dataset(path, cfg);
  REQUIRE(loaded.size() == instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    CHECK(instances_equal(instances[i], loaded[i], 1e-9));
  }
}

TEST_CASE("over-long OCR list is truncated to M with a warning") {
  testutil::TempDir dir("schema-trunc");
  ModelConfig cfg = toy_config();
  cfg.M = 50;
  VQAInstance inst = testutil::tiny_instance(cfg);
  inst.ocr_tokens.clear();
  for (int i = 0; i < 60; ++i) {
    OCRTokenRecord tok;
    tok.text = "tok" + std::to_string(i);
    tok.x_ft = Vec::Zero(cfg.D_ft);
    tok.x_p = Vec::Zero(cfg.D_p);
    tok.x_fr = Vec::Zero(cfg.D_fr);
    tok.x_spt << 0.1, 0.1, 0.2, 0.2;
    inst.ocr_tokens.push_back(tok);
  }
  const std::string path = dir.file("long.jsonl");
  save_dataset({inst}, path);

  testutil::WarnCapture warnings;
  const auto loaded = load_dataset(path, cfg);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].ocr_tokens.size() == 50);
  CHECK(loaded[0].ocr_tokens.front().text == "tok0");  // keeps the first M
  CHECK(loaded[0].ocr_tokens.back().text == "tok49");
  CHECK(warnings.any_contains("truncating ocr_tokens"));
}

TEST_CASE("fewer than 10 answers are padded with the most frequent") {
  testutil::TempDir dir("schema-pad");
  const std::string path = dir.file("short.jsonl");
  {
    std::ofstream out(path);
    out << R"({"file":"dualroute-dataset","version":1})" << "\n";
    out << R"({"instance_id":"x","question_words":["q"],"object_features":[],)"
        << R"("object_tags":[],"ocr_tokens":[],)"
        << R"("human_answers":["red","blue","blue"],"answer_type":"other"})" << "\n";
  }
  testutil::WarnCapture warnings;
  const auto loaded = load_dataset(path, toy_config());
  REQUIRE(loaded.size() == 1);
  CHECK(warnings.any_contains("padding to 10"));
  int blue = 0;
  for (const auto& a : loaded[0].human_answers) blue += a == "blue" ? 1 : 0;
  CHECK(blue == 9);  // 2 given + 7 padded
}

TEST_CASE("malformed line reports its line number") {
  testutil::TempDir dir("schema-bad");
  const std::string path = dir.file("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"file":"dualroute-dataset","version":1})" << "\n";
    out << "{not json}\n";
  }
  try {
    load_dataset(path, toy_config());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("missing required field is a schema error") {
  testutil::TempDir dir("schema-missing");
  const std::string path = dir.file("missing.jsonl");
  {
    std::ofstream out(path);
    out << R"({"file":"dualroute-dataset","version":1})" << "\n";
    out << R"({"instance_id":"x","question_words":["q"]})" << "\n";
  }
  CHECK_THROWS_AS(load_dataset(path, toy_config()), SchemaError);
}

TEST_CASE("more than 10 answers is a schema error") {
  testutil::TempDir dir("schema-many");
  const std::string path = dir.file("many.jsonl");
  {
    std::ofstream out(path);
    out << R"({"file":"dualroute-dataset","version":1})" << "\n";
    out << R"({"instance_id":"x","question_words":[],"object_features":[],)"
        << R"("object_tags":[],"ocr_tokens":[],"human_answers":)"
        << R"(["a","a","a","a","a","a","a","a","a","a","a"],"answer_type":"other"})"
        << "\n";
  }
  CHECK_THROWS_AS(load_dataset(path, toy_config()), SchemaError);
}

TEST_CASE("OCR invariants are enforced") {
  OCRTokenRecord tok;
  tok.text = "  ";
  tok.x_ft = Vec::Zero(2);
  tok.x_p = Vec::Zero(2);
  tok.x_fr = Vec::Zero(2);
  tok.x_spt << 0.1, 0.1, 0.2, 0.2;
  CHECK_THROWS_AS(tok.validate(), SchemaError);  // empty after trimming

  tok.text = "ok";
  tok.x_spt << 0.5, 0.1, 0.2, 0.2;  // x_min > x_max
  CHECK_THROWS_AS(tok.validate(), SchemaError);

  tok.x_spt << 0.1, 0.1, 1.2, 0.2;  // outside [0,1]
  CHECK_THROWS_AS(tok.validate(), SchemaError);

  tok.x_spt << 0.1, 0.1, 0.2, 0.2;
  CHECK_NOTHROW(tok.validate());
}

TEST_CASE("answer types parse and print") {
  CHECK(answer_type_from_string("yes/no") == AnswerType::kYesNo);
  CHECK(answer_type_from_string("number") == AnswerType::kNumber);
  CHECK(answer_type_from_string("other") == AnswerType::kOther);
  CHECK_THROWS_AS(answer_type_from_string("banana"), SchemaError);
  CHECK(std::string(to_string(AnswerType::kYesNo)) == "yes/no");
}

TEST_CASE("config invariants are enforced") {
  ModelConfig cfg = toy_config();
  cfg.num_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.T = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config kv text round trips") {
  ModelConfig cfg = toy_config();
  cfg.learning_rate = 3.5e-4;
  cfg.seed = 1234567;
  const ModelConfig back = ModelConfig::from_kv(KvFile::parse_text(cfg.to_kv_text()));
  CHECK(back == cfg);
}

TEST_CASE("feature dimension mismatch is rejected at load") {
  testutil::TempDir dir("schema-dim");
  const ModelConfig cfg = toy_config();
  const VQAInstance inst = testutil::tiny_instance(cfg);
  const std::string path = dir.file("dim.jsonl");
  save_dataset({inst}, path);
  ModelConfig other = cfg;
  other.D_obj = cfg.D_obj + 1;
  CHECK_THROWS(load_dataset(path, other));
}

}  // TEST_SUITE
