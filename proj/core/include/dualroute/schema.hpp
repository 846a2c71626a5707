#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dualroute/kvconfig.hpp"

namespace dualroute {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class AnswerType { kYesNo, kNumber, kOther };

const char* to_string(AnswerType type);
AnswerType answer_type_from_string(const std::string& s);  // throws SchemaError

// One detected text token: raw text, semantic sub-features, and its
// normalized bounding box [x_min, y_min, x_max, y_max].
struct OCRTokenRecord {
  std::string text;
  Vec x_ft;
  Vec x_p;
  Vec x_fr;
  Eigen::Vector4d x_spt = Eigen::Vector4d::Zero();

  void validate() const;  // throws SchemaError on any invariant violation
};

// One question-image pair. Immutable after load; safe to share.
struct VQAInstance {
  std::string instance_id;
  std::vector<std::string> question_words;
  std::vector<Vec> object_features;
  std::vector<std::string> object_tags;
  std::vector<OCRTokenRecord> ocr_tokens;
  std::array<std::string, 10> human_answers;
  AnswerType answer_type = AnswerType::kOther;
};

// Model and training hyperparameters. Defaults are the full-scale profile;
// configs/toy.cfg holds the desk-scale overrides.
struct ModelConfig {
  int d = 768;
  int V = 128;  // max length of the [CLS] + question + tags sequence
  int E = 50;   // max objects
  int M = 50;   // max OCR tokens
  int T = 12;   // max decoding steps
  int C = 3129; // candidate answers
  int num_layers = 12;
  int num_heads = 12;
  int D_ft = 300;
  int D_p = 604;
  int D_fr = 2048;
  int D_obj = 2048;
  double dropout = 0.3;
  double weight_decay = 0.05;
  double learning_rate = 5e-5;
  int batch_size = 48;
  int epochs = 35;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  static ModelConfig from_kv(const KvFile& kv);
  std::string to_kv_text() const;
  bool operator==(const ModelConfig&) const = default;
};

// Line-oriented dataset: line 1 is a format header, every further line is
// one instance. Over-long lists are truncated to the configured maxima and
// instances with fewer than 10 answers are padded, both with a warning.
std::vector<VQAInstance> load_dataset(const std::string& path, const ModelConfig& config);

// Infers feature dimensions and maxima from the file itself; no truncation.
std::vector<VQAInstance> load_dataset_auto(const std::string& path);

void save_dataset(const std::vector<VQAInstance>& instances, const std::string& path);

}  // namespace dualroute
