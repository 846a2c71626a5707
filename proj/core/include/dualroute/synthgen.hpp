#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualroute/kvconfig.hpp"
#include "dualroute/schema.hpp"

namespace dualroute {

// Controls for the synthetic task. Two question families are produced:
//   (a) scene questions (color / existence / count) answered from the
//       candidate set, with object features encoding the scene;
//   (b) "what does the sign say" questions answered by copying OCR tokens.
struct GenConfig {
  int n_instances = 1000;
  double p_text_question = 0.5;
  double annotator_noise = 0.1;
  int max_answer_tokens = 3;  // sign answers use 1..max_answer_tokens words
  std::uint64_t seed = 0;
  int max_objects = 5;
  int max_distractor_ocr = 3;
  std::vector<std::string> colors = {"red",    "blue",  "green", "yellow",
                                     "purple", "orange", "black", "white"};
  std::vector<std::string> shapes = {"cube", "sphere", "cylinder", "cone", "pyramid"};
  std::vector<std::string> ocr_lexicon = {
      "ALLEY",  "AVENUE", "BAKERY", "BRIDGE", "CANYON", "CORNER", "DEPOT",
      "DINER",  "EXIT",   "FLAMING", "GARAGE", "HARBOR", "JUNCTION", "LIPS",
      "MARKET", "MOTEL",  "NORTH",  "PLAZA",  "RIVER",  "SOUTH",  "STATION",
      "SUMMIT", "TAVERN", "TOWER",  "VALLEY", "WHARF"};

  void validate() const;  // throws ConfigError
  static GenConfig from_kv(const KvFile& kv);
};

// Deterministic in the seed: two calls produce byte-identical datasets.
// Feature dims come from `dims` (D_ft, D_p, D_fr, D_obj); instance shapes
// respect the configured maxima.
std::vector<VQAInstance> generate(const GenConfig& config, const ModelConfig& dims);

// Every answer family (a) can produce, normalized, deduplicated, sorted,
// with OCR lexicon words filtered out. Depends only on the config, so the
// train and eval splits of one config share the same candidate list.
std::vector<std::string> emit_candidate_set(const GenConfig& config);

}  // namespace dualroute
