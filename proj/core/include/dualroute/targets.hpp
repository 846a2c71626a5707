#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualroute/schema.hpp"

namespace dualroute {

// Canonical answer form: lowercase, punctuation stripped (hyphens between
// alphanumerics survive), number words zero..ten mapped to digits, articles
// removed, whitespace collapsed. Idempotent.
std::string normalize_answer(const std::string& raw);

// Consensus score min(#matching annotators / 3, 1). Both sides are
// normalized before comparison.
double vqa_accuracy(const std::string& candidate,
                    const std::array<std::string, 10>& human_answers);

// The fixed classifier answer list. File order defines class indices.
class CandidateSet {
 public:
  CandidateSet() = default;
  explicit CandidateSet(std::vector<std::string> normalized_answers);

  static CandidateSet load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(answers_.size()); }
  const std::string& answer(int index) const { return answers_[static_cast<std::size_t>(index)]; }
  const std::vector<std::string>& answers() const { return answers_; }
  int index_of(const std::string& normalized) const;  // -1 when absent

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, int> index_;
};

// Supervision for one instance. Exactly one of three states holds:
// classifier branch (g=1), pointer branch (g=0), or eliminated.
struct TargetBundle {
  int g = 1;
  Vec cls_targets;          // C, zero unless g=1
  Mat ptr_targets;          // T x (M+1); column M is the END slot; zero unless g=0
  int valid_steps = 0;
  bool eliminated = false;
  std::string target_answer;            // most frequent normalized human answer
  std::vector<int> ocr_index_sequence;  // pointer route: matched OCR slots in order
};

// Most frequent normalized human answer, ties broken lexicographically.
std::string most_frequent_answer(const std::array<std::string, 10>& human_answers);

// Routing skeleton: decides g / eliminated and the OCR index sequence.
// Candidate-set membership wins over OCR composability.
TargetBundle derive_routing(const VQAInstance& instance, const CandidateSet& candidates);

// Per-candidate consensus scores (classifier branch supervision).
Vec build_cls_targets(const VQAInstance& instance, const CandidateSet& candidates);

// Pointer branch supervision: step 1 carries the consensus score of the full
// answer, later tokens carry 1.0, and the final valid step supervises END.
// Sets eliminated when the sequence does not fit into T steps.
Mat build_ptr_targets(const VQAInstance& instance, const std::vector<int>& index_sequence,
                      int T, int M, int* valid_steps, bool* eliminated);

// Full bundle for training: derive_routing plus the branch target matrices.
TargetBundle build_targets(const VQAInstance& instance, const CandidateSet& candidates,
                           int T, int M);

}  // namespace dualroute
