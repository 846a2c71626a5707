#include "dualroute/targets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "dualroute/common.hpp"

namespace dualroute {

namespace {

bool is_alnum(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

const std::map<std::string, std::string>& number_words() {
  static const std::map<std::string, std::string> words = {
      {"zero", "0"}, {"one", "1"}, {"two", "2"},   {"three", "3"}, {"four", "4"},
      {"five", "5"}, {"six", "6"}, {"seven", "7"}, {"eight", "8"}, {"nine", "9"},
      {"ten", "10"},
  };
  return words;
}

}  // namespace

std::string normalize_answer(const std::string& raw) {
  std::string lowered;
  lowered.reserve(raw.size());
  for (char c : raw) {
    lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }

  // Strip punctuation; a hyphen survives only between alphanumerics.
  std::string stripped;
  stripped.reserve(lowered.size());
  for (std::size_t i = 0; i < lowered.size(); ++i) {
    const char c = lowered[i];
    if (std::ispunct(static_cast<unsigned char>(c))) {
      if (c == '-' && i > 0 && i + 1 < lowered.size() && is_alnum(lowered[i - 1]) &&
          is_alnum(lowered[i + 1])) {
        stripped.push_back(c);
      }
      continue;
    }
    stripped.push_back(c);
  }

  // Tokenize, map number words, drop articles, rejoin with single spaces.
  std::istringstream in(stripped);
  std::string token;
  std::string out;
  while (in >> token) {
    if (token == "a" || token == "an" || token == "the") continue;
    const auto it = number_words().find(token);
    const std::string& word = it != number_words().end() ? it->second : token;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

double vqa_accuracy(const std::string& candidate,
                    const std::array<std::string, 10>& human_answers) {
  const std::string cand = normalize_answer(candidate);
  int matches = 0;
  for (const auto& ans : human_answers) {
    if (normalize_answer(ans) == cand) ++matches;
  }
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

CandidateSet::CandidateSet(std::vector<std::string> normalized_answers)
    : answers_(std::move(normalized_answers)) {
  for (int i = 0; i < static_cast<int>(answers_.size()); ++i) {
    index_.emplace(answers_[static_cast<std::size_t>(i)], i);
  }
}

CandidateSet CandidateSet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open candidate set file: " + path);
  std::vector<std::string> answers;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    answers.push_back(line);
  }
  return CandidateSet(std::move(answers));
}

void CandidateSet::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& a : answers_) out << a << "\n";
  if (!out) throw IoError("write failed: " + path);
}

int CandidateSet::index_of(const std::string& normalized) const {
  const auto it = index_.find(normalized);
  return it == index_.end() ? -1 : it->second;
}

std::string most_frequent_answer(const std::array<std::string, 10>& human_answers) {
  std::map<std::string, int> counts;  // ordered: lexicographic tie-break for free
  for (const auto& raw : human_answers) {
    ++counts[normalize_answer(raw)];
  }
  std::string best;
  int best_count = -1;
  for (const auto& [ans, n] : counts) {
    if (n > best_count) {
      best = ans;
      best_count = n;
    }
  }
  return best;
}

TargetBundle derive_routing(const VQAInstance& instance, const CandidateSet& candidates) {
  TargetBundle bundle;
  bundle.target_answer = most_frequent_answer(instance.human_answers);

  if (bundle.target_answer.empty()) {
    bundle.eliminated = true;
    return bundle;
  }
  if (candidates.index_of(bundle.target_answer) >= 0) {
    bundle.g = 1;
    return bundle;
  }

  // Try to compose the answer from OCR token texts, first occurrence wins.
  std::vector<std::string> normalized_tokens;
  normalized_tokens.reserve(instance.ocr_tokens.size());
  for (const auto& t : instance.ocr_tokens) {
    normalized_tokens.push_back(normalize_answer(t.text));
  }
  std::istringstream in(bundle.target_answer);
  std::string word;
  std::vector<int> sequence;
  bool composable = true;
  while (in >> word) {
    int slot = -1;
    for (int m = 0; m < static_cast<int>(normalized_tokens.size()); ++m) {
      if (normalized_tokens[static_cast<std::size_t>(m)] == word) {
        slot = m;
        break;
      }
    }
    if (slot < 0) {
      composable = false;
      break;
    }
    sequence.push_back(slot);
  }
  if (composable && !sequence.empty()) {
    bundle.g = 0;
    bundle.ocr_index_sequence = std::move(sequence);
    return bundle;
  }
  bundle.eliminated = true;
  return bundle;
}

Vec build_cls_targets(const VQAInstance& instance, const CandidateSet& candidates) {
  std::map<std::string, int> counts;
  for (const auto& raw : instance.human_answers) {
    ++counts[normalize_answer(raw)];
  }
  Vec targets = Vec::Zero(candidates.size());
  for (int c = 0; c < candidates.size(); ++c) {
    const auto it = counts.find(candidates.answer(c));
    if (it != counts.end()) {
      targets[c] = std::min(static_cast<double>(it->second) / 3.0, 1.0);
    }
  }
  return targets;
}

Mat build_ptr_targets(const VQAInstance& instance, const std::vector<int>& index_sequence,
                      int T, int M, int* valid_steps, bool* eliminated) {
  *eliminated = false;
  *valid_steps = 0;
  Mat targets = Mat::Zero(T, M + 1);
  const int L = static_cast<int>(index_sequence.size());
  if (L == 0 || L >= T) {
    if (L >= T) {
      warn("instance '" + instance.instance_id + "': answer needs " + std::to_string(L) +
           " tokens but T=" + std::to_string(T) + ", eliminating");
    }
    *eliminated = true;
    return targets;
  }
  std::string answer;
  for (int i = 0; i < L; ++i) {
    if (i > 0) answer.push_back(' ');
    answer += normalize_answer(instance.ocr_tokens[static_cast<std::size_t>(index_sequence[static_cast<std::size_t>(i)])].text);
  }
  targets(0, index_sequence[0]) = vqa_accuracy(answer, instance.human_answers);
  for (int t = 1; t < L; ++t) {
    targets(t, index_sequence[static_cast<std::size_t>(t)]) = 1.0;
  }
  targets(L, M) = 1.0;  // END
  *valid_steps = L + 1;
  return targets;
}

TargetBundle build_targets(const VQAInstance& instance, const CandidateSet& candidates,
                           int T, int M) {
  TargetBundle bundle = derive_routing(instance, candidates);
  bundle.cls_targets = Vec::Zero(candidates.size());
  bundle.ptr_targets = Mat::Zero(T, M + 1);
  if (bundle.eliminated) return bundle;
  if (bundle.g == 1) {
    bundle.cls_targets = build_cls_targets(instance, candidates);
    bundle.valid_steps = 0;
  } else {
    bool eliminated = false;
    bundle.ptr_targets = build_ptr_targets(instance, bundle.ocr_index_sequence, T, M,
                                           &bundle.valid_steps, &eliminated);
    if (eliminated) {
      bundle.eliminated = true;
      bundle.ptr_targets.setZero();
      bundle.valid_steps = 0;
    }
  }
  return bundle;
}

}  // namespace dualroute
