#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualroute/autodiff.hpp"
#include "dualroute/featurize.hpp"
#include "dualroute/fusion.hpp"
#include "dualroute/routing.hpp"
#include "dualroute/schema.hpp"
#include "dualroute/targets.hpp"

namespace dualroute {

struct NamedTensor {
  std::string name;
  Mat value;
  bool decay = false;  // participates in decoupled weight decay
};

class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols, bool decay);
  int find(const std::string& name) const;  // -1 when absent
  int size() const { return static_cast<int>(tensors_.size()); }
  NamedTensor& tensor(int idx) { return tensors_[static_cast<std::size_t>(idx)]; }
  const NamedTensor& tensor(int idx) const { return tensors_[static_cast<std::size_t>(idx)]; }
  Mat& value(int idx) { return tensors_[static_cast<std::size_t>(idx)].value; }
  const Mat& value(int idx) const { return tensors_[static_cast<std::size_t>(idx)].value; }

 private:
  std::vector<NamedTensor> tensors_;
  std::unordered_map<std::string, int> index_;
};

// Coarse parameter grouping used by gradient-check coverage reporting.
// One of: embedding, fusion, classifier, pointer, gating.
std::string param_group(const std::string& name);

// The assembled network: embedding tables, fusion stack, and the routing
// heads, together with per-pass tape wiring.
class Model {
 public:
  Model(const ModelConfig& config, int n_candidates);

  const ModelConfig& config() const { return config_; }
  int n_candidates() const { return n_candidates_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  struct Bindings {
    FeaturizeParams feat{};
    FusionParams fusion{};
    RoutingParams routing{};
    std::vector<Tape::NodeId> leaf_of_param;  // store index -> tape leaf
  };

  // Registers every parameter tensor as a tape leaf.
  Bindings bind(Tape& tape, bool requires_grad) const;

  struct ForwardOutputs {
    Tape::NodeId s_hat = -1;  // 1 x C
    Tape::NodeId y = -1;      // T x (M+1), raw scores; -1 when pointer skipped
    Tape::NodeId g_hat = -1;  // 1 x 1
    FusedRepresentations fused{};
    EmbeddingBundle bundle{};
    std::vector<bool> slot_mask;  // M+1 valid pointer slots
  };

  // One full pass over an instance. teacher_slots feeds decoder steps >= 2;
  // n_dec_steps rows of the decoder block are populated (the rest stay zero).
  ForwardOutputs forward(Tape& tape, const Bindings& bindings, const VQAInstance& instance,
                         const std::vector<int>& teacher_slots, int n_dec_steps,
                         bool need_pointer,
                         const std::optional<DropoutPlan>& dropout = std::nullopt) const;

  // Greedy pointer decoding, re-running fusion at every step.
  std::vector<int> decode(const VQAInstance& instance) const;

  // Inference-only gate and classifier evaluation.
  double gate_score(const VQAInstance& instance) const;
  int classifier_argmax(const VQAInstance& instance) const;

 private:
  ModelConfig config_;
  int n_candidates_;
  ParamStore store_;

  // store indices of every tensor, in registration order
  std::vector<int> order_;
  int idx_(const std::string& name) const;
};

// Versioned container holding the config, the candidate answers, and every
// named parameter tensor. Loading verifies the manifest.
void save_checkpoint(const Model& model, const std::vector<std::string>& candidates,
                     const std::string& path);

struct LoadedCheckpoint {
  ModelConfig config;
  std::vector<std::string> candidates;
  Model model;
};

LoadedCheckpoint load_checkpoint(const std::string& path);
// Throws ConfigError when the embedded config differs from `expected`.
LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace dualroute
