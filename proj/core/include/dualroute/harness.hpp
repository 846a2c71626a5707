#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualroute/model.hpp"
#include "dualroute/routing.hpp"
#include "dualroute/schema.hpp"
#include "dualroute/targets.hpp"

namespace dualroute {

// Adam with decoupled weight decay. Tensors that have never received a
// gradient are left untouched entirely (no decay), so unused branches stay
// at their initialization.
class AdamOptimizer {
 public:
  AdamOptimizer(ParamStore& store, double learning_rate, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // One update from per-tensor gradients in store order.
  void step(const std::vector<Mat>& grads);

 private:
  ParamStore* store_;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::vector<Mat> m_, v_;
  std::vector<long> t_;
};

struct BatchLog {
  int epoch = 0;
  int batch = 0;
  int n = 0;      // instances in the batch
  int sum_g = 0;  // classifier-branch instances
  LossBreakdown loss;
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown mean;  // instance-weighted mean over the epoch's batches
};

struct TrainResult {
  std::string final_checkpoint;
  std::vector<BatchLog> batch_logs;
  std::vector<EpochLog> epoch_logs;
  int n_total = 0;
  int n_used = 0;
  int n_eliminated = 0;
};

// Mini-batch optimization of the composite objective with teacher forcing.
// Writes one checkpoint per epoch plus `final.ckpt` and `train_log.txt`
// under out_dir. Eliminated instances are skipped with a warning.
TrainResult train(const std::string& data_path, const std::string& candidates_path,
                  const ModelConfig& config, const std::string& out_dir);

struct Prediction {
  std::string instance_id;
  double g_hat = 0.0;
  int branch = 1;  // 1 classifier, 0 pointer
  std::string answer;
};

struct PredictionFile {
  std::vector<std::string> candidates;
  std::vector<Prediction> predictions;
};

enum class RouteOverride { kGate, kClassifierOnly, kPointerOnly };

PredictionFile predict(const std::string& ckpt_path, const std::string& data_path,
                       RouteOverride route_override = RouteOverride::kGate);
void save_predictions(const PredictionFile& preds, const std::string& path);
PredictionFile load_predictions(const std::string& path);

struct EvalReport {
  double overall_accuracy = 0.0;
  double yes_no = 0.0, number = 0.0, other = 0.0;       // by answer type
  double ocr_token = 0.0, candidate_set = 0.0;          // by answer source
  double gating_accuracy = 0.0, gating_f1 = 0.0;
  int n_instances = 0;
  // group sizes, kept for consistency checks
  int n_yes_no = 0, n_number = 0, n_other = 0;
  int n_ocr_source = 0, n_candidate_source = 0, n_eliminated = 0;
};

EvalReport evaluate(const PredictionFile& preds, const std::string& data_path);
void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

struct GradCheckEntry {
  std::string tensor;
  std::string group;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::vector<GradCheckEntry> tensors;
  std::vector<std::string> groups_covered;  // sorted, distinct
};

// Central finite differences of the composite loss against the analytic
// gradients, sampled per tensor, over a small seeded synthetic batch.
GradCheckReport gradcheck(const ModelConfig& config, std::uint64_t seed);

// Tiny dims used by the CLI `gradcheck` subcommand.
ModelConfig gradcheck_default_config();

// Shared per-instance loss assembly (also the unit under gradcheck).
// Returns the scalar node; the raw BCE sums land in the out parameters.
struct InstanceLossSums {
  double cls_sum = 0.0;
  double ptr_sum = 0.0;
  double gate_sum = 0.0;
};
Tape::NodeId build_instance_loss(Tape& tape, const Model& model,
                                 const Model::Bindings& bindings,
                                 const VQAInstance& instance, const TargetBundle& targets,
                                 double omega_cls, double omega_ptr, int batch_n,
                                 int batch_valid_pairs,
                                 const std::optional<DropoutPlan>& dropout,
                                 InstanceLossSums* sums);

}  // namespace dualroute
