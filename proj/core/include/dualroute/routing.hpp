#pragma once

#include <functional>
#include <vector>

#include "dualroute/autodiff.hpp"
#include "dualroute/schema.hpp"
#include "dualroute/targets.hpp"

namespace dualroute {

// BCE probabilities are clamped into [kProbClamp, 1-kProbClamp]; every
// clamped value bumps Tape::clamp_events().
inline constexpr double kProbClamp = 1e-7;

struct RoutingParams {
  Tape::NodeId cls_w, cls_b;          // C x d, 1 x C
  Tape::NodeId ptr_w_ocr, ptr_b_ocr;  // d x d, 1 x d
  Tape::NodeId ptr_w_dec, ptr_b_dec;  // d x d, 1 x d
  Tape::NodeId ptr_end;               // 1 x d, learned END candidate row
  Tape::NodeId gate_w1, gate_b1;      // H x d, 1 x H
  Tape::NodeId gate_w2, gate_b2;      // 1 x H, 1 x 1
};

// sigmoid(W z_cls + b): per-candidate probabilities, 1 x C.
Tape::NodeId classify(Tape& tape, Tape::NodeId z_cls, Tape::NodeId cls_w, Tape::NodeId cls_b);

// sigmoid(W2 relu(W1 z_cls + b1) + b2): gating score, 1 x 1.
Tape::NodeId gate(Tape& tape, Tape::NodeId z_cls, const RoutingParams& params);

// Bilinear scores (W_ocr z_ocr_m + b_ocr)^T (W_dec z_dec_t + b_dec) for all
// steps and candidate slots at once; slot M is the learned END row.
// Returns T x (M+1) raw scores. Masking of padded slots is the caller's
// business (see ptr_slot_mask).
Tape::NodeId pointer_scores(Tape& tape, Tape::NodeId z_ocr, Tape::NodeId z_dec,
                            const RoutingParams& params);

// One decoding step of the above: 1 x (M+1).
Tape::NodeId pointer_score(Tape& tape, Tape::NodeId z_ocr, Tape::NodeId z_dec_t,
                           const RoutingParams& params);

// Valid pointer slots: real OCR tokens plus END.
std::vector<bool> ptr_slot_mask(const std::vector<bool>& ocr_mask);

// t*log(p) + (1-t)*log(1-p) elementwise, with probabilities clamped.
Tape::NodeId bce_terms(Tape& tape, Tape::NodeId probs, const Mat& targets);

// Eq.-style batch losses. `flags` holds the ground-truth routing flags g_i.
// classifier: -(1/N) sum_i g_i sum_c bce(s_hat_ic, s_ic)
Tape::NodeId classifier_loss(Tape& tape, Tape::NodeId s_hat, const Mat& targets,
                             const std::vector<int>& flags);

// pointer: BCE over valid slots of valid steps of g=0 instances, averaged
// over all valid (instance, step) pairs in the batch.
Tape::NodeId pointer_loss(Tape& tape, const std::vector<Tape::NodeId>& y_per_instance,
                          const std::vector<const TargetBundle*>& targets,
                          const std::vector<std::vector<bool>>& slot_masks,
                          const std::vector<int>& flags);

// gating: -(1/N) sum_i bce(g_hat_i, g_i)
Tape::NodeId gating_loss(Tape& tape, Tape::NodeId g_hat, const std::vector<int>& flags);

struct LossBreakdown {
  double l_cls = 0.0;
  double l_ptr = 0.0;
  double l_gate = 0.0;
  double omega_cls = 0.0;
  double omega_ptr = 0.0;
  double total = 0.0;
};

// omega_cls = sum(g)/N, omega_ptr = sum(1-g)/N.
void branch_weights(const std::vector<int>& flags, double* omega_cls, double* omega_ptr);

// total = omega_cls*l_cls + omega_ptr*l_ptr + l_gate; fills the breakdown.
Tape::NodeId total_loss(Tape& tape, Tape::NodeId l_cls, Tape::NodeId l_ptr,
                        Tape::NodeId l_gate, const std::vector<int>& flags,
                        LossBreakdown* breakdown);

// 1 (classifier branch) iff g_hat >= threshold.
int route(double g_hat, double threshold = 0.5);

// Greedy iterative decoding: the scorer maps (previously selected slots,
// 1-based step) to the M+1 slot scores for that step; selection stops at the
// END slot (index M) or after T steps. Returns selected non-END slots.
using StepScorer = std::function<Eigen::VectorXd(const std::vector<int>&, int)>;
std::vector<int> decode_greedy(const StepScorer& scorer, int T);

}  // namespace dualroute
