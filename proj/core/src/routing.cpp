#include "dualroute/routing.hpp"

#include <limits>

#include "dualroute/common.hpp"

namespace dualroute {

namespace {

Tape::NodeId linear(Tape& tape, Tape::NodeId x, Tape::NodeId w, Tape::NodeId b) {
  return tape.add_rowvec(tape.matmul_nt(x, w), b);
}

}  // namespace

Tape::NodeId classify(Tape& tape, Tape::NodeId z_cls, Tape::NodeId cls_w, Tape::NodeId cls_b) {
  return tape.sigmoid(linear(tape, z_cls, cls_w, cls_b));
}

Tape::NodeId gate(Tape& tape, Tape::NodeId z_cls, const RoutingParams& params) {
  const Tape::NodeId hidden = tape.relu(linear(tape, z_cls, params.gate_w1, params.gate_b1));
  return tape.sigmoid(linear(tape, hidden, params.gate_w2, params.gate_b2));
}

Tape::NodeId pointer_scores(Tape& tape, Tape::NodeId z_ocr, Tape::NodeId z_dec,
                            const RoutingParams& params) {
  const Tape::NodeId candidates = tape.vstack({z_ocr, params.ptr_end});
  const Tape::NodeId proj_ocr = linear(tape, candidates, params.ptr_w_ocr, params.ptr_b_ocr);
  const Tape::NodeId proj_dec = linear(tape, z_dec, params.ptr_w_dec, params.ptr_b_dec);
  return tape.matmul_nt(proj_dec, proj_ocr);
}

Tape::NodeId pointer_score(Tape& tape, Tape::NodeId z_ocr, Tape::NodeId z_dec_t,
                           const RoutingParams& params) {
  return pointer_scores(tape, z_ocr, z_dec_t, params);
}

std::vector<bool> ptr_slot_mask(const std::vector<bool>& ocr_mask) {
  std::vector<bool> mask = ocr_mask;
  mask.push_back(true);  // END is always selectable
  return mask;
}

Tape::NodeId bce_terms(Tape& tape, Tape::NodeId probs, const Mat& targets) {
  const Tape::NodeId p = tape.clamp(probs, kProbClamp, 1.0 - kProbClamp);
  const Tape::NodeId pos = tape.mul_const(tape.log(p), targets);
  Mat anti = Mat::Ones(targets.rows(), targets.cols()) - targets;
  const Tape::NodeId neg = tape.mul_const(tape.log(tape.one_minus(p)), std::move(anti));
  return tape.add(pos, neg);
}

Tape::NodeId classifier_loss(Tape& tape, Tape::NodeId s_hat, const Mat& targets,
                             const std::vector<int>& flags) {
  const int n = static_cast<int>(flags.size());
  if (tape.val(s_hat).rows() != n || targets.rows() != n) {
    throw ShapeError("classifier_loss: batch size mismatch");
  }
  const Tape::NodeId terms = bce_terms(tape, s_hat, targets);
  Mat weights(n, targets.cols());
  for (int i = 0; i < n; ++i) {
    weights.row(i).setConstant(static_cast<double>(flags[static_cast<std::size_t>(i)]));
  }
  return tape.scale(tape.sum_weighted(terms, std::move(weights)), -1.0 / n);
}

Tape::NodeId pointer_loss(Tape& tape, const std::vector<Tape::NodeId>& y_per_instance,
                          const std::vector<const TargetBundle*>& targets,
                          const std::vector<std::vector<bool>>& slot_masks,
                          const std::vector<int>& flags) {
  const std::size_t n = flags.size();
  if (y_per_instance.size() != n || targets.size() != n || slot_masks.size() != n) {
    throw ShapeError("pointer_loss: batch size mismatch");
  }
  int valid_pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (flags[i] == 0) valid_pairs += targets[i]->valid_steps;
  }
  if (valid_pairs == 0) {
    warn("pointer_loss: no valid decoding steps in batch");
    return tape.constant(Mat::Zero(1, 1));
  }

  Tape::NodeId acc = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (flags[i] != 0) continue;
    const Mat& y = tape.val(y_per_instance[i]);
    Mat weights = Mat::Zero(y.rows(), y.cols());
    for (int t = 0; t < targets[i]->valid_steps; ++t) {
      for (int m = 0; m < y.cols(); ++m) {
        if (slot_masks[i][static_cast<std::size_t>(m)]) weights(t, m) = 1.0;
      }
    }
    const Tape::NodeId probs = tape.sigmoid(y_per_instance[i]);
    const Tape::NodeId terms = bce_terms(tape, probs, targets[i]->ptr_targets);
    const Tape::NodeId s = tape.sum_weighted(terms, std::move(weights));
    acc = acc < 0 ? s : tape.add(acc, s);
  }
  return tape.scale(acc, -1.0 / valid_pairs);
}

Tape::NodeId gating_loss(Tape& tape, Tape::NodeId g_hat, const std::vector<int>& flags) {
  const int n = static_cast<int>(flags.size());
  if (tape.val(g_hat).rows() != n || tape.val(g_hat).cols() != 1) {
    throw ShapeError("gating_loss: expected an N x 1 score column");
  }
  Mat targets(n, 1);
  for (int i = 0; i < n; ++i) targets(i, 0) = static_cast<double>(flags[static_cast<std::size_t>(i)]);
  const Tape::NodeId terms = bce_terms(tape, g_hat, targets);
  return tape.scale(tape.sum_weighted(terms, Mat::Ones(n, 1)), -1.0 / n);
}

void branch_weights(const std::vector<int>& flags, double* omega_cls, double* omega_ptr) {
  const double n = static_cast<double>(flags.size());
  double sum_g = 0.0;
  for (int g : flags) sum_g += static_cast<double>(g);
  *omega_cls = sum_g / n;
  *omega_ptr = (n - sum_g) / n;
}

Tape::NodeId total_loss(Tape& tape, Tape::NodeId l_cls, Tape::NodeId l_ptr,
                        Tape::NodeId l_gate, const std::vector<int>& flags,
                        LossBreakdown* breakdown) {
  double omega_cls = 0.0, omega_ptr = 0.0;
  branch_weights(flags, &omega_cls, &omega_ptr);
  const Tape::NodeId total =
      tape.add(tape.add(tape.scale(l_cls, omega_cls), tape.scale(l_ptr, omega_ptr)), l_gate);
  if (breakdown != nullptr) {
    breakdown->l_cls = tape.val(l_cls)(0, 0);
    breakdown->l_ptr = tape.val(l_ptr)(0, 0);
    breakdown->l_gate = tape.val(l_gate)(0, 0);
    breakdown->omega_cls = omega_cls;
    breakdown->omega_ptr = omega_ptr;
    breakdown->total = tape.val(total)(0, 0);
  }
  return total;
}

int route(double g_hat, double threshold) { return g_hat >= threshold ? 1 : 0; }

std::vector<int> decode_greedy(const StepScorer& scorer, int T) {
  std::vector<int> selected;
  for (int t = 1; t <= T; ++t) {
    const Eigen::VectorXd scores = scorer(selected, t);
    const int end_slot = static_cast<int>(scores.size()) - 1;
    int best = 0;
    for (int m = 1; m < scores.size(); ++m) {
      if (scores[m] > scores[best]) best = m;
    }
    if (best == end_slot) break;
    selected.push_back(best);
  }
  return selected;
}

}  // namespace dualroute
