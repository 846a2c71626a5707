#include "dualroute/fusion.hpp"

#include <cmath>
#include <string>

#include "dualroute/common.hpp"

namespace dualroute {

AttentionMask build_mask(const std::vector<bool>& word_mask,
                         const std::vector<bool>& obj_mask,
                         const std::vector<bool>& ocr_mask, int T) {
  AttentionMask mask;
  mask.V = static_cast<int>(word_mask.size());
  mask.E = static_cast<int>(obj_mask.size());
  mask.M = static_cast<int>(ocr_mask.size());
  mask.T = T;
  const int enc = mask.V + mask.E + mask.M;
  const int S = enc + T;

  std::vector<bool> real(static_cast<std::size_t>(enc), false);
  for (int i = 0; i < mask.V; ++i) real[static_cast<std::size_t>(i)] = word_mask[static_cast<std::size_t>(i)];
  for (int i = 0; i < mask.E; ++i) real[static_cast<std::size_t>(mask.V + i)] = obj_mask[static_cast<std::size_t>(i)];
  for (int i = 0; i < mask.M; ++i) real[static_cast<std::size_t>(mask.V + mask.E + i)] = ocr_mask[static_cast<std::size_t>(i)];

  mask.allowed = BoolMat::Constant(S, S, false);
  for (int q = 0; q < enc; ++q) {
    if (!real[static_cast<std::size_t>(q)]) {
      mask.allowed(q, q) = true;
      continue;
    }
    for (int k = 0; k < enc; ++k) {
      if (real[static_cast<std::size_t>(k)]) mask.allowed(q, k) = true;
    }
  }
  for (int t = 0; t < T; ++t) {
    const int q = enc + t;
    for (int k = 0; k < enc; ++k) {
      if (real[static_cast<std::size_t>(k)]) mask.allowed(q, k) = true;
    }
    for (int k = 0; k <= t; ++k) mask.allowed(q, enc + k) = true;
  }
  return mask;
}

Mat additive_mask(const AttentionMask& mask) {
  const int S = mask.rows();
  Mat add = Mat::Constant(S, S, -1e30);
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      if (mask.allowed(i, j)) add(i, j) = 0.0;
    }
  }
  return add;
}

namespace {

Tape::NodeId linear(Tape& tape, Tape::NodeId x, Tape::NodeId w, Tape::NodeId b) {
  return tape.add_rowvec(tape.matmul_nt(x, w), b);
}

Mat dropout_mask(int rows, int cols, double rate, Rng& rng) {
  Mat mask(rows, cols);
  const double keep = 1.0 - rate;
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      mask(i, j) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    }
  }
  return mask;
}

Tape::NodeId maybe_dropout(Tape& tape, Tape::NodeId x,
                           const std::optional<DropoutPlan>& plan) {
  if (!plan.has_value() || plan->rate <= 0.0 || plan->rng == nullptr) return x;
  const Mat& v = tape.val(x);
  return tape.mul_const(x, dropout_mask(static_cast<int>(v.rows()),
                                        static_cast<int>(v.cols()), plan->rate,
                                        *plan->rng));
}

Tape::NodeId attention(Tape& tape, Tape::NodeId x, const LayerParams& layer,
                       int num_heads, const Mat& add_mask,
                       const std::optional<DropoutPlan>& dropout) {
  const int d = static_cast<int>(tape.val(x).cols());
  const int dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tape::NodeId q = linear(tape, x, layer.attn_wq, layer.attn_bq);
  const Tape::NodeId k = linear(tape, x, layer.attn_wk, layer.attn_bk);
  const Tape::NodeId v = linear(tape, x, layer.attn_wv, layer.attn_bv);

  std::vector<Tape::NodeId> contexts;
  contexts.reserve(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    const Tape::NodeId qh = tape.slice_cols(q, h * dh, dh);
    const Tape::NodeId kh = tape.slice_cols(k, h * dh, dh);
    const Tape::NodeId vh = tape.slice_cols(v, h * dh, dh);
    Tape::NodeId scores = tape.scale(tape.matmul_nt(qh, kh), scale);
    Tape::NodeId probs = tape.softmax_rows(scores, add_mask);
    probs = maybe_dropout(tape, probs, dropout);
    contexts.push_back(tape.matmul(probs, vh));
  }
  const Tape::NodeId ctx = num_heads == 1 ? contexts[0] : tape.hstack(contexts);
  return linear(tape, ctx, layer.attn_wo, layer.attn_bo);
}

}  // namespace

FusedRepresentations fuse(Tape& tape, const EmbeddingBundle& bundle,
                          const AttentionMask& mask, const FusionParams& params,
                          const std::optional<DropoutPlan>& dropout) {
  const int V = mask.V, E = mask.E, M = mask.M, T = mask.T;
  Tape::NodeId x = tape.vstack({bundle.h_word, bundle.h_obj, bundle.h_ocr, bundle.h_dec});
  if (tape.val(x).rows() != mask.rows()) {
    throw ShapeError("embedding bundle and attention mask disagree on sequence length");
  }
  const Mat add_mask = additive_mask(mask);

  int layer_index = 0;
  for (const auto& layer : params.layers) {
    const Tape::NodeId attn = attention(tape, x, layer, params.num_heads, add_mask, dropout);
    x = tape.layer_norm(tape.add(x, attn), layer.ln1_gamma, layer.ln1_beta, kLayerNormEps);
    Tape::NodeId ff = linear(tape, tape.gelu(linear(tape, x, layer.ff_w1, layer.ff_b1)),
                             layer.ff_w2, layer.ff_b2);
    ff = maybe_dropout(tape, ff, dropout);
    x = tape.layer_norm(tape.add(x, ff), layer.ln2_gamma, layer.ln2_beta, kLayerNormEps);
    if (!tape.val(x).allFinite()) {
      throw NumericError("non-finite activation in fusion layer " +
                         std::to_string(layer_index));
    }
    ++layer_index;
  }

  FusedRepresentations out;
  out.packed = x;
  out.z_cls = tape.slice_rows(x, 0, 1);
  out.z_word = tape.slice_rows(x, 0, V);
  out.z_obj = tape.slice_rows(x, V, E);
  out.z_ocr = tape.slice_rows(x, V + E, M);
  out.z_dec = tape.slice_rows(x, V + E + M, T);
  return out;
}

}  // namespace dualroute
