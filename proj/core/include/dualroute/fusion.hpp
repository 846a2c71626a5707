#pragma once

#include <optional>
#include <vector>

#include "dualroute/autodiff.hpp"
#include "dualroute/featurize.hpp"
#include "dualroute/rng.hpp"
#include "dualroute/schema.hpp"

namespace dualroute {

using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Attention rights over the packed sequence [words | objects | ocr | decoder],
// [CLS] at slot 0. Encoder slots attend to all real encoder slots; decoder
// step t attends to real encoder slots and decoder steps <= t; encoder slots
// never attend to decoder slots. Padded slots keep self-attention only so
// softmax stays defined; nothing attends to them.
struct AttentionMask {
  BoolMat allowed;  // S x S, row = query, col = key
  int V = 0, E = 0, M = 0, T = 0;
  int rows() const { return static_cast<int>(allowed.rows()); }
};

AttentionMask build_mask(const std::vector<bool>& word_mask,
                         const std::vector<bool>& obj_mask,
                         const std::vector<bool>& ocr_mask, int T);

// Additive form: 0 where allowed, -1e30 where blocked.
Mat additive_mask(const AttentionMask& mask);

struct LayerParams {
  Tape::NodeId attn_wq, attn_bq;  // d x d, 1 x d
  Tape::NodeId attn_wk, attn_bk;
  Tape::NodeId attn_wv, attn_bv;
  Tape::NodeId attn_wo, attn_bo;
  Tape::NodeId ln1_gamma, ln1_beta;
  Tape::NodeId ff_w1, ff_b1;      // 4d x d, 1 x 4d
  Tape::NodeId ff_w2, ff_b2;      // d x 4d, 1 x d
  Tape::NodeId ln2_gamma, ln2_beta;
};

struct FusionParams {
  std::vector<LayerParams> layers;
  int num_heads = 1;
};

// Enhanced per-modality representations produced by the joint stack.
struct FusedRepresentations {
  Tape::NodeId z_cls = -1;   // 1 x d
  Tape::NodeId z_word = -1;  // V x d
  Tape::NodeId z_obj = -1;   // E x d
  Tape::NodeId z_ocr = -1;   // M x d
  Tape::NodeId z_dec = -1;   // T x d
  Tape::NodeId packed = -1;  // S x d
};

// Dropout configuration for a training pass; absent means inference.
struct DropoutPlan {
  double rate = 0.0;
  Rng* rng = nullptr;
};

// Post-layer-norm transformer over the packed sequence; splits the output
// back per modality. Throws NumericError naming the layer when an
// activation goes non-finite.
FusedRepresentations fuse(Tape& tape, const EmbeddingBundle& bundle,
                          const AttentionMask& mask, const FusionParams& params,
                          const std::optional<DropoutPlan>& dropout = std::nullopt);

}  // namespace dualroute
