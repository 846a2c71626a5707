#pragma once

#include <string_view>
#include <vector>

#include "dualroute/autodiff.hpp"
#include "dualroute/rng.hpp"
#include "dualroute/schema.hpp"

namespace dualroute {

// The word embedding table is addressed by a hash of the token string
// (hashing-trick vocabulary); row 0 is reserved for [CLS].
inline constexpr int kVocabRows = 4096;
inline constexpr int kClsRow = 0;

inline int vocab_row(std::string_view token) {
  return 1 + static_cast<int>(hash_str(token) % static_cast<std::uint64_t>(kVocabRows - 1));
}

// Modality type rows in the type embedding table.
enum TypeRow : int { kTypeWord = 0, kTypeObject = 1, kTypeOcr = 2, kTypeDecoder = 3 };

// Tape leaf ids for every learned tensor the embedding layer uses.
struct FeaturizeParams {
  Tape::NodeId word_table;   // kVocabRows x d
  Tape::NodeId obj_w;        // d x D_obj
  Tape::NodeId obj_b;        // 1 x d
  Tape::NodeId ocr_w_smt;    // d x (D_ft + D_p + D_fr)
  Tape::NodeId ocr_w_spt;    // d x 4
  Tape::NodeId ln_smt_gamma, ln_smt_beta;  // 1 x d
  Tape::NodeId ln_spt_gamma, ln_spt_beta;  // 1 x d
  Tape::NodeId pos_enc;      // (V + E + M) x d, packed encoder positions
  Tape::NodeId pos_dec;      // T x d, decoding steps
  Tape::NodeId type_table;   // 4 x d
  Tape::NodeId dec_begin;    // 1 x d, BEGIN token for decoding step 1
  // Input layer norm over the word/object/decoder blocks after positional
  // and type terms, keeping them on the same scale as the OCR block (whose
  // own two layer norms are part of its embedding). Standard for the
  // BERT-family stack.
  Tape::NodeId ln_in_gamma, ln_in_beta;  // 1 x d
};

inline constexpr double kLayerNormEps = 1e-5;

// Input embeddings per modality plus padding masks. All padded rows are
// exactly zero and excluded from attention. [CLS] sits at word slot 0.
struct EmbeddingBundle {
  Tape::NodeId h_word = -1;  // V x d
  Tape::NodeId h_obj = -1;   // E x d
  Tape::NodeId h_ocr = -1;   // M x d, with positional/type rows added
  Tape::NodeId h_ocr_base = -1;  // M x d, raw OCR embedding the decoder copies from
  Tape::NodeId h_dec = -1;   // T x d
  std::vector<bool> word_mask, obj_mask, ocr_mask;  // true = real slot
  int cls_slot = 0;
};

// Token rows for the [CLS] + question + tags sequence, truncated to V.
// Padded slots are -1.
std::vector<int> word_row_ids(const std::vector<std::string>& question_words,
                              const std::vector<std::string>& object_tags, int V);

struct MaskedNode {
  Tape::NodeId node = -1;
  std::vector<bool> mask;
};

// Raw word embeddings (no positional or type terms).
MaskedNode embed_words(Tape& tape, const std::vector<int>& row_ids,
                       const FeaturizeParams& params);

// Linear projection of object features into the embedding space.
MaskedNode embed_objects(Tape& tape, const std::vector<Vec>& object_features,
                         const FeaturizeParams& params, int E, int d_obj);

// [x_ft ; x_p ; x_fr], in that order.
Vec assemble_ocr_semantic(const OCRTokenRecord& token);

// LN(W_smt x_smt) + LN(W_spt x_spt) per token; padded rows zero.
// When out_smt/out_spt are non-null they receive the two LN branches.
MaskedNode embed_ocr(Tape& tape, const std::vector<OCRTokenRecord>& tokens,
                     const FeaturizeParams& params, int M,
                     Tape::NodeId* out_smt = nullptr, Tape::NodeId* out_spt = nullptr);

// One decoding-step embedding: token + positional + type. Step 1 uses the
// learned BEGIN vector; later steps copy the previous token's row of
// h_ocr_base (teacher-forced during training). step_t is 1-based.
Tape::NodeId embed_decoder_step(Tape& tape, Tape::NodeId h_ocr_base, int prev_ocr_slot,
                                int step_t, const FeaturizeParams& params, int T);

// Full bundle assembly: adds positional and type embeddings to every real
// encoder slot and builds the teacher-forced decoder rows.
// teacher_slots[t] is the OCR slot selected at step t+1 (used as the input
// of step t+2); decode step 1 always starts from BEGIN.
EmbeddingBundle build_bundle(Tape& tape, const VQAInstance& instance,
                             const std::vector<int>& teacher_slots, int n_dec_steps,
                             const FeaturizeParams& params, const ModelConfig& config);

}  // namespace dualroute
