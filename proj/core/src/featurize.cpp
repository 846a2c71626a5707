#include "dualroute/featurize.hpp"

#include <algorithm>

#include "dualroute/common.hpp"

namespace dualroute {

std::vector<int> word_row_ids(const std::vector<std::string>& question_words,
                              const std::vector<std::string>& object_tags, int V) {
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(V));
  ids.push_back(kClsRow);
  for (const auto& w : question_words) {
    if (static_cast<int>(ids.size()) >= V) break;
    ids.push_back(vocab_row(w));
  }
  for (const auto& t : object_tags) {
    if (static_cast<int>(ids.size()) >= V) break;
    ids.push_back(vocab_row(t));
  }
  ids.resize(static_cast<std::size_t>(V), -1);
  return ids;
}

MaskedNode embed_words(Tape& tape, const std::vector<int>& row_ids,
                       const FeaturizeParams& params) {
  MaskedNode out;
  out.node = tape.gather_rows(params.word_table, row_ids);
  out.mask.reserve(row_ids.size());
  for (int id : row_ids) out.mask.push_back(id >= 0);
  return out;
}

MaskedNode embed_objects(Tape& tape, const std::vector<Vec>& object_features,
                         const FeaturizeParams& params, int E, int d_obj) {
  const int n = static_cast<int>(object_features.size());
  if (n > E) throw ShapeError("more object features than E slots");
  Mat feats = Mat::Zero(E, d_obj);
  for (int i = 0; i < n; ++i) {
    if (object_features[static_cast<std::size_t>(i)].size() != d_obj) {
      throw ShapeError("object feature has dim " +
                       std::to_string(object_features[static_cast<std::size_t>(i)].size()) +
                       ", expected " + std::to_string(d_obj));
    }
    feats.row(i) = object_features[static_cast<std::size_t>(i)].transpose();
  }
  MaskedNode out;
  out.mask.assign(static_cast<std::size_t>(E), false);
  for (int i = 0; i < n; ++i) out.mask[static_cast<std::size_t>(i)] = true;

  const Tape::NodeId x = tape.constant(std::move(feats));
  Tape::NodeId projected = tape.add_rowvec(tape.matmul_nt(x, params.obj_w), params.obj_b);
  // The broadcast bias would leak into padded rows; zero them out.
  Mat row_mask = Mat::Zero(E, tape.val(projected).cols());
  for (int i = 0; i < n; ++i) row_mask.row(i).setOnes();
  out.node = tape.mul_const(projected, std::move(row_mask));
  return out;
}

Vec assemble_ocr_semantic(const OCRTokenRecord& token) {
  Vec out(token.x_ft.size() + token.x_p.size() + token.x_fr.size());
  out << token.x_ft, token.x_p, token.x_fr;
  return out;
}

MaskedNode embed_ocr(Tape& tape, const std::vector<OCRTokenRecord>& tokens,
                     const FeaturizeParams& params, int M,
                     Tape::NodeId* out_smt, Tape::NodeId* out_spt) {
  const int n = static_cast<int>(tokens.size());
  if (n > M) throw ShapeError("more OCR tokens than M slots");
  const int d_smt = static_cast<int>(tape.val(params.ocr_w_smt).cols());
  Mat smt = Mat::Zero(M, d_smt);
  Mat spt = Mat::Zero(M, 4);
  for (int m = 0; m < n; ++m) {
    const Vec sem = assemble_ocr_semantic(tokens[static_cast<std::size_t>(m)]);
    if (sem.size() != d_smt) {
      throw ShapeError("OCR semantic feature has dim " + std::to_string(sem.size()) +
                       ", expected " + std::to_string(d_smt));
    }
    smt.row(m) = sem.transpose();
    spt.row(m) = tokens[static_cast<std::size_t>(m)].x_spt.transpose();
  }
  const int d = static_cast<int>(tape.val(params.ocr_w_smt).rows());
  Mat row_mask = Mat::Zero(M, d);
  for (int m = 0; m < n; ++m) row_mask.row(m).setOnes();

  const Tape::NodeId smt_proj = tape.matmul_nt(tape.constant(std::move(smt)), params.ocr_w_smt);
  const Tape::NodeId spt_proj = tape.matmul_nt(tape.constant(std::move(spt)), params.ocr_w_spt);
  const Tape::NodeId smt_ln =
      tape.layer_norm(smt_proj, params.ln_smt_gamma, params.ln_smt_beta, kLayerNormEps);
  const Tape::NodeId spt_ln =
      tape.layer_norm(spt_proj, params.ln_spt_gamma, params.ln_spt_beta, kLayerNormEps);
  if (out_smt != nullptr) *out_smt = tape.mul_const(smt_ln, row_mask);
  if (out_spt != nullptr) *out_spt = tape.mul_const(spt_ln, row_mask);

  MaskedNode out;
  out.node = tape.mul_const(tape.add(smt_ln, spt_ln), std::move(row_mask));
  out.mask.assign(static_cast<std::size_t>(M), false);
  for (int m = 0; m < n; ++m) out.mask[static_cast<std::size_t>(m)] = true;
  return out;
}

Tape::NodeId embed_decoder_step(Tape& tape, Tape::NodeId h_ocr_base, int prev_ocr_slot,
                                int step_t, const FeaturizeParams& params, int T) {
  if (step_t < 1 || step_t > T) {
    throw ShapeError("decoder step " + std::to_string(step_t) + " outside [1, " +
                     std::to_string(T) + "]");
  }
  Tape::NodeId token;
  if (step_t == 1) {
    token = params.dec_begin;
  } else {
    token = tape.gather_rows(h_ocr_base, {prev_ocr_slot});
  }
  const Tape::NodeId pos = tape.slice_rows(params.pos_dec, step_t - 1, 1);
  const Tape::NodeId type = tape.slice_rows(params.type_table, kTypeDecoder, 1);
  return tape.add(tape.add(token, pos), type);
}

namespace {

Mat rows_mask(int rows, int d, const std::vector<bool>& mask) {
  Mat m = Mat::Zero(rows, d);
  for (int i = 0; i < rows; ++i) {
    if (mask[static_cast<std::size_t>(i)]) m.row(i).setOnes();
  }
  return m;
}

// pos + type + input LN, applied so padded rows stay exactly zero.
Tape::NodeId assemble_block(Tape& tape, Tape::NodeId block, const std::vector<bool>& mask,
                            const FeaturizeParams& params, int pos_offset, int type_row) {
  const int rows = static_cast<int>(tape.val(block).rows());
  const int d = static_cast<int>(tape.val(block).cols());
  const Tape::NodeId pos = tape.slice_rows(params.pos_enc, pos_offset, rows);
  const Tape::NodeId type = tape.slice_rows(params.type_table, type_row, 1);
  const Tape::NodeId enriched = tape.add_rowvec(tape.add(block, pos), type);
  const Tape::NodeId normed =
      tape.layer_norm(enriched, params.ln_in_gamma, params.ln_in_beta, kLayerNormEps);
  return tape.mul_const(normed, rows_mask(rows, d, mask));
}

}  // namespace

EmbeddingBundle build_bundle(Tape& tape, const VQAInstance& instance,
                             const std::vector<int>& teacher_slots, int n_dec_steps,
                             const FeaturizeParams& params, const ModelConfig& config) {
  EmbeddingBundle bundle;
  const int d = config.d;

  const std::vector<int> ids =
      word_row_ids(instance.question_words, instance.object_tags, config.V);
  MaskedNode words = embed_words(tape, ids, params);
  bundle.word_mask = words.mask;
  bundle.h_word = assemble_block(tape, words.node, words.mask, params, 0, kTypeWord);

  MaskedNode objs = embed_objects(tape, instance.object_features, params, config.E, config.D_obj);
  bundle.obj_mask = objs.mask;
  bundle.h_obj = assemble_block(tape, objs.node, objs.mask, params, config.V, kTypeObject);

  // The OCR block keeps its own two-branch layer norms; only position and
  // type terms are added here.
  MaskedNode ocr = embed_ocr(tape, instance.ocr_tokens, params, config.M);
  bundle.ocr_mask = ocr.mask;
  bundle.h_ocr_base = ocr.node;
  {
    const Tape::NodeId pos = tape.slice_rows(params.pos_enc, config.V + config.E, config.M);
    const Tape::NodeId type = tape.slice_rows(params.type_table, kTypeOcr, 1);
    const Tape::NodeId enriched = tape.add_rowvec(tape.add(ocr.node, pos), type);
    bundle.h_ocr = tape.mul_const(enriched, rows_mask(config.M, d, ocr.mask));
  }

  // Decoder rows: step 1 from BEGIN, step t>1 from the token chosen at t-1.
  if (n_dec_steps > config.T) throw ShapeError("n_dec_steps exceeds T");
  std::vector<Tape::NodeId> dec_rows;
  dec_rows.reserve(static_cast<std::size_t>(config.T));
  for (int t = 1; t <= n_dec_steps; ++t) {
    const int prev = t >= 2 ? teacher_slots[static_cast<std::size_t>(t - 2)] : -1;
    dec_rows.push_back(embed_decoder_step(tape, bundle.h_ocr_base, prev, t, params, config.T));
  }
  if (n_dec_steps < config.T) {
    dec_rows.push_back(tape.constant(Mat::Zero(config.T - n_dec_steps, d)));
  }
  std::vector<bool> dec_mask(static_cast<std::size_t>(config.T), false);
  for (int t = 0; t < n_dec_steps; ++t) dec_mask[static_cast<std::size_t>(t)] = true;
  const Tape::NodeId dec_normed = tape.layer_norm(tape.vstack(dec_rows), params.ln_in_gamma,
                                                  params.ln_in_beta, kLayerNormEps);
  bundle.h_dec = tape.mul_const(dec_normed, rows_mask(config.T, d, dec_mask));
  bundle.cls_slot = 0;
  return bundle;
}

}  // namespace dualroute
