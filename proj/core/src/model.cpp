#include "dualroute/model.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "dualroute/common.hpp"
#include "dualroute/rng.hpp"

namespace dualroute {

int ParamStore::add(const std::string& name, int rows, int cols, bool decay) {
  if (index_.count(name) != 0) throw ConfigError("duplicate parameter name: " + name);
  NamedTensor t;
  t.name = name;
  t.value = Mat::Zero(rows, cols);
  t.decay = decay;
  tensors_.push_back(std::move(t));
  const int idx = static_cast<int>(tensors_.size()) - 1;
  index_.emplace(name, idx);
  return idx;
}

int ParamStore::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

std::string param_group(const std::string& name) {
  if (name.rfind("cls.", 0) == 0) return "classifier";
  if (name.rfind("ptr.", 0) == 0) return "pointer";
  if (name.rfind("gate.", 0) == 0) return "gating";
  if (name.rfind("fusion.", 0) == 0) return "fusion";
  return "embedding";
}

namespace {
constexpr int kGateHiddenFactor = 1;  // gate hidden width = d
}

Model::Model(const ModelConfig& config, int n_candidates)
    : config_(config), n_candidates_(n_candidates) {
  config_.validate();
  if (n_candidates_ < 1) throw ConfigError("candidate set must not be empty");
  const int d = config_.d;
  const int d_smt = config_.D_ft + config_.D_p + config_.D_fr;
  const int gate_hidden = d * kGateHiddenFactor;

  // BERT-style init: N(0, 0.02) weights and tables, LN scale 1, biases 0.
  enum class Init { kGaussian, kZero, kOne };
  Rng rng(mix_seed(config_.seed, 0x6d6f64656cULL));
  const auto add = [&](const std::string& name, int r, int c, bool decay, Init init) {
    const int idx = store_.add(name, r, c, decay);
    order_.push_back(idx);
    Mat& v = store_.value(idx);
    switch (init) {
      case Init::kOne: v.setOnes(); break;
      case Init::kZero: v.setZero(); break;
      case Init::kGaussian:
        for (int cc = 0; cc < v.cols(); ++cc) {
          for (int rr = 0; rr < v.rows(); ++rr) v(rr, cc) = 0.02 * rng.gaussian();
        }
        break;
    }
  };
  const Init kW = Init::kGaussian;
  const Init kB = Init::kZero;

  add("embed.word_table", kVocabRows, d, false, kW);
  add("embed.obj_w", d, config_.D_obj, true, kW);
  add("embed.obj_b", 1, d, false, kB);
  add("embed.ocr_w_smt", d, d_smt, true, kW);
  add("embed.ocr_w_spt", d, 4, true, kW);
  add("embed.ln_smt_gamma", 1, d, false, Init::kOne);
  add("embed.ln_smt_beta", 1, d, false, kB);
  add("embed.ln_spt_gamma", 1, d, false, Init::kOne);
  add("embed.ln_spt_beta", 1, d, false, kB);
  add("embed.pos_enc", config_.V + config_.E + config_.M, d, false, kW);
  add("embed.pos_dec", config_.T, d, false, kW);
  add("embed.type_table", 4, d, false, kW);
  add("embed.dec_begin", 1, d, false, kW);
  add("embed.ln_in_gamma", 1, d, false, Init::kOne);
  add("embed.ln_in_beta", 1, d, false, kB);

  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "fusion.layer" + std::to_string(l) + ".";
    add(p + "attn_wq", d, d, true, kW);
    add(p + "attn_bq", 1, d, false, kB);
    add(p + "attn_wk", d, d, true, kW);
    add(p + "attn_bk", 1, d, false, kB);
    add(p + "attn_wv", d, d, true, kW);
    add(p + "attn_bv", 1, d, false, kB);
    add(p + "attn_wo", d, d, true, kW);
    add(p + "attn_bo", 1, d, false, kB);
    add(p + "ln1_gamma", 1, d, false, Init::kOne);
    add(p + "ln1_beta", 1, d, false, kB);
    add(p + "ff_w1", 4 * d, d, true, kW);
    add(p + "ff_b1", 1, 4 * d, false, kB);
    add(p + "ff_w2", d, 4 * d, true, kW);
    add(p + "ff_b2", 1, d, false, kB);
    add(p + "ln2_gamma", 1, d, false, Init::kOne);
    add(p + "ln2_beta", 1, d, false, kB);
  }

  add("cls.w", n_candidates_, d, true, kW);
  add("cls.b", 1, n_candidates_, false, kB);
  add("ptr.w_ocr", d, d, true, kW);
  add("ptr.b_ocr", 1, d, false, kB);
  add("ptr.w_dec", d, d, true, kW);
  add("ptr.b_dec", 1, d, false, kB);
  add("ptr.end", 1, d, false, kW);
  add("gate.w1", gate_hidden, d, true, kW);
  add("gate.b1", 1, gate_hidden, false, kB);
  add("gate.w2", 1, gate_hidden, true, kW);
  add("gate.b2", 1, 1, false, kB);
}

int Model::idx_(const std::string& name) const {
  const int idx = store_.find(name);
  if (idx < 0) throw ConfigError("unknown parameter: " + name);
  return idx;
}

Model::Bindings Model::bind(Tape& tape, bool requires_grad) const {
  Bindings b;
  b.leaf_of_param.resize(static_cast<std::size_t>(store_.size()), -1);
  for (int idx = 0; idx < store_.size(); ++idx) {
    b.leaf_of_param[static_cast<std::size_t>(idx)] =
        tape.leaf(&store_.value(idx), requires_grad);
  }
  const auto leaf = [&](const std::string& name) {
    return b.leaf_of_param[static_cast<std::size_t>(idx_(name))];
  };

  b.feat.word_table = leaf("embed.word_table");
  b.feat.obj_w = leaf("embed.obj_w");
  b.feat.obj_b = leaf("embed.obj_b");
  b.feat.ocr_w_smt = leaf("embed.ocr_w_smt");
  b.feat.ocr_w_spt = leaf("embed.ocr_w_spt");
  b.feat.ln_smt_gamma = leaf("embed.ln_smt_gamma");
  b.feat.ln_smt_beta = leaf("embed.ln_smt_beta");
  b.feat.ln_spt_gamma = leaf("embed.ln_spt_gamma");
  b.feat.ln_spt_beta = leaf("embed.ln_spt_beta");
  b.feat.pos_enc = leaf("embed.pos_enc");
  b.feat.pos_dec = leaf("embed.pos_dec");
  b.feat.type_table = leaf("embed.type_table");
  b.feat.dec_begin = leaf("embed.dec_begin");
  b.feat.ln_in_gamma = leaf("embed.ln_in_gamma");
  b.feat.ln_in_beta = leaf("embed.ln_in_beta");

  b.fusion.num_heads = config_.num_heads;
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "fusion.layer" + std::to_string(l) + ".";
    LayerParams lp;
    lp.attn_wq = leaf(p + "attn_wq");
    lp.attn_bq = leaf(p + "attn_bq");
    lp.attn_wk = leaf(p + "attn_wk");
    lp.attn_bk = leaf(p + "attn_bk");
    lp.attn_wv = leaf(p + "attn_wv");
    lp.attn_bv = leaf(p + "attn_bv");
    lp.attn_wo = leaf(p + "attn_wo");
    lp.attn_bo = leaf(p + "attn_bo");
    lp.ln1_gamma = leaf(p + "ln1_gamma");
    lp.ln1_beta = leaf(p + "ln1_beta");
    lp.ff_w1 = leaf(p + "ff_w1");
    lp.ff_b1 = leaf(p + "ff_b1");
    lp.ff_w2 = leaf(p + "ff_w2");
    lp.ff_b2 = leaf(p + "ff_b2");
    lp.ln2_gamma = leaf(p + "ln2_gamma");
    lp.ln2_beta = leaf(p + "ln2_beta");
    b.fusion.layers.push_back(lp);
  }

  b.routing.cls_w = leaf("cls.w");
  b.routing.cls_b = leaf("cls.b");
  b.routing.ptr_w_ocr = leaf("ptr.w_ocr");
  b.routing.ptr_b_ocr = leaf("ptr.b_ocr");
  b.routing.ptr_w_dec = leaf("ptr.w_dec");
  b.routing.ptr_b_dec = leaf("ptr.b_dec");
  b.routing.ptr_end = leaf("ptr.end");
  b.routing.gate_w1 = leaf("gate.w1");
  b.routing.gate_b1 = leaf("gate.b1");
  b.routing.gate_w2 = leaf("gate.w2");
  b.routing.gate_b2 = leaf("gate.b2");
  return b;
}

Model::ForwardOutputs Model::forward(Tape& tape, const Bindings& bindings,
                                     const VQAInstance& instance,
                                     const std::vector<int>& teacher_slots, int n_dec_steps,
                                     bool need_pointer,
                                     const std::optional<DropoutPlan>& dropout) const {
  ForwardOutputs out;
  out.bundle = build_bundle(tape, instance, teacher_slots, n_dec_steps, bindings.feat, config_);
  const AttentionMask mask =
      build_mask(out.bundle.word_mask, out.bundle.obj_mask, out.bundle.ocr_mask, config_.T);
  out.fused = fuse(tape, out.bundle, mask, bindings.fusion, dropout);
  out.s_hat = classify(tape, out.fused.z_cls, bindings.routing.cls_w, bindings.routing.cls_b);
  out.g_hat = gate(tape, out.fused.z_cls, bindings.routing);
  out.slot_mask = ptr_slot_mask(out.bundle.ocr_mask);
  if (need_pointer) {
    out.y = pointer_scores(tape, out.fused.z_ocr, out.fused.z_dec, bindings.routing);
  }
  return out;
}

std::vector<int> Model::decode(const VQAInstance& instance) const {
  const auto scorer = [this, &instance](const std::vector<int>& prev, int t) {
    Tape tape;
    const Bindings bindings = bind(tape, /*requires_grad=*/false);
    const ForwardOutputs out =
        forward(tape, bindings, instance, prev, t, /*need_pointer=*/true);
    Eigen::VectorXd scores = tape.val(out.y).row(t - 1).transpose();
    for (int m = 0; m < scores.size(); ++m) {
      if (!out.slot_mask[static_cast<std::size_t>(m)]) {
        scores[m] = -std::numeric_limits<double>::infinity();
      }
    }
    return scores;
  };
  return decode_greedy(scorer, config_.T);
}

double Model::gate_score(const VQAInstance& instance) const {
  Tape tape;
  const Bindings bindings = bind(tape, false);
  const ForwardOutputs out = forward(tape, bindings, instance, {}, 0, false);
  return tape.val(out.g_hat)(0, 0);
}

int Model::classifier_argmax(const VQAInstance& instance) const {
  Tape tape;
  const Bindings bindings = bind(tape, false);
  const ForwardOutputs out = forward(tape, bindings, instance, {}, 0, false);
  const Mat& s = tape.val(out.s_hat);
  int best = 0;
  for (int c = 1; c < s.cols(); ++c) {
    if (s(0, c) > s(0, best)) best = c;
  }
  return best;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'R', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_str(std::ofstream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string read_str(std::ifstream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::vector<std::string>& candidates,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, 1);
  write_str(out, model.config().to_kv_text());
  write_u64(out, candidates.size());
  for (const auto& c : candidates) write_str(out, c);
  const ParamStore& store = model.params();
  write_u32(out, static_cast<std::uint32_t>(store.size()));
  for (int i = 0; i < store.size(); ++i) {
    const NamedTensor& t = store.tensor(i);
    write_str(out, t.name);
    write_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    write_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    for (int r = 0; r < t.value.rows(); ++r) {
      for (int c = 0; c < t.value.cols(); ++c) {
        const double v = t.value(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path + ": not a checkpoint file");
  }
  const std::uint32_t version = read_u32(in);
  if (version != 1) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::string config_text = read_str(in);
  const ModelConfig config = ModelConfig::from_kv(KvFile::parse_text(config_text, path));
  const std::uint64_t n_cand = read_u64(in);
  std::vector<std::string> candidates;
  candidates.reserve(n_cand);
  for (std::uint64_t i = 0; i < n_cand; ++i) candidates.push_back(read_str(in));

  LoadedCheckpoint loaded{config, candidates, Model(config, static_cast<int>(n_cand))};
  ParamStore& store = loaded.model.params();
  const std::uint32_t n_tensors = read_u32(in);
  if (static_cast<int>(n_tensors) != store.size()) {
    throw ParseError(path + ": tensor manifest size mismatch");
  }
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_str(in);
    const int idx = store.find(name);
    if (idx < 0) throw ParseError(path + ": unexpected tensor '" + name + "'");
    Mat& v = store.value(idx);
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    if (static_cast<int>(rows) != v.rows() || static_cast<int>(cols) != v.cols()) {
      throw ParseError(path + ": tensor '" + name + "' has unexpected shape");
    }
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        double d = 0.0;
        in.read(reinterpret_cast<char*>(&d), sizeof(d));
        v(static_cast<int>(r), static_cast<int>(c)) = d;
      }
    }
  }
  if (!in) throw ParseError(path + ": truncated checkpoint");
  return loaded;
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  if (!(loaded.config == expected)) {
    throw ConfigError(path + ": checkpoint config does not match the expected config");
  }
  return loaded;
}

}  // namespace dualroute
