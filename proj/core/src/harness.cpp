#include "dualroute/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dualroute/common.hpp"
#include "dualroute/rng.hpp"
#include "dualroute/synthgen.hpp"

namespace dualroute {

using nlohmann::json;
namespace fs = std::filesystem;

// --- optimizer ---------------------------------------------------------------

AdamOptimizer::AdamOptimizer(ParamStore& store, double learning_rate, double weight_decay,
                             double beta1, double beta2, double eps)
    : store_(&store), lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.reserve(static_cast<std::size_t>(store.size()));
  v_.reserve(static_cast<std::size_t>(store.size()));
  for (int i = 0; i < store.size(); ++i) {
    const Mat& p = store.value(i);
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
    t_.push_back(0);
  }
}

void AdamOptimizer::step(const std::vector<Mat>& grads) {
  if (static_cast<int>(grads.size()) != store_->size()) {
    throw ShapeError("optimizer step: gradient count mismatch");
  }
  for (int i = 0; i < store_->size(); ++i) {
    const Mat& g = grads[static_cast<std::size_t>(i)];
    Mat& m = m_[static_cast<std::size_t>(i)];
    Mat& v = v_[static_cast<std::size_t>(i)];
    if (g.isZero(0.0) && m.isZero(0.0) && v.isZero(0.0)) continue;
    long& t = t_[static_cast<std::size_t>(i)];
    ++t;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    NamedTensor& tensor = store_->tensor(i);
    Mat update = (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps_).matrix());
    if (tensor.decay && wd_ > 0.0) update += wd_ * tensor.value;
    tensor.value -= lr_ * update;
  }
}

// --- shared loss assembly ------------------------------------------------------

Tape::NodeId build_instance_loss(Tape& tape, const Model& model,
                                 const Model::Bindings& bindings,
                                 const VQAInstance& instance, const TargetBundle& targets,
                                 double omega_cls, double omega_ptr, int batch_n,
                                 int batch_valid_pairs,
                                 const std::optional<DropoutPlan>& dropout,
                                 InstanceLossSums* sums) {
  const bool pointer_branch = targets.g == 0;
  const std::vector<int>& teacher = targets.ocr_index_sequence;
  const int n_dec = pointer_branch ? targets.valid_steps : 0;
  const Model::ForwardOutputs out = model.forward(tape, bindings, instance, teacher, n_dec,
                                                  pointer_branch, dropout);

  const Tape::NodeId gate_terms =
      bce_terms(tape, out.g_hat, Mat::Constant(1, 1, static_cast<double>(targets.g)));
  const Tape::NodeId gate_sum = tape.sum_weighted(gate_terms, Mat::Ones(1, 1));
  Tape::NodeId loss = tape.scale(gate_sum, -1.0 / batch_n);
  InstanceLossSums s;
  s.gate_sum = tape.val(gate_sum)(0, 0);

  if (!pointer_branch) {
    const Tape::NodeId cls_terms =
        bce_terms(tape, out.s_hat, targets.cls_targets.transpose());
    const Tape::NodeId cls_sum =
        tape.sum_weighted(cls_terms, Mat::Ones(1, tape.val(out.s_hat).cols()));
    s.cls_sum = tape.val(cls_sum)(0, 0);
    if (omega_cls > 0.0) {
      loss = tape.add(loss, tape.scale(cls_sum, -omega_cls / batch_n));
    }
  } else if (batch_valid_pairs > 0) {
    Mat weights = Mat::Zero(tape.val(out.y).rows(), tape.val(out.y).cols());
    for (int t = 0; t < targets.valid_steps; ++t) {
      for (int m = 0; m < weights.cols(); ++m) {
        if (out.slot_mask[static_cast<std::size_t>(m)]) weights(t, m) = 1.0;
      }
    }
    const Tape::NodeId probs = tape.sigmoid(out.y);
    const Tape::NodeId terms = bce_terms(tape, probs, targets.ptr_targets);
    const Tape::NodeId ptr_sum = tape.sum_weighted(terms, std::move(weights));
    s.ptr_sum = tape.val(ptr_sum)(0, 0);
    if (omega_ptr > 0.0) {
      loss = tape.add(loss, tape.scale(ptr_sum, -omega_ptr / batch_valid_pairs));
    }
  }
  if (sums != nullptr) *sums = s;
  return loss;
}

// --- training ------------------------------------------------------------------

namespace {

struct TrainItem {
  const VQAInstance* instance;
  TargetBundle targets;
};

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", epoch);
  return buf;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& epochs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "# epoch l_cls l_ptr l_gate omega_cls omega_ptr total\n";
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%d %.9f %.9f %.9f %.9f %.9f %.9f\n", e.epoch,
                  e.mean.l_cls, e.mean.l_ptr, e.mean.l_gate, e.mean.omega_cls,
                  e.mean.omega_ptr, e.mean.total);
    out << buf;
  }
}

}  // namespace

TrainResult train(const std::string& data_path, const std::string& candidates_path,
                  const ModelConfig& config, const std::string& out_dir) {
  config.validate();
  const CandidateSet candidates = CandidateSet::load(candidates_path);
  if (candidates.size() == 0) throw ConfigError("candidate set is empty");

  ModelConfig cfg = config;
  if (cfg.C != candidates.size()) {
    warn("config C=" + std::to_string(cfg.C) + " does not match candidate file (" +
         std::to_string(candidates.size()) + " answers); using the file");
    cfg.C = candidates.size();
  }

  const std::vector<VQAInstance> dataset = load_dataset(data_path, cfg);
  TrainResult result;
  result.n_total = static_cast<int>(dataset.size());

  std::vector<TrainItem> items;
  for (const auto& inst : dataset) {
    TargetBundle targets = build_targets(inst, candidates, cfg.T, cfg.M);
    if (targets.eliminated) {
      ++result.n_eliminated;
      continue;
    }
    items.push_back(TrainItem{&inst, std::move(targets)});
  }
  result.n_used = static_cast<int>(items.size());
  if (result.n_eliminated > 0) {
    warn(std::to_string(result.n_eliminated) + " instances eliminated from the training set");
  }

  Model model(cfg, candidates.size());
  AdamOptimizer optimizer(model.params(), cfg.learning_rate, cfg.weight_decay);

  fs::create_directories(out_dir);

  std::vector<Mat> grads;
  for (int i = 0; i < model.params().size(); ++i) {
    const Mat& p = model.params().value(i);
    grads.push_back(Mat::Zero(p.rows(), p.cols()));
  }

  std::vector<int> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x45504f43ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_l_cls = 0.0, epoch_l_ptr = 0.0, epoch_l_gate = 0.0, epoch_total = 0.0;
    double epoch_omega_cls = 0.0, epoch_omega_ptr = 0.0;
    int epoch_instances = 0;

    const int n_batches =
        (static_cast<int>(items.size()) + cfg.batch_size - 1) / cfg.batch_size;
    for (int b = 0; b < n_batches; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min<int>(lo + cfg.batch_size, static_cast<int>(items.size()));
      const int n = hi - lo;

      std::vector<int> flags;
      int valid_pairs = 0;
      for (int k = lo; k < hi; ++k) {
        const TrainItem& item = items[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        flags.push_back(item.targets.g);
        if (item.targets.g == 0) valid_pairs += item.targets.valid_steps;
      }
      double omega_cls = 0.0, omega_ptr = 0.0;
      branch_weights(flags, &omega_cls, &omega_ptr);

      for (auto& g : grads) g.setZero();
      double cls_sums = 0.0, ptr_sums = 0.0, gate_sums = 0.0, total = 0.0;

      for (int k = lo; k < hi; ++k) {
        const TrainItem& item = items[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        Tape tape;
        const Model::Bindings bindings = model.bind(tape, /*requires_grad=*/true);
        Rng dropout_rng(mix_seed(cfg.seed, mix_seed(static_cast<std::uint64_t>(epoch),
                                                    static_cast<std::uint64_t>(k))));
        std::optional<DropoutPlan> dropout;
        if (cfg.dropout > 0.0) dropout = DropoutPlan{cfg.dropout, &dropout_rng};

        InstanceLossSums sums;
        const Tape::NodeId loss =
            build_instance_loss(tape, model, bindings, *item.instance, item.targets,
                                omega_cls, omega_ptr, n, valid_pairs, dropout, &sums);
        total += tape.val(loss)(0, 0);
        cls_sums += sums.cls_sum;
        ptr_sums += sums.ptr_sum;
        gate_sums += sums.gate_sum;
        tape.backward(loss);
        for (int p = 0; p < model.params().size(); ++p) {
          const Tape::NodeId leaf = bindings.leaf_of_param[static_cast<std::size_t>(p)];
          if (tape.has_grad(leaf)) grads[static_cast<std::size_t>(p)] += tape.grad(leaf);
        }
      }

      BatchLog log;
      log.epoch = epoch;
      log.batch = b;
      log.n = n;
      log.sum_g = 0;
      for (int g : flags) log.sum_g += g;
      log.loss.l_cls = -cls_sums / n;
      log.loss.l_ptr = valid_pairs > 0 ? -ptr_sums / valid_pairs : 0.0;
      log.loss.l_gate = -gate_sums / n;
      log.loss.omega_cls = omega_cls;
      log.loss.omega_ptr = omega_ptr;
      log.loss.total = total;
      if (!std::isfinite(log.loss.l_cls)) throw NumericError("classifier loss is non-finite");
      if (!std::isfinite(log.loss.l_ptr)) throw NumericError("pointer loss is non-finite");
      if (!std::isfinite(log.loss.l_gate)) throw NumericError("gating loss is non-finite");
      result.batch_logs.push_back(log);

      epoch_l_cls += log.loss.l_cls * n;
      epoch_l_ptr += log.loss.l_ptr * n;
      epoch_l_gate += log.loss.l_gate * n;
      epoch_omega_cls += omega_cls * n;
      epoch_omega_ptr += omega_ptr * n;
      epoch_total += total * n;
      epoch_instances += n;

      optimizer.step(grads);
    }

    EpochLog elog;
    elog.epoch = epoch;
    elog.mean.l_cls = epoch_l_cls / epoch_instances;
    elog.mean.l_ptr = epoch_l_ptr / epoch_instances;
    elog.mean.l_gate = epoch_l_gate / epoch_instances;
    elog.mean.omega_cls = epoch_omega_cls / epoch_instances;
    elog.mean.omega_ptr = epoch_omega_ptr / epoch_instances;
    elog.mean.total = epoch_total / epoch_instances;
    result.epoch_logs.push_back(elog);

    save_checkpoint(model, candidates.answers(), (fs::path(out_dir) / checkpoint_name(epoch)).string());
  }

  const std::string final_path = (fs::path(out_dir) / "final.ckpt").string();
  save_checkpoint(model, candidates.answers(), final_path);
  write_train_log((fs::path(out_dir) / "train_log.txt").string(), result.epoch_logs);
  result.final_checkpoint = final_path;
  return result;
}

// --- prediction ------------------------------------------------------------------

PredictionFile predict(const std::string& ckpt_path, const std::string& data_path,
                       RouteOverride route_override) {
  const LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  const Model& model = loaded.model;
  std::vector<VQAInstance> dataset;
  try {
    dataset = load_dataset(data_path, loaded.config);
  } catch (const SchemaError& e) {
    // Feature-dimension disagreements between data and checkpoint are a
    // configuration problem, not a data problem.
    if (std::string(e.what()).find("dims") != std::string::npos ||
        std::string(e.what()).find("dim ") != std::string::npos) {
      throw ConfigError(e.what());
    }
    throw;
  }

  PredictionFile out;
  out.candidates = loaded.candidates;
  const CandidateSet candidates(loaded.candidates);

  for (const auto& inst : dataset) {
    Tape tape;
    const Model::Bindings bindings = model.bind(tape, /*requires_grad=*/false);
    const Model::ForwardOutputs fwd =
        model.forward(tape, bindings, inst, {}, 0, /*need_pointer=*/false);
    Prediction pred;
    pred.instance_id = inst.instance_id;
    pred.g_hat = tape.val(fwd.g_hat)(0, 0);
    switch (route_override) {
      case RouteOverride::kGate: pred.branch = route(pred.g_hat); break;
      case RouteOverride::kClassifierOnly: pred.branch = 1; break;
      case RouteOverride::kPointerOnly: pred.branch = 0; break;
    }
    if (pred.branch == 1) {
      const Mat& s = tape.val(fwd.s_hat);
      int best = 0;
      for (int c = 1; c < s.cols(); ++c) {
        if (s(0, c) > s(0, best)) best = c;
      }
      pred.answer = candidates.answer(best);
    } else {
      const std::vector<int> slots = model.decode(inst);
      std::string joined;
      for (std::size_t i = 0; i < slots.size(); ++i) {
        if (i > 0) joined.push_back(' ');
        joined += inst.ocr_tokens[static_cast<std::size_t>(slots[i])].text;
      }
      pred.answer = normalize_answer(joined);
    }
    out.predictions.push_back(std::move(pred));
  }
  return out;
}

void save_predictions(const PredictionFile& preds, const std::string& path) {
  json j;
  j["file"] = "dualroute-predictions";
  j["version"] = 1;
  j["candidates"] = preds.candidates;
  json arr = json::array();
  for (const auto& p : preds.predictions) {
    json jp;
    jp["instance_id"] = p.instance_id;
    jp["g_hat"] = p.g_hat;
    jp["branch"] = p.branch;
    jp["answer"] = p.answer;
    arr.push_back(jp);
  }
  j["predictions"] = arr;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

PredictionFile load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (j.value("file", "") != "dualroute-predictions" || j.value("version", 0) != 1) {
    throw SchemaError(path + ": not a predictions file");
  }
  PredictionFile out;
  for (const auto& c : j.at("candidates")) out.candidates.push_back(c.get<std::string>());
  for (const auto& jp : j.at("predictions")) {
    Prediction p;
    p.instance_id = jp.at("instance_id").get<std::string>();
    p.g_hat = jp.at("g_hat").get<double>();
    p.branch = jp.at("branch").get<int>();
    p.answer = jp.at("answer").get<std::string>();
    out.predictions.push_back(std::move(p));
  }
  return out;
}

// --- evaluation --------------------------------------------------------------------

EvalReport evaluate(const PredictionFile& preds, const std::string& data_path) {
  const std::vector<VQAInstance> dataset = load_dataset_auto(data_path);
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds.predictions) by_id[p.instance_id] = &p;

  std::vector<std::string> missing;
  for (const auto& inst : dataset) {
    if (by_id.count(inst.instance_id) == 0) missing.push_back(inst.instance_id);
  }
  if (!missing.empty()) {
    std::string msg = "missing predictions for instances:";
    for (const auto& id : missing) msg += " " + id;
    throw SchemaError(msg);
  }

  const CandidateSet candidates(preds.candidates);
  EvalReport report;
  report.n_instances = static_cast<int>(dataset.size());

  double sum_all = 0.0;
  double sum_yes_no = 0.0, sum_number = 0.0, sum_other = 0.0;
  double sum_ocr = 0.0, sum_cls = 0.0;
  int gate_correct = 0, tp = 0, fp = 0, fn = 0;

  for (const auto& inst : dataset) {
    const Prediction& pred = *by_id[inst.instance_id];
    const double acc = vqa_accuracy(pred.answer, inst.human_answers);
    sum_all += acc;
    switch (inst.answer_type) {
      case AnswerType::kYesNo: sum_yes_no += acc; ++report.n_yes_no; break;
      case AnswerType::kNumber: sum_number += acc; ++report.n_number; break;
      case AnswerType::kOther: sum_other += acc; ++report.n_other; break;
    }
    const TargetBundle routing = derive_routing(inst, candidates);
    if (routing.eliminated) {
      ++report.n_eliminated;
      continue;
    }
    if (routing.g == 0) {
      sum_ocr += acc;
      ++report.n_ocr_source;
    } else {
      sum_cls += acc;
      ++report.n_candidate_source;
    }
    if (pred.branch == routing.g) ++gate_correct;
    if (routing.g == 1 && pred.branch == 1) ++tp;
    if (routing.g == 0 && pred.branch == 1) ++fp;
    if (routing.g == 1 && pred.branch == 0) ++fn;
  }

  const int n = report.n_instances;
  const int n_routed = report.n_ocr_source + report.n_candidate_source;
  report.overall_accuracy = n > 0 ? sum_all / n : 0.0;
  report.yes_no = report.n_yes_no > 0 ? sum_yes_no / report.n_yes_no : 0.0;
  report.number = report.n_number > 0 ? sum_number / report.n_number : 0.0;
  report.other = report.n_other > 0 ? sum_other / report.n_other : 0.0;
  report.ocr_token = report.n_ocr_source > 0 ? sum_ocr / report.n_ocr_source : 0.0;
  report.candidate_set =
      report.n_candidate_source > 0 ? sum_cls / report.n_candidate_source : 0.0;
  report.gating_accuracy = n_routed > 0 ? static_cast<double>(gate_correct) / n_routed : 0.0;
  report.gating_f1 =
      (2 * tp + fp + fn) > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
  return report;
}

void save_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[128];
  const auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s = %.9f\n", key, v);
    out << buf;
  };
  line("overall_accuracy", report.overall_accuracy);
  line("by_answer_type.yes_no", report.yes_no);
  line("by_answer_type.number", report.number);
  line("by_answer_type.other", report.other);
  line("by_answer_source.ocr_token", report.ocr_token);
  line("by_answer_source.candidate_set", report.candidate_set);
  line("gating_accuracy", report.gating_accuracy);
  line("gating_f1", report.gating_f1);
  out << "n_instances = " << report.n_instances << "\n";
  if (!out) throw IoError("write failed: " + path);
}

EvalReport load_report(const std::string& path) {
  const KvFile kv = KvFile::parse_file(path);
  EvalReport r;
  r.overall_accuracy = kv.get_double("overall_accuracy", 0.0);
  r.yes_no = kv.get_double("by_answer_type.yes_no", 0.0);
  r.number = kv.get_double("by_answer_type.number", 0.0);
  r.other = kv.get_double("by_answer_type.other", 0.0);
  r.ocr_token = kv.get_double("by_answer_source.ocr_token", 0.0);
  r.candidate_set = kv.get_double("by_answer_source.candidate_set", 0.0);
  r.gating_accuracy = kv.get_double("gating_accuracy", 0.0);
  r.gating_f1 = kv.get_double("gating_f1", 0.0);
  r.n_instances = static_cast<int>(kv.get_int("n_instances", 0));
  return r;
}

// --- gradient check ------------------------------------------------------------------

ModelConfig gradcheck_default_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.V = 12;
  cfg.E = 3;
  cfg.M = 5;
  cfg.T = 4;
  cfg.C = 8;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.D_ft = 5;
  cfg.D_p = 6;
  cfg.D_fr = 7;
  cfg.D_obj = 6;
  cfg.dropout = 0.0;
  cfg.weight_decay = 0.0;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.epochs = 0;
  return cfg;
}

GradCheckReport gradcheck(const ModelConfig& config, std::uint64_t seed) {
  ModelConfig cfg = config;
  cfg.dropout = 0.0;

  GenConfig gen;
  gen.n_instances = 8;
  gen.p_text_question = 0.5;
  gen.annotator_noise = 0.2;
  gen.max_answer_tokens = std::min(2, cfg.T - 1);
  gen.max_objects = std::min(2, cfg.E);
  gen.max_distractor_ocr = std::min(1, cfg.M - gen.max_answer_tokens);
  gen.colors = {"red", "blue"};
  gen.shapes = {"cube", "sphere"};
  gen.ocr_lexicon = {"ALPHA", "BRAVO", "DELTA", "ECHO", "GOLF", "HOTEL"};

  const std::vector<std::string> cand_list = emit_candidate_set(gen);
  const CandidateSet candidates(cand_list);
  cfg.C = candidates.size();

  // Find a seed offset whose batch exercises both branches.
  std::vector<VQAInstance> instances;
  std::vector<const VQAInstance*> batch;
  std::vector<TargetBundle> batch_targets;
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt == 16) throw NumericError("gradcheck: could not build a two-branch batch");
    gen.seed = mix_seed(seed, attempt);
    instances = generate(gen, cfg);
    batch.clear();
    batch_targets.clear();
    bool has_cls = false, has_ptr = false;
    for (const auto& inst : instances) {
      TargetBundle t = build_targets(inst, candidates, cfg.T, cfg.M);
      if (t.eliminated) continue;
      has_cls = has_cls || t.g == 1;
      has_ptr = has_ptr || t.g == 0;
      batch.push_back(&inst);
      batch_targets.push_back(std::move(t));
    }
    if (has_cls && has_ptr) break;
  }

  Model model(cfg, candidates.size());

  std::vector<int> flags;
  int valid_pairs = 0;
  for (const auto& t : batch_targets) {
    flags.push_back(t.g);
    if (t.g == 0) valid_pairs += t.valid_steps;
  }
  const int n = static_cast<int>(batch.size());
  double omega_cls = 0.0, omega_ptr = 0.0;
  branch_weights(flags, &omega_cls, &omega_ptr);

  const auto total_loss_value = [&]() {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      Tape tape;
      const Model::Bindings bindings = model.bind(tape, /*requires_grad=*/false);
      const Tape::NodeId loss = build_instance_loss(
          tape, model, bindings, *batch[static_cast<std::size_t>(i)],
          batch_targets[static_cast<std::size_t>(i)], omega_cls, omega_ptr, n, valid_pairs,
          std::nullopt, nullptr);
      total += tape.val(loss)(0, 0);
    }
    return total;
  };

  // analytic gradients
  std::vector<Mat> grads;
  for (int i = 0; i < model.params().size(); ++i) {
    const Mat& p = model.params().value(i);
    grads.push_back(Mat::Zero(p.rows(), p.cols()));
  }
  for (int i = 0; i < n; ++i) {
    Tape tape;
    const Model::Bindings bindings = model.bind(tape, /*requires_grad=*/true);
    const Tape::NodeId loss = build_instance_loss(
        tape, model, bindings, *batch[static_cast<std::size_t>(i)],
        batch_targets[static_cast<std::size_t>(i)], omega_cls, omega_ptr, n, valid_pairs,
        std::nullopt, nullptr);
    tape.backward(loss);
    for (int p = 0; p < model.params().size(); ++p) {
      const Tape::NodeId leaf = bindings.leaf_of_param[static_cast<std::size_t>(p)];
      if (tape.has_grad(leaf)) grads[static_cast<std::size_t>(p)] += tape.grad(leaf);
    }
  }

  GradCheckReport report;
  Rng pick_rng(mix_seed(seed, 0x6664ULL));
  std::set<std::string> groups;
  constexpr int kSamplesPerTensor = 12;

  for (int p = 0; p < model.params().size(); ++p) {
    NamedTensor& tensor = model.params().tensor(p);
    GradCheckEntry entry;
    entry.tensor = tensor.name;
    entry.group = param_group(tensor.name);
    groups.insert(entry.group);

    const int numel = static_cast<int>(tensor.value.size());
    const int samples = std::min(kSamplesPerTensor, numel);
    for (int s = 0; s < samples; ++s) {
      const int j = samples == numel ? s : pick_rng.uniform_int(0, numel - 1);
      double* data = tensor.value.data();
      const double original = data[j];
      const double h = 1e-5 * std::max(1.0, std::abs(original));
      data[j] = original + h;
      const double up = total_loss_value();
      data[j] = original - h;
      const double down = total_loss_value();
      data[j] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[static_cast<std::size_t>(p)].data()[j];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.tensors.push_back(std::move(entry));
  }

  report.groups_covered.assign(groups.begin(), groups.end());
  std::set<std::string> expected = {"embedding", "classifier", "pointer", "gating"};
  if (cfg.num_layers > 0) expected.insert("fusion");
  report.pass = groups == expected && report.max_rel_error < 1e-4;
  return report;
}

}  // namespace dualroute
