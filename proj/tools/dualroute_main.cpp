// Command-line entry points for the dual-routing VQA reference pipeline:
// dataset generation, training, prediction, evaluation, and the gradient
// self-check.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dualroute/common.hpp"
#include "dualroute/harness.hpp"
#include "dualroute/kvconfig.hpp"
#include "dualroute/model.hpp"
#include "dualroute/schema.hpp"
#include "dualroute/synthgen.hpp"
#include "dualroute/targets.hpp"

namespace fs = std::filesystem;
using namespace dualroute;

namespace {

// Exit codes per error class.
constexpr int kExitIo = 3;
constexpr int kExitParse = 4;
constexpr int kExitSchema = 5;
constexpr int kExitConfig = 6;
constexpr int kExitShape = 7;
constexpr int kExitNumeric = 8;

int run_gen_data(const std::string& config_path, const std::string& out_dir) {
  const KvFile kv = KvFile::parse_file(config_path);
  const GenConfig gen = GenConfig::from_kv(kv);
  const ModelConfig dims = ModelConfig::from_kv(kv);
  fs::create_directories(out_dir);

  const std::vector<VQAInstance> instances = generate(gen, dims);
  const std::string data_path = (fs::path(out_dir) / "data.jsonl").string();
  save_dataset(instances, data_path);

  const CandidateSet candidates(emit_candidate_set(gen));
  const std::string cand_path = (fs::path(out_dir) / "candidates.txt").string();
  candidates.save(cand_path);

  std::cout << "wrote " << instances.size() << " instances to " << data_path << "\n"
            << "wrote " << candidates.size() << " candidate answers to " << cand_path << "\n";
  return 0;
}

int run_train(const std::string& data, const std::string& candidates,
              const std::string& config_path, const std::string& out_dir) {
  const ModelConfig config = ModelConfig::from_kv(KvFile::parse_file(config_path));
  const TrainResult result = train(data, candidates, config, out_dir);
  for (const auto& e : result.epoch_logs) {
    std::printf("epoch %3d  l_cls %.6f  l_ptr %.6f  l_gate %.6f  total %.6f\n", e.epoch,
                e.mean.l_cls, e.mean.l_ptr, e.mean.l_gate, e.mean.total);
  }
  std::cout << "used " << result.n_used << "/" << result.n_total << " instances ("
            << result.n_eliminated << " eliminated)\n"
            << "final checkpoint: " << result.final_checkpoint << "\n";
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& data, const std::string& out,
                const std::string& route_mode) {
  RouteOverride mode = RouteOverride::kGate;
  if (route_mode == "cls") mode = RouteOverride::kClassifierOnly;
  else if (route_mode == "ptr") mode = RouteOverride::kPointerOnly;
  else if (route_mode != "gate") throw ConfigError("--route must be gate, cls, or ptr");
  const PredictionFile preds = predict(ckpt, data, mode);
  save_predictions(preds, out);
  std::cout << "wrote " << preds.predictions.size() << " predictions to " << out << "\n";
  return 0;
}

int run_eval(const std::string& pred, const std::string& data, const std::string& out) {
  const PredictionFile preds = load_predictions(pred);
  const EvalReport report = evaluate(preds, data);
  save_report(report, out);
  std::printf("overall %.4f | yes/no %.4f number %.4f other %.4f | ocr %.4f cand %.4f | "
              "gate acc %.4f f1 %.4f | n=%d\n",
              report.overall_accuracy, report.yes_no, report.number, report.other,
              report.ocr_token, report.candidate_set, report.gating_accuracy,
              report.gating_f1, report.n_instances);
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  const GradCheckReport report = gradcheck(gradcheck_default_config(), seed);
  for (const auto& entry : report.tensors) {
    std::printf("%-28s %-10s max_rel_err %.3e\n", entry.tensor.c_str(),
                entry.group.c_str(), entry.max_rel_error);
  }
  std::string groups;
  for (const auto& g : report.groups_covered) groups += g + " ";
  std::printf("groups covered: %s\n", groups.c_str());
  std::printf("max relative error: %.3e -> %s\n", report.max_rel_error,
              report.pass ? "PASS" : "FAIL");
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-routing VQA reference pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, candidates_path, ckpt_path, pred_path;
  std::string route_mode = "gate";
  std::uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", data_path, "dataset file")->required();
  tr->add_option("--candidates", candidates_path, "candidate set file")->required();
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--out", out_path, "output directory")->required();

  auto* pr = app.add_subcommand("predict", "predict answers with a checkpoint");
  pr->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  pr->add_option("--data", data_path, "dataset file")->required();
  pr->add_option("--out", out_path, "predictions file")->required();
  pr->add_option("--route", route_mode, "routing override: gate|cls|ptr");

  auto* ev = app.add_subcommand("eval", "evaluate predictions");
  ev->add_option("--pred", pred_path, "predictions file")->required();
  ev->add_option("--data", data_path, "dataset file")->required();
  ev->add_option("--out", out_path, "report file")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc->add_option("--seed", seed, "random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(config_path, out_path);
    if (tr->parsed()) return run_train(data_path, candidates_path, config_path, out_path);
    if (pr->parsed()) return run_predict(ckpt_path, data_path, out_path, route_mode);
    if (ev->parsed()) return run_eval(pred_path, data_path, out_path);
    if (gc->parsed()) return run_gradcheck(seed);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitShape;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
