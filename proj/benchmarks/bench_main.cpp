// Microbenchmarks for the hot paths: the fused forward pass at the
// desk-scale shape, OCR embedding, pointer scoring, and answer
// normalization.

#include <benchmark/benchmark.h>

#include "dualroute/harness.hpp"
#include "dualroute/model.hpp"
#include "dualroute/synthgen.hpp"
#include "dualroute/targets.hpp"

using namespace dualroute;

namespace {

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.d = 64;
  cfg.V = 20;
  cfg.E = 6;
  cfg.M = 8;
  cfg.T = 5;
  cfg.C = 16;
  cfg.num_layers = 4;
  cfg.num_heads = 4;
  cfg.D_ft = 32;
  cfg.D_p = 32;
  cfg.D_fr = 64;
  cfg.D_obj = 64;
  cfg.dropout = 0.0;
  return cfg;
}

struct BenchData {
  ModelConfig cfg = bench_config();
  GenConfig gen;
  std::vector<VQAInstance> instances;
  CandidateSet candidates;
  Model model;
  std::vector<TargetBundle> targets;

  BenchData() : gen(), candidates(), model(bench_config(), 16) {
    gen.n_instances = 32;
    gen.seed = 99;
    instances = generate(gen, cfg);
    candidates = CandidateSet(emit_candidate_set(gen));
    for (const auto& inst : instances) {
      targets.push_back(build_targets(inst, candidates, cfg.T, cfg.M));
    }
  }
};

BenchData& data() {
  static BenchData d;
  return d;
}

void BM_ForwardInference(benchmark::State& state) {
  BenchData& d = data();
  std::size_t i = 0;
  for (auto _ : state) {
    Tape tape;
    const Model::Bindings b = d.model.bind(tape, false);
    const auto out = d.model.forward(tape, b, d.instances[i % d.instances.size()], {}, 0, false);
    benchmark::DoNotOptimize(tape.val(out.g_hat)(0, 0));
    ++i;
  }
}
BENCHMARK(BM_ForwardInference);

void BM_ForwardBackward(benchmark::State& state) {
  BenchData& d = data();
  std::size_t i = 0;
  for (auto _ : state) {
    const std::size_t k = i % d.instances.size();
    Tape tape;
    const Model::Bindings b = d.model.bind(tape, true);
    const Tape::NodeId loss = build_instance_loss(
        tape, d.model, b, d.instances[k], d.targets[k], 0.5, 0.5, 1,
        std::max(1, d.targets[k].valid_steps), std::nullopt, nullptr);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.val(loss)(0, 0));
    ++i;
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_EmbedOcr(benchmark::State& state) {
  BenchData& d = data();
  const VQAInstance* with_ocr = nullptr;
  for (const auto& inst : d.instances) {
    if (inst.ocr_tokens.size() >= 3) {
      with_ocr = &inst;
      break;
    }
  }
  for (auto _ : state) {
    Tape tape;
    const Model::Bindings b = d.model.bind(tape, false);
    const MaskedNode ocr = embed_ocr(tape, with_ocr->ocr_tokens, b.feat, d.cfg.M);
    benchmark::DoNotOptimize(tape.val(ocr.node)(0, 0));
  }
}
BENCHMARK(BM_EmbedOcr);

void BM_PointerScores(benchmark::State& state) {
  BenchData& d = data();
  Tape tape;
  const Model::Bindings b = d.model.bind(tape, false);
  const Tape::NodeId z_ocr = tape.constant(Mat::Random(d.cfg.M, d.cfg.d));
  const Tape::NodeId z_dec = tape.constant(Mat::Random(d.cfg.T, d.cfg.d));
  for (auto _ : state) {
    Tape local;
    const Model::Bindings lb = d.model.bind(local, false);
    const Tape::NodeId y = pointer_scores(local, local.constant(tape.val(z_ocr)),
                                          local.constant(tape.val(z_dec)), lb.routing);
    benchmark::DoNotOptimize(local.val(y)(0, 0));
  }
}
BENCHMARK(BM_PointerScores);

void BM_Decode(benchmark::State& state) {
  BenchData& d = data();
  const VQAInstance* with_ocr = nullptr;
  for (const auto& inst : d.instances) {
    if (inst.ocr_tokens.size() >= 3) {
      with_ocr = &inst;
      break;
    }
  }
  for (auto _ : state) {
    const auto slots = d.model.decode(*with_ocr);
    benchmark::DoNotOptimize(slots.size());
  }
}
BENCHMARK(BM_Decode);

void BM_NormalizeAnswer(benchmark::State& state) {
  const std::string raw = "The Seven FLAMING lips-alley Signs!";
  for (auto _ : state) {
    benchmark::DoNotOptimize(normalize_answer(raw));
  }
}
BENCHMARK(BM_NormalizeAnswer);

void BM_VqaAccuracy(benchmark::State& state) {
  std::array<std::string, 10> humans;
  for (int i = 0; i < 10; ++i) humans[static_cast<std::size_t>(i)] = i < 4 ? "red" : "blue";
  for (auto _ : state) {
    benchmark::DoNotOptimize(vqa_accuracy("Red", humans));
  }
}
BENCHMARK(BM_VqaAccuracy);

}  // namespace

BENCHMARK_MAIN();
