#include <benchmark/benchmark.h>

#include "unistack/experiments.hpp"
#include "unistack/migration.hpp"

using namespace unistack;

namespace {

void BM_LowerKernel(benchmark::State& state) {
  const KernelDef& k = kernel_suite()[static_cast<std::size_t>(state.range(0))];
  Program p = parse_program(k.text);
  ISADescriptor isa = armlike();
  CallingConvention cc = default_convention(isa);
  for (auto _ : state) {
    Lowered low = lower(p, isa, cc);
    benchmark::DoNotOptimize(low.prog.functions.size());
  }
  state.SetLabel(k.name);
}
BENCHMARK(BM_LowerKernel)->DenseRange(0, 5);

void BM_RunKernel(benchmark::State& state) {
  const KernelDef& k = kernel_suite()[static_cast<std::size_t>(state.range(0))];
  Program p = parse_program(k.text);
  TargetContext t = make_target(p, armlike(), default_convention(armlike()));
  std::uint64_t instructions = 0;
  for (auto _ : state) {
    RunResult r = run(t.low.prog, k.inputs);
    instructions += r.metrics.dynamic_instruction_count;
    benchmark::DoNotOptimize(r.exit_value);
  }
  state.SetLabel(k.name);
  state.counters["instructions"] =
      benchmark::Counter(static_cast<double>(instructions),
                         benchmark::Counter::kIsRate);
}
BENCHMARK(BM_RunKernel)->DenseRange(0, 5);

void BM_TransformStack(benchmark::State& state) {
  int frames = static_cast<int>(state.range(0));
  Program p = recursion_chain(6);
  TargetContext a = make_target(p, x86like(), default_convention(x86like()));
  TargetContext b = make_target(p, armlike(), default_convention(armlike()));
  PauseResult pr = run_until_point(a.low.prog, {frames - 1}, stop_at_hit(1));
  StackSnapshot s = capture_snapshot(pr.state, a.low.prog, a.meta);
  for (auto _ : state) {
    TransformResult t = transform_stack(s, a.meta, b.meta);
    benchmark::DoNotOptimize(t.stats.op_count);
  }
  state.SetItemsProcessed(state.iterations() * frames);
}
BENCHMARK(BM_TransformStack)->RangeMultiplier(4)->Range(1, 256);

void BM_CaptureRestore(benchmark::State& state) {
  Program p = kernel_program("mixed");
  TargetContext t = make_target(p, armlike(), default_convention(armlike()));
  PauseResult pr = run_until_point(t.low.prog, kernel_by_name("mixed").inputs,
                                   stop_at_hit(1));
  for (auto _ : state) {
    StackSnapshot s = capture_snapshot(pr.state, t.low.prog, t.meta);
    MachineState m = restore_snapshot(s, t.low.prog, t.meta);
    benchmark::DoNotOptimize(m.sp);
  }
}
BENCHMARK(BM_CaptureRestore);

}  // namespace

BENCHMARK_MAIN();
