// End-to-end acceptance checks, one verdict line each. Expects the path to
// the unistack CLI binary as argv[1] (used by the fault-injection check).
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "unistack/experiments.hpp"
#include "unistack/migration.hpp"

using namespace unistack;

namespace {

int failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

void verdict(const char* name, bool ok, double secs, double budget,
             const std::string& detail = "") {
  bool pass = ok && (budget <= 0 || secs < budget);
  if (!pass) ++failures;
  std::printf("%s: %s (%.1fs)%s%s\n", pass ? "PASS" : "FAIL", name, secs,
              detail.empty() ? "" : " ", detail.c_str());
  std::fflush(stdout);
}

// 1. Transformation-free migration over 200 random programs.
void check_uniform_window() {
  Timer t;
  UniformVerifyResult r = verify_uniform(0, 199);
  std::string detail = std::to_string(r.migrations) + " migrations over " +
                       std::to_string(r.seeds) + " seeds";
  if (!r.ok()) detail = r.failures.front();
  verdict("uniform layouts, seeds 0..199", r.ok(), t.seconds(), 120.0, detail);
}

// 2. Stack transformation there and back is byte-exact.
void check_round_trip() {
  Timer t;
  bool ok = true;
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    TargetContext a = make_target(p, x86like(), default_convention(x86like()));
    TargetContext b = make_target(p, armlike(), default_convention(armlike()));
    RunResult ref = run(a.low.prog, k.inputs);
    for (std::uint64_t h = 1; h <= ref.metrics.equivalence_points_hit; ++h) {
      PauseResult pr = run_until_point(a.low.prog, k.inputs, stop_at_hit(h));
      if (pr.finished) {
        ok = false;
        continue;
      }
      StackSnapshot s = capture_snapshot(pr.state, a.low.prog, a.meta);
      StackSnapshot back =
          transform_stack(transform_stack(s, a.meta, b.meta).snapshot, b.meta,
                          a.meta)
              .snapshot;
      ok = ok && back == s &&
           snapshot_to_binary(back) == snapshot_to_binary(s);
    }
  }
  verdict("transformation round trip is byte-exact", ok, t.seconds(), 0);
}

// 3. Transform-mode migration preserves semantics at every equivalence
//    point, in both directions, on every kernel.
void check_semantics() {
  Timer t;
  bool ok = true;
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    TargetContext a = make_target(p, x86like(), default_convention(x86like()));
    TargetContext b = make_target(p, armlike(), default_convention(armlike()));
    RegisterMap map = positional_register_map(a.isa, b.isa);
    RunResult ref = run(a.low.prog, k.inputs);
    for (std::uint64_t h = 1; h <= ref.metrics.equivalence_points_hit; ++h) {
      MigrationOptions opts;
      opts.stop_at_hit = h;
      opts.inputs = k.inputs;
      for (auto [src, dst] : {std::pair<const TargetContext*,
                                        const TargetContext*>{&a, &b},
                              {&b, &a}}) {
        MigrationReport r = migrate(p, *src, *dst, map, opts);
        ok = ok && r.taken && r.semantic_ok && r.exit_value == ref.exit_value &&
             r.output == ref.output;
      }
    }
  }
  verdict("migration preserves semantics at every point", ok, t.seconds(), 0);
}

// 4. Transformation cost is exactly alpha*n over n in 1..100, with alpha
//    affine in the live count.
void check_scaling() {
  Timer t;
  ScaleResult r = transform_scaling({6, 9, 12}, 100);
  bool ok = r.rows.size() == 300;
  std::map<int, std::uint64_t> alpha;
  for (const auto& row : r.rows)
    if (row.frames == 1) alpha[row.k] = row.op_count;
  ok = ok && alpha.size() == 3;
  for (const auto& row : r.rows)
    ok = ok && row.op_count ==
                   alpha[row.k] * static_cast<std::uint64_t>(row.frames);
  ok = ok && alpha[9] - alpha[6] == alpha[12] - alpha[9] &&
       alpha[9] > alpha[6];
  std::string detail = "alpha = " + std::to_string(alpha[6]) + "/" +
                       std::to_string(alpha[9]) + "/" +
                       std::to_string(alpha[12]) + " for k = 6/9/12";
  verdict("transformation cost is linear", ok, t.seconds(), 30.0, detail);
}

// 5. Register-depth sweep: monotone spills, zero overhead whenever the
//    pressure fits, finite overhead at 17 vs 32 registers.
void check_sweep() {
  Timer t;
  bool ok = true;

  const KernelDef& lo = kernel_by_name("stencil");
  SweepResult sl = sweep_registers(kernel_program(lo.name), lo.name, lo.inputs);
  for (const auto& row : sl.rows)
    ok = ok && row.spill_slots == 0 && row.overhead_pct == 0.0 &&
         row.no_spill_expected && row.exit_value == sl.rows[0].exit_value;

  const KernelDef& hi = kernel_by_name("high_pressure");
  SweepResult sh = sweep_registers(kernel_program(hi.name), hi.name, hi.inputs);
  double at17 = -1.0;
  for (std::size_t i = 0; i < sh.rows.size(); ++i) {
    const SweepRow& row = sh.rows[i];
    if (i > 0) ok = ok && row.spill_slots <= sh.rows[i - 1].spill_slots;
    if (row.no_spill_expected)
      ok = ok && row.spill_slots == 0 && row.overhead_pct == 0.0;
    ok = ok && row.overhead_pct >= 0.0 && row.exit_value == sh.rows[0].exit_value;
    if (row.regs == 17) at17 = row.overhead_pct;
  }
  ok = ok && sh.rows.back().overhead_pct == 0.0;
  ok = ok && at17 > 0.0 && at17 < 1e6;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "17-vs-32 overhead %.1f%%", at17);
  verdict("register-depth sweep", ok, t.seconds(), 60.0, buf);
}

// 6. Allocator within two spills of the exhaustive minimum on a 50-program
//    corpus of functions with at most 12 values.
void check_allocator() {
  Timer t;
  bool ok = true;
  int programs = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    cfg.function_count = {1, 2};
    cfg.call_depth = {1, 2};
    cfg.live_pressure = {2, 7};
    cfg.loop_iters = {2, 3};
    Program p = generate_program(cfg);
    ++programs;
    for (const auto& isa : {armlike_n(8), armlike_n(16)}) {
      CallingConvention cc = default_convention(isa);
      std::set<int> alloc;
      for (int r : allocatable_registers(isa)) alloc.insert(r);
      int callee = 0;
      for (int r : cc.callee_saved)
        if (alloc.count(r)) ++callee;
      for (const auto& f : p.functions) {
        LiveInfo li = liveness(f);
        int best =
            oracles::min_spills(f, li, static_cast<int>(alloc.size()), callee);
        if (best < 0) continue;
        AllocationResult ar = allocate_registers(f, isa, cc, li);
        int spilled = 0;
        for (const auto& [v, loc] : ar.assignment)
          if (loc.kind == Location::Kind::Slot) ++spilled;
        ok = ok && spilled >= best && spilled <= best + 2;
        ++checked;
      }
    }
  }
  ok = ok && programs == 50 && checked >= 50;
  verdict("allocator near the exhaustive minimum", ok, t.seconds(), 60.0,
          std::to_string(checked) + " functions checked");
}

// 7. The injected convention fault is reported as a convention divergence on
//    every kernel, and the CLI exits with status 1.
void check_fault(const char* cli) {
  Timer t;
  FaultCheckResult r = verify_convention_fault();
  bool ok = r.all_detected() && r.rows.size() == kernel_suite().size();
  for (const auto& row : r.rows)
    ok = ok && row.diverged && row.convention_cause;

  bool cli_ok = false;
  if (cli) {
    std::string cmd = std::string("\"") + cli +
                      "\" verify-uniform --inject-fault convention "
                      ">/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    cli_ok = WIFEXITED(rc) && WEXITSTATUS(rc) == 1;
  }
  verdict("convention fault detected on every kernel", ok && cli_ok,
          t.seconds(), 0, cli_ok ? "" : "CLI exit status mismatch");
}

}  // namespace

int main(int argc, char** argv) {
  const char* cli = argc > 1 ? argv[1] : nullptr;
  check_uniform_window();
  check_round_trip();
  check_semantics();
  check_scaling();
  check_sweep();
  check_allocator();
  check_fault(cli);
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures ? 1 : 0;
}
