// Experiment harness: the fixed kernel suite, the recursion grid for
// transform scaling, the register-depth sweep and the uniform-layout
// verifier with its convention-fault check.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unistack/migration.hpp"

namespace unistack {

struct KernelDef {
  std::string name;
  std::string text;                  // IR source
  std::vector<std::int64_t> inputs;  // canonical entry arguments
};

// Six fixed programs spanning loops, recursion, register pressure, call
// chains and local traffic. Every kernel keeps its entry parameter live at
// the first equivalence point.
const std::vector<KernelDef>& kernel_suite();
Program kernel_program(const std::string& name);
const KernelDef& kernel_by_name(const std::string& name);

// Self-recursive program with exactly k live values at every call site and
// at the base-case equivalence point. Entry input n-1 pauses with exactly
// n frames on the stack.
Program recursion_chain(int k);

// ---- register-depth sweep ----

struct SweepRow {
  int regs = 0;
  int allocatable = 0;
  std::uint64_t spill_slots = 0;  // static, summed over functions
  std::uint64_t spill_loads = 0;  // dynamic
  std::uint64_t spill_stores = 0;
  std::uint64_t dynamic_instructions = 0;
  double overhead_pct = 0.0;  // vs the widest configuration
  std::int64_t exit_value = 0;
  bool no_spill_expected = false;  // pressure and call-crossing fit the file
};

struct SweepResult {
  std::string program;
  std::vector<SweepRow> rows;
};

SweepResult sweep_registers(const Program& p, const std::string& label,
                            const std::vector<std::int64_t>& inputs,
                            int regs_lo = 4, int regs_hi = 32,
                            const LowerOptions& lopts = {});

// ---- transform scaling ----

struct ScaleRow {
  int k = 0;
  int frames = 0;
  std::uint64_t values_moved = 0;
  std::uint64_t callee_saved_moved = 0;
  std::uint64_t op_count = 0;
  std::uint64_t bytes_written = 0;
};

struct ScaleResult {
  std::vector<ScaleRow> rows;
};

// Captures the recursion chain at its base case for every frame count in
// [1, max_frames] and transforms the stack between the two native targets.
ScaleResult transform_scaling(const std::vector<int>& ks, int max_frames);

// ---- uniform verification ----

struct UniformVerifyResult {
  std::uint64_t seeds = 0;
  std::uint64_t migrations = 0;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

// For every seed: generates a program, lowers it for both sides of the
// uniform ABI, requires an empty layout diff, then migrates at every
// dynamic equivalence point in both directions without transformation and
// checks outputs against uninterrupted runs.
UniformVerifyResult verify_uniform(std::uint64_t seed_lo,
                                   std::uint64_t seed_hi,
                                   const GeneratorConfig& base = {},
                                   const LowerOptions& lopts = {});

struct FaultCheckRow {
  std::string kernel;
  bool diverged = false;
  bool convention_cause = false;
  std::string first;  // first convention-caused divergence, for the report
};

struct FaultCheckResult {
  std::vector<FaultCheckRow> rows;
  bool all_detected() const;
};

// Lowers each kernel once with the shared convention and once with the
// injected argument-order fault; the diff must flag a convention divergence
// on every kernel.
FaultCheckResult verify_convention_fault(const LowerOptions& lopts = {});

// ---- reports ----

std::string sweep_to_csv(const SweepResult& r);
std::string sweep_to_json(const SweepResult& r);
std::string scale_to_csv(const ScaleResult& r);
std::string scale_to_json(const ScaleResult& r);
std::string uniform_to_json(const UniformVerifyResult& r, std::uint64_t seed_lo,
                            std::uint64_t seed_hi);
std::string fault_to_json(const FaultCheckResult& r);

}  // namespace unistack
