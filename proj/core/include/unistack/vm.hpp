// Machine-program interpreter: simulated register file and stack, dynamic
// metrics, and snapshot capture/restore at equivalence points.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "unistack/codegen.hpp"

namespace unistack {

struct RunMetrics {
  std::uint64_t dynamic_instruction_count = 0;
  std::uint64_t dynamic_load_count = 0;
  std::uint64_t dynamic_store_count = 0;
  std::uint64_t dynamic_spill_load_count = 0;
  std::uint64_t dynamic_spill_store_count = 0;
  std::uint64_t max_call_depth = 0;
  std::uint64_t equivalence_points_hit = 0;
};

struct VmOptions {
  std::size_t stack_size = 1 << 20;
  bool checked = true;  // alignment and invariant asserts per step
};

struct VmError : std::runtime_error {
  std::string function;
  std::size_t pc = 0;
  VmError(const std::string& msg, std::string function, std::size_t pc);
};

struct MachineState {
  std::vector<std::uint64_t> regs;
  std::vector<std::uint8_t> stack;
  std::uint64_t sp = 0, fp = 0;
  std::size_t func = 0, pc = 0;
  bool at_point = false;  // pc rests on an equivalence point; resume skips it
  bool halted = false;
  std::int64_t exit_value = 0;
  std::uint64_t depth = 1;  // current activation count
  std::string output;
  RunMetrics metrics;
};

struct RunResult {
  std::int64_t exit_value = 0;
  std::string output;
  RunMetrics metrics;
};

// Called on every equivalence point with the cumulative hit count, the
// function name and the point id; returning true pauses execution there.
using StopPredicate =
    std::function<bool(std::uint64_t, const std::string&, std::int64_t)>;

StopPredicate stop_at_hit(std::uint64_t k);  // k-th hit; 0 never stops

RunResult run(const MachineProgram& mp, const std::vector<std::int64_t>& inputs,
              const VmOptions& opts = {});

struct PauseResult {
  bool finished = false;
  MachineState state;  // valid when paused
  RunResult result;    // valid when finished
};

PauseResult run_until_point(const MachineProgram& mp,
                            const std::vector<std::int64_t>& inputs,
                            const StopPredicate& stop,
                            const VmOptions& opts = {});

// Continues a paused or restored state to completion.
RunResult resume(MachineState state, const MachineProgram& mp,
                 const VmOptions& opts = {});

struct ActivationRecord {
  std::string function;
  SiteKind site = SiteKind::EqPoint;
  std::int64_t point = 0;  // eqpoint id, or IR call index for outer frames
  std::map<std::string, std::uint64_t> bindings;  // live value id -> value
  std::map<int, std::uint64_t> saved_callee;      // canonical, see capture
  std::int64_t frame_size = 0;

  bool operator==(const ActivationRecord&) const = default;
};

struct StackSnapshot {
  std::vector<ActivationRecord> records;  // outermost first
  bool operator==(const StackSnapshot&) const = default;
};

// Reads the live execution state through the frame metadata. Saved
// callee-saved values are recorded canonically: reconstructed from the outer
// frames' register bindings over a zeroed register file, so that identical
// live state always serializes to identical bytes.
StackSnapshot capture_snapshot(const MachineState& state,
                               const MachineProgram& mp, const MetaIndex& meta);

// Rebuilds a machine state whose resumed execution is indistinguishable from
// never having paused.
MachineState restore_snapshot(const StackSnapshot& snap,
                              const MachineProgram& mp, const MetaIndex& meta,
                              const VmOptions& opts = {});

// Recomputes every record's saved_callee map canonically from the bindings
// and the given metadata (shared by capture and stack transformation).
void recompute_saved_callee(StackSnapshot& snap, const MetaIndex& meta);

std::string snapshot_to_json(const StackSnapshot& snap);
StackSnapshot snapshot_from_json(const std::string& text);
std::vector<std::uint8_t> snapshot_to_binary(const StackSnapshot& snap);
StackSnapshot snapshot_from_binary(const std::vector<std::uint8_t>& bytes);

}  // namespace unistack
