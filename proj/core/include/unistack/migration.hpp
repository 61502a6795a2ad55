// Cross-target migration: metadata-driven stack transformation, layout
// diffing, and the end-to-end migrate driver for both the transform baseline
// and the transformation-free uniform mode.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unistack/codegen.hpp"
#include "unistack/vm.hpp"

namespace unistack {

struct MigrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TransformStats {
  std::uint64_t frames_processed = 0;
  std::uint64_t values_moved = 0;
  std::uint64_t callee_saved_moved = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t op_count = 0;  // values + callee-saved + fixed per-frame work

  bool operator==(const TransformStats&) const = default;
};

// Fixed bookkeeping operations per frame: relink saved FP, rewrite the
// return address, recompute the frame extent.
inline constexpr std::uint64_t kPerFrameFixedOps = 3;

struct TransformResult {
  StackSnapshot snapshot;
  TransformStats stats;
};

// Rewrites a snapshot taken under `src` metadata into one valid under `dst`
// metadata. Bindings are carried by value id; saved callee-saved registers
// are recomputed canonically for the destination layouts, so transforming
// there and back reproduces the source snapshot byte for byte.
TransformResult transform_stack(const StackSnapshot& snap,
                                const MetaIndex& src, const MetaIndex& dst);

struct LayoutDivergence {
  std::string function;
  std::string site;  // "eq" or "call"
  std::int64_t point = 0;
  std::string value;  // value id, or "<frame-size>" / "<callee-saved>"
  std::string loc_a, loc_b;
  std::string cause;  // convention | register-depth | spill-order | style
                      // | structure
};

struct LayoutDiff {
  std::vector<LayoutDivergence> divergences;
  bool empty() const { return divergences.empty(); }
};

// Structural comparison of two metadata sets for the same program. An empty
// diff certifies the layouts are identical modulo the register map, which is
// exactly the condition for transformation-free migration. The program is
// consulted only to tell parameters from temporaries.
LayoutDiff diff_layout(const Program& p,
                       const std::vector<FrameDescriptor>& meta_a,
                       const std::vector<FrameDescriptor>& meta_b,
                       const RegisterMap& map);

std::string diff_to_json(const LayoutDiff& diff);

// A compiled target: machine program, metadata and its index. The index
// points into `low.meta`, so the struct is move-only.
struct TargetContext {
  ISADescriptor isa;
  CallingConvention cc;
  Lowered low;
  MetaIndex meta;

  TargetContext() = default;
  TargetContext(const TargetContext&) = delete;
  TargetContext& operator=(const TargetContext&) = delete;
  TargetContext(TargetContext&&) = default;
  TargetContext& operator=(TargetContext&&) = default;
};

TargetContext make_target(const Program& p, const ISADescriptor& isa,
                          const CallingConvention& cc,
                          const LowerOptions& opts = {});

enum class MigrationMode { Transform, Uniform };

struct MigrationOptions {
  MigrationMode mode = MigrationMode::Transform;
  std::uint64_t stop_at_hit = 1;  // pause at the k-th equivalence point; 0 = never
  std::vector<std::int64_t> inputs;
  VmOptions vm;
};

struct MigrationReport {
  std::string src_isa, dst_isa;
  std::string mode;  // "transform" or "uniform"
  bool taken = false;  // false when the program finished before the stop hit
  std::uint64_t stop_hit = 0;
  TransformStats stats;
  double transform_ms = 0.0;
  std::int64_t exit_value = 0;
  std::string output;
  RunMetrics metrics;  // source-side metrics up to the pause plus the rest
  bool semantic_ok = false;  // matches an uninterrupted source-side run
};

// Runs on `src`, pauses at the requested equivalence point, moves the stack
// to `dst` (transforming it in transform mode, verifying an empty layout
// diff and copying it verbatim in uniform mode) and resumes to completion.
// Uniform mode throws MigrationError when the layouts diverge.
MigrationReport migrate(const Program& p, const TargetContext& src,
                        const TargetContext& dst, const RegisterMap& map,
                        const MigrationOptions& opts);

std::string report_to_json(const MigrationReport& r);

}  // namespace unistack
