// Lowering pipeline: liveness analysis, linear-scan register allocation,
// frame layout and per-equivalence-point live-value metadata.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "unistack/ir.hpp"
#include "unistack/isa.hpp"

namespace unistack {

struct CodegenError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-function liveness. Values get dense ids: parameters first (in order),
// then remaining values by first definition.
struct LiveInfo {
  std::vector<std::string> value_names;        // id -> name
  std::map<std::string, int> value_ids;        // name -> id
  std::vector<std::set<int>> live_in;          // per instruction
  std::vector<std::set<int>> live_out;         // per instruction
  std::vector<int> def_at;                     // instruction -> defined id, -1
  int max_pressure = 0;  // max over instructions of |live_in| and |live_out|
};

LiveInfo liveness(const Function& f);

struct Location {
  enum class Kind { Reg, Slot } kind = Kind::Reg;
  int reg = -1;
  int slot_id = -1;          // spill slot, before layout
  std::int64_t fp_offset = 0;  // filled by compute_frame_layout
  bool operator==(const Location&) const = default;
};

struct AllocationResult {
  std::map<int, Location> assignment;  // value id -> location (whole lifetime)
  int spill_slot_count = 0;
  int static_spill_store_count = 0;  // definitions of spilled values
  int static_spill_load_count = 0;   // uses of spilled values
  std::vector<bool> crosses_call;    // value id -> live across some call
};

// Linear scan over conservative whole-intervals with furthest-end eviction.
// Values live across a call take callee-saved registers or spill; everything
// else prefers caller-saved registers in argument order.
AllocationResult allocate_registers(const Function& f, const ISADescriptor& isa,
                                    const CallingConvention& cc,
                                    const LiveInfo& live);

struct FrameLayout {
  std::vector<int> saved_callee_regs;          // ascending index
  std::map<int, std::int64_t> callee_saved_offsets;  // reg -> FP offset
  std::map<int, std::int64_t> spill_offsets;         // slot id -> FP offset
  std::map<std::string, std::int64_t> local_offsets;
  std::int64_t saved_fp_offset = 0;  // [FP]
  std::int64_t ra_offset = 8;        // [FP + 8]
  int outgoing_bytes = 0;            // overflow-argument area at SP
  int frame_size_bytes = 0;          // multiple of 16, includes RA + saved FP
};

// Canonical layout: callee-saved save area (by ascending register index),
// spill slots (by ascending slot id), locals (declaration order), outgoing
// overflow arguments, padded to 16 bytes.
FrameLayout compute_frame_layout(const Function& f,
                                 const AllocationResult& alloc,
                                 const CallingConvention& cc,
                                 int max_outgoing_args);

enum class SiteKind { EqPoint, CallSite };

struct FrameDescriptor {
  std::string function;
  SiteKind site = SiteKind::EqPoint;
  std::int64_t point = 0;  // eqpoint id, or IR call index for call sites
  std::map<std::string, Location> live_values;
  int frame_size_bytes = 0;
  std::map<int, std::int64_t> callee_saved_layout;  // reg -> FP offset
  std::int64_t ra_offset = 8;
  std::int64_t saved_fp_offset = 0;
};

// ---- machine code ----

struct MachineOperand {
  enum class Kind { None, Reg, Imm, SlotFP, SlotSP } kind = Kind::None;
  int reg = -1;
  std::int64_t value = 0;   // immediate
  std::int64_t offset = 0;  // FP- or SP-relative
  bool spill = false;       // memory access belongs to spill traffic

  static MachineOperand make_reg(int r) {
    MachineOperand o;
    o.kind = Kind::Reg;
    o.reg = r;
    return o;
  }
  static MachineOperand make_imm(std::int64_t v) {
    MachineOperand o;
    o.kind = Kind::Imm;
    o.value = v;
    return o;
  }
  static MachineOperand slot_fp(std::int64_t off, bool spill = false) {
    MachineOperand o;
    o.kind = Kind::SlotFP;
    o.offset = off;
    o.spill = spill;
    return o;
  }
  static MachineOperand slot_sp(std::int64_t off, bool spill = false) {
    MachineOperand o;
    o.kind = Kind::SlotSP;
    o.offset = off;
    o.spill = spill;
    return o;
  }
  bool is_mem() const {
    return kind == Kind::SlotFP || kind == Kind::SlotSP;
  }
};

enum class MOp {
  Mov,      // dst <- a
  Alu,      // dst <- a op b
  CmpSet,   // dst <- (a pred b) ? 1 : 0
  Jump,     // to target_a
  Branch,   // a != 0 ? target_a : target_b
  CallFn,   // call functions[target_a]; ir id in point
  Ret,
  Enter,    // prologue: push FP, allocate frame, save callee-saved
  Leave,    // epilogue
  EqPt,     // equivalence point; id in point
  PrintVal, // print a
};

struct MachineInstr {
  MOp op = MOp::Mov;
  Opcode alu = Opcode::Add;  // Alu
  CmpPred pred = CmpPred::Eq;
  MachineOperand dst, a, b;
  std::size_t target_a = 0, target_b = 0;  // resolved instruction indices
  std::int64_t point = 0;                  // eq id / ir call index
};

struct MachineFunction {
  std::string name;
  std::size_t arity = 0;
  std::vector<MachineInstr> code;
  FrameLayout layout;
  std::map<std::int64_t, std::size_t> eq_index;    // eq id -> instr index
  std::map<std::int64_t, std::size_t> call_index;  // ir call idx -> instr index
};

struct MachineProgram {
  std::vector<MachineFunction> functions;
  ISADescriptor isa;
  CallingConvention cc;
  std::size_t entry_index = 0;

  const MachineFunction& entry() const { return functions[entry_index]; }
  std::size_t function_index(const std::string& name) const;
};

struct LowerOptions {
  bool load_elim = false;
};

struct Lowered {
  MachineProgram prog;
  std::vector<FrameDescriptor> meta;
};

Lowered lower(const Program& p, const ISADescriptor& isa,
              const CallingConvention& cc, const LowerOptions& opts = {});

// Metadata index keyed by (function, site kind, point id).
class MetaIndex {
 public:
  MetaIndex() = default;
  explicit MetaIndex(const std::vector<FrameDescriptor>& meta);
  const FrameDescriptor* find(const std::string& fn, SiteKind k,
                              std::int64_t point) const;
  const FrameDescriptor& at(const std::string& fn, SiteKind k,
                            std::int64_t point) const;

 private:
  std::map<std::tuple<std::string, int, std::int64_t>, const FrameDescriptor*>
      index_;
};

// Canonical metadata sidecar (*.meta.json): sorted keys, fixed formatting.
std::string meta_to_json(const std::vector<FrameDescriptor>& meta);
std::vector<FrameDescriptor> meta_from_json(const std::string& text);

// Machine program dump (*.mprog.json).
std::string mprog_to_json(const MachineProgram& mp);

}  // namespace unistack
