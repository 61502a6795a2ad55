// Abstract target descriptions: register files, calling conventions, the
// one-to-one register map and the uniform-ABI construction.
#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace unistack {

enum class IsaStyle { CiscMemOperand, RiscLoadStore };

struct ISADescriptor {
  std::string name;
  IsaStyle style = IsaStyle::RiscLoadStore;
  int gpr_count = 0;  // includes the stack pointer
  std::vector<std::string> register_names;
  int stack_pointer = 0;
  int frame_pointer = 0;
  std::optional<int> platform_register;  // reserved, never allocatable
  int pointer_bits = 64;

  bool operator==(const ISADescriptor&) const = default;
};

struct CallingConvention {
  std::vector<int> arg_registers;  // in passing order
  int return_register = 0;
  std::set<int> callee_saved;  // includes the frame pointer
  std::set<int> caller_saved;
  int stack_alignment_bytes = 16;
  // Overflow arguments go on the stack, right to left, in 8-byte slots.

  bool operator==(const CallingConvention&) const = default;
};

struct RegisterMap {
  std::map<int, int> forward;   // A -> B
  std::map<int, int> backward;  // B -> A
  bool operator==(const RegisterMap&) const = default;
};

enum class MapDirection { AtoB, BtoA };

struct IsaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void validate_descriptor(const ISADescriptor& isa);
void validate_convention(const ISADescriptor& isa, const CallingConvention& cc);

// Presets. x86like: 17 GPRs, memory-operand style, no platform register.
// armlike: 32 GPRs, load/store style, platform register present.
// armlike-reduced: armlike cut down to 17 GPRs.
ISADescriptor x86like();
ISADescriptor armlike();
ISADescriptor armlike_reduced();
// armlike with an arbitrary register count in [4, 32]; the platform register
// is kept only when at least 8 GPRs are available.
ISADescriptor armlike_n(int gprs);
ISADescriptor preset_by_name(const std::string& name);

// Convention derived from the register file: up to 6 argument registers from
// the low caller-saved range, return in the first of them, and up to 5
// allocatable callee-saved registers at the top of the file.
CallingConvention default_convention(const ISADescriptor& isa);

// Mismatched-convention fault for verify-uniform: reverses the argument
// register order, which changes allocation order and therefore where
// parameters live.
CallingConvention inject_convention_fault(const CallingConvention& cc);

// Registers an allocator may use: everything except SP, FP and the platform
// register.
std::vector<int> allocatable_registers(const ISADescriptor& isa);

struct UniformAbi {
  ISADescriptor a, b;
  CallingConvention cc;
  RegisterMap map;
};

// Matches both register files to min(gpr) with identical SP/FP positions, a
// single shared convention and a total one-to-one register map. Styles are
// preserved; a platform register on either side is reserved on both.
UniformAbi make_uniform_abi(const ISADescriptor& a, const ISADescriptor& b);

int map_register(const RegisterMap& m, int reg, MapDirection dir);

// Partial index-wise map between two arbitrary descriptors: SP<->SP, FP<->FP
// and remaining registers paired by position. Used by the layout differ when
// the targets were not built with make_uniform_abi.
RegisterMap positional_register_map(const ISADescriptor& a,
                                    const ISADescriptor& b);

// JSON round trip for custom targets (isa.json).
std::string isa_to_json(const ISADescriptor& isa, const CallingConvention& cc);
std::pair<ISADescriptor, CallingConvention> isa_from_json(
    const std::string& text);

}  // namespace unistack
