// Architecture-neutral integer IR: types, parser, printer, generator and
// the block-local load elimination pass.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace unistack {

enum class Opcode {
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Cmp,
  Branch,
  Jump,
  LoadLocal,
  StoreLocal,
  Call,
  Return,
  EqPoint,
  Print,
};

enum class CmpPred { Eq, Ne, Lt, Le, Gt, Ge };

const char* opcode_name(Opcode op);
const char* pred_name(CmpPred p);

// A source operand: either a virtual value id or a 64-bit literal.
struct Operand {
  bool is_imm = false;
  std::int64_t imm = 0;
  std::string id;

  static Operand value(std::string v) { return {false, 0, std::move(v)}; }
  static Operand literal(std::int64_t k) { return {true, k, {}}; }
  bool operator==(const Operand&) const = default;
};

struct Instruction {
  Opcode op{};
  std::string result;            // defined value id, empty if none
  CmpPred pred{};                // Cmp only
  std::vector<Operand> args;     // source operands
  std::string callee;            // Call
  std::string local;             // LoadLocal / StoreLocal
  std::string label_a, label_b;  // Jump target / Branch taken, fallthrough
  std::int64_t eq_id = 0;        // EqPoint

  bool operator==(const Instruction&) const = default;
};

struct LocalDecl {
  std::string name;
  std::uint32_t size = 8;  // bytes, multiple of 8
  bool operator==(const LocalDecl&) const = default;
};

struct Function {
  std::string name;
  std::vector<std::string> params;
  std::vector<LocalDecl> locals;
  std::vector<Instruction> body;
  // Labels in declaration order; each labels the instruction at `index`
  // (which may be body.size() for a trailing label).
  std::vector<std::pair<std::string, std::size_t>> labels;

  bool operator==(const Function&) const = default;
  std::optional<std::size_t> label_index(const std::string& l) const;
};

struct Program {
  std::vector<Function> functions;
  std::string entry;  // name of the entry function

  bool operator==(const Program&) const = default;
  const Function* find(const std::string& name) const;
  std::size_t function_index(const std::string& name) const;
};

struct ParseError : std::runtime_error {
  int line, column;
  ParseError(const std::string& msg, int line, int column);
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parses the textual IR grammar (docs/ir-grammar.md). Throws ParseError with
// line/column on malformed input and ValidationError on semantic problems
// (duplicate functions, undefined call targets, use before definition, ...).
Program parse_program(const std::string& text);

// Canonical text form; parse_program(print_program(p)) == p.
std::string print_program(const Program& p);

void validate_program(const Program& p);

struct Range {
  std::uint32_t lo = 1, hi = 1;
  bool operator==(const Range&) const = default;
};

struct GeneratorConfig {
  std::uint64_t seed = 0;
  Range function_count{2, 4};
  Range call_depth{2, 3};
  Range live_pressure{4, 10};  // max simultaneously live values per function
  Range loop_iters{2, 4};
};

// Deterministic: identical config yields byte-identical program text.
Program generate_program(const GeneratorConfig& cfg);

// Block-local forwarding of local slots: a load-local whose slot content is
// already known (from a prior store or load of the same local in the block)
// is deleted and its single-definition result rewritten to the known value.
Program eliminate_redundant_loads(const Program& p);

std::size_t count_load_locals(const Program& p);

}  // namespace unistack
