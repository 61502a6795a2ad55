#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "support/oracles.hpp"
#include "unistack/codegen.hpp"
#include "unistack/experiments.hpp"
#include "unistack/ir.hpp"
#include "unistack/vm.hpp"

using namespace unistack;

namespace {

GeneratorConfig small_cfg(std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  cfg.function_count = {1, 2};
  cfg.call_depth = {1, 2};
  cfg.live_pressure = {2, 7};
  cfg.loop_iters = {2, 3};
  return cfg;
}

struct Interval {
  int start = 1 << 30;
  int end = -(1 << 30);
  bool alive() const { return end >= start; }
};

// Conservative whole intervals, recomputed here from first to last touch.
std::vector<Interval> intervals_of(const Function& f, const LiveInfo& live) {
  std::vector<Interval> iv(live.value_names.size());
  auto touch = [&](int v, int pos) {
    iv[static_cast<std::size_t>(v)].start =
        std::min(iv[static_cast<std::size_t>(v)].start, pos);
    iv[static_cast<std::size_t>(v)].end =
        std::max(iv[static_cast<std::size_t>(v)].end, pos);
  };
  for (int v = 0; v < static_cast<int>(f.params.size()); ++v) touch(v, -1);
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    int ii = static_cast<int>(i);
    for (int v : live.live_in[i]) touch(v, ii);
    for (int v : live.live_out[i]) touch(v, ii);
    for (const auto& o : f.body[i].args)
      if (!o.is_imm) touch(live.value_ids.at(o.id), ii);
    if (live.def_at[i] >= 0) touch(live.def_at[i], ii);
  }
  return iv;
}

}  // namespace

TEST_CASE("liveness agrees with a path-based oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Program p = generate_program(small_cfg(seed));
    for (const auto& f : p.functions) {
      LiveInfo li = liveness(f);
      auto succ = oracles::successors_of(f);
      int pressure = 0;
      for (std::size_t i = 0; i < f.body.size(); ++i) {
        for (const auto& [name, id] : li.value_ids) {
          CHECK(li.live_in[i].count(id) ==
                (oracles::live_in_at(f, succ, i, name) ? 1u : 0u));
          CHECK(li.live_out[i].count(id) ==
                (oracles::live_out_at(f, succ, i, name) ? 1u : 0u));
        }
        pressure = std::max(pressure, static_cast<int>(li.live_in[i].size()));
        pressure = std::max(pressure, static_cast<int>(li.live_out[i].size()));
      }
      CHECK(li.max_pressure == pressure);
    }
  }
}

TEST_CASE("allocator output is sound") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Program p = generate_program(small_cfg(seed));
    for (const auto& isa : {x86like(), armlike(), armlike_n(6)}) {
      CallingConvention cc = default_convention(isa);
      std::vector<int> allocv = allocatable_registers(isa);
      std::set<int> alloc(allocv.begin(), allocv.end());
      for (const auto& f : p.functions) {
        LiveInfo li = liveness(f);
        AllocationResult ar = allocate_registers(f, isa, cc, li);
        auto iv = intervals_of(f, li);

        std::map<int, std::vector<int>> by_reg;
        for (const auto& [v, loc] : ar.assignment) {
          if (loc.kind == Location::Kind::Reg) {
            CHECK(alloc.count(loc.reg) == 1);
            if (ar.crosses_call[static_cast<std::size_t>(v)])
              CHECK(cc.callee_saved.count(loc.reg) == 1);
            by_reg[loc.reg].push_back(v);
          } else {
            CHECK(loc.slot_id >= 0);
            CHECK(loc.slot_id < ar.spill_slot_count);
          }
        }
        // same register only for disjoint intervals
        for (const auto& [reg, vals] : by_reg) {
          for (std::size_t i = 0; i < vals.size(); ++i)
            for (std::size_t j = i + 1; j < vals.size(); ++j) {
              const Interval& a = iv[static_cast<std::size_t>(vals[i])];
              const Interval& b = iv[static_cast<std::size_t>(vals[j])];
              CHECK((a.end < b.start || b.end < a.start));
            }
        }
      }
    }
  }
}

TEST_CASE("allocator stays within two spills of the exhaustive minimum") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Program p = generate_program(small_cfg(seed));
    for (const auto& isa : {armlike_n(8), armlike_n(16)}) {
      CallingConvention cc = default_convention(isa);
      std::set<int> alloc;
      for (int r : allocatable_registers(isa)) alloc.insert(r);
      int callee_alloc = 0;
      for (int r : cc.callee_saved)
        if (alloc.count(r)) ++callee_alloc;
      for (const auto& f : p.functions) {
        LiveInfo li = liveness(f);
        int best = oracles::min_spills(f, li, static_cast<int>(alloc.size()),
                                       callee_alloc);
        if (best < 0) continue;  // too many values for the exhaustive search
        AllocationResult ar = allocate_registers(f, isa, cc, li);
        int spilled = 0;
        for (const auto& [v, loc] : ar.assignment)
          if (loc.kind == Location::Kind::Slot) ++spilled;
        CHECK(spilled >= best);
        CHECK(spilled <= best + 2);
        ++checked;
      }
    }
  }
  CHECK(checked >= 30);
}

TEST_CASE("frame layout: leaf frame is 16 bytes") {
  Program p = parse_program("fn main(p0) {\n  return p0\n}\n");
  for (const auto& isa : {x86like(), armlike()}) {
    Lowered low = lower(p, isa, default_convention(isa));
    CHECK(low.prog.entry().layout.frame_size_bytes == 16);
    CHECK(low.prog.entry().layout.saved_callee_regs.empty());
  }
}

TEST_CASE("frame layout: save area, spills and a local pack to 48 bytes") {
  Program p = parse_program(
      "fn main(p0) {\n  local buf 8\n  store-local buf, p0\n  x = load-local "
      "buf\n  return x\n}\n");
  const Function& f = p.functions[0];
  ISADescriptor isa = armlike();
  CallingConvention cc = default_convention(isa);
  int callee_reg = -1;
  for (int r : allocatable_registers(isa))
    if (cc.callee_saved.count(r)) callee_reg = r;
  REQUIRE(callee_reg >= 0);

  AllocationResult ar;
  ar.assignment[0] = {Location::Kind::Reg, callee_reg, -1, 0};
  ar.assignment[1] = {Location::Kind::Slot, -1, 0, 0};
  ar.assignment[2] = {Location::Kind::Slot, -1, 1, 0};
  ar.spill_slot_count = 2;
  ar.crosses_call = {true, false, false};

  FrameLayout fl = compute_frame_layout(f, ar, cc, 0);
  CHECK(fl.frame_size_bytes == 48);
  CHECK(fl.saved_callee_regs == std::vector<int>{callee_reg});
  CHECK(fl.callee_saved_offsets.at(callee_reg) == -8);
  CHECK(fl.spill_offsets.at(0) == -16);
  CHECK(fl.spill_offsets.at(1) == -24);
  CHECK(fl.local_offsets.at("buf") == -32);
  CHECK(fl.saved_fp_offset == 0);
  CHECK(fl.ra_offset == 8);
  CHECK(fl.outgoing_bytes == 0);
}

TEST_CASE("frame layouts are aligned with disjoint slots") {
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    for (const auto& isa : {x86like(), armlike(), armlike_n(5)}) {
      Lowered low = lower(p, isa, default_convention(isa));
      for (const auto& mf : low.prog.functions) {
        const FrameLayout& fl = mf.layout;
        CHECK(fl.frame_size_bytes % 16 == 0);
        CHECK(fl.frame_size_bytes >= 16);
        std::set<std::int64_t> offs;
        auto add = [&](std::int64_t o) {
          CHECK(o <= -8);
          CHECK(o > -fl.frame_size_bytes);
          CHECK(offs.insert(o).second);
        };
        for (const auto& [r, o] : fl.callee_saved_offsets) add(o);
        for (const auto& [s, o] : fl.spill_offsets) add(o);
        for (const auto& [n, o] : fl.local_offsets) add(o);
      }
    }
  }
}

TEST_CASE("machine code respects the target style") {
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    for (const auto& isa : {x86like(), armlike(), armlike_reduced()}) {
      Lowered low = lower(p, isa, default_convention(isa));
      for (const auto& mf : low.prog.functions) {
        for (const auto& mi : mf.code) {
          for (const auto* op : {&mi.dst, &mi.a, &mi.b}) {
            if (op->kind == MachineOperand::Kind::Reg) {
              CHECK(op->reg >= 0);
              CHECK(op->reg < isa.gpr_count);
              CHECK(op->reg != isa.stack_pointer);
            }
          }
          int mem = (mi.dst.is_mem() ? 1 : 0) + (mi.a.is_mem() ? 1 : 0) +
                    (mi.b.is_mem() ? 1 : 0);
          if (isa.style == IsaStyle::CiscMemOperand) {
            CHECK(mem <= 1);
          } else {
            if (mi.op == MOp::Alu || mi.op == MOp::CmpSet) CHECK(mem == 0);
            if (mi.op == MOp::Mov) CHECK(mem <= 1);
          }
        }
        for (const auto& [id, idx] : mf.eq_index) {
          REQUIRE(idx < mf.code.size());
          CHECK(mf.code[idx].op == MOp::EqPt);
          CHECK(mf.code[idx].point == id);
        }
        for (const auto& [ir_idx, idx] : mf.call_index) {
          REQUIRE(idx < mf.code.size());
          CHECK(mf.code[idx].op == MOp::CallFn);
        }
      }
    }
  }
}

TEST_CASE("equivalence-point metadata lists exactly the live values") {
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    Lowered low = lower(p, armlike(), default_convention(armlike()));
    MetaIndex idx(low.meta);
    for (const auto& f : p.functions) {
      LiveInfo li = liveness(f);
      for (std::size_t i = 0; i < f.body.size(); ++i) {
        if (f.body[i].op != Opcode::EqPoint) continue;
        const FrameDescriptor& d =
            idx.at(f.name, SiteKind::EqPoint, f.body[i].eq_id);
        std::set<std::string> expect;
        for (int v : li.live_in[i])
          expect.insert(li.value_names[static_cast<std::size_t>(v)]);
        std::set<std::string> got;
        for (const auto& [name, loc] : d.live_values) got.insert(name);
        CHECK(got == expect);
        CHECK(d.frame_size_bytes ==
              low.prog.functions[low.prog.function_index(f.name)]
                  .layout.frame_size_bytes);
      }
    }
  }
}

TEST_CASE("metadata JSON round trips canonically") {
  Program p = kernel_program("mixed");
  Lowered low = lower(p, x86like(), default_convention(x86like()));
  std::string text = meta_to_json(low.meta);
  std::vector<FrameDescriptor> back = meta_from_json(text);
  CHECK(meta_to_json(back) == text);
  REQUIRE(back.size() == low.meta.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].function == low.meta[i].function);
    CHECK(back[i].site == low.meta[i].site);
    CHECK(back[i].point == low.meta[i].point);
    CHECK(back[i].live_values == low.meta[i].live_values);
    CHECK(back[i].frame_size_bytes == low.meta[i].frame_size_bytes);
    CHECK(back[i].callee_saved_layout == low.meta[i].callee_saved_layout);
  }
}

TEST_CASE("load/store style never loads less than the memory-operand style") {
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    Lowered cisc = lower(p, x86like(), default_convention(x86like()));
    Lowered risc =
        lower(p, armlike_reduced(), default_convention(armlike_reduced()));
    RunResult a = run(cisc.prog, k.inputs);
    RunResult b = run(risc.prog, k.inputs);
    CHECK(a.exit_value == b.exit_value);
    CHECK(b.metrics.dynamic_load_count >= a.metrics.dynamic_load_count);
    CHECK(b.metrics.dynamic_instruction_count >=
          a.metrics.dynamic_instruction_count);
  }
}
