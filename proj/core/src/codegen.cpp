#include "unistack/codegen.hpp"

#include <algorithm>
#include <cassert>

#include "json.hpp"

namespace unistack {

namespace {

std::vector<std::vector<std::size_t>> successors(const Function& f) {
  std::vector<std::vector<std::size_t>> succ(f.body.size());
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    const Instruction& in = f.body[i];
    switch (in.op) {
      case Opcode::Jump:
        succ[i].push_back(*f.label_index(in.label_a));
        break;
      case Opcode::Branch:
        succ[i].push_back(*f.label_index(in.label_a));
        succ[i].push_back(*f.label_index(in.label_b));
        break;
      case Opcode::Return:
        break;
      default:
        if (i + 1 < f.body.size()) succ[i].push_back(i + 1);
        break;
    }
  }
  return succ;
}

}  // namespace

LiveInfo liveness(const Function& f) {
  LiveInfo li;
  auto id_of = [&](const std::string& name) {
    auto it = li.value_ids.find(name);
    if (it != li.value_ids.end()) return it->second;
    int id = static_cast<int>(li.value_names.size());
    li.value_ids.emplace(name, id);
    li.value_names.push_back(name);
    return id;
  };
  for (const auto& p : f.params) id_of(p);
  for (const auto& in : f.body)
    if (!in.result.empty()) id_of(in.result);

  std::size_t n = f.body.size();
  li.live_in.assign(n, {});
  li.live_out.assign(n, {});
  li.def_at.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i)
    if (!f.body[i].result.empty()) li.def_at[i] = id_of(f.body[i].result);

  auto succ = successors(f);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t ii = n; ii-- > 0;) {
      std::set<int> out;
      for (std::size_t s : succ[ii])
        out.insert(li.live_in[s].begin(), li.live_in[s].end());
      std::set<int> in = out;
      if (li.def_at[ii] >= 0) in.erase(li.def_at[ii]);
      for (const auto& o : f.body[ii].args)
        if (!o.is_imm) in.insert(id_of(o.id));
      if (out != li.live_out[ii] || in != li.live_in[ii]) {
        li.live_out[ii] = std::move(out);
        li.live_in[ii] = std::move(in);
        changed = true;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    li.max_pressure =
        std::max({li.max_pressure, static_cast<int>(li.live_in[i].size()),
                  static_cast<int>(li.live_out[i].size())});
  return li;
}

namespace {

struct Interval {
  int value = -1;
  int start = 0;  // -1 for parameters
  int end = -1;
  bool crossing = false;
};

// A defined value matters if it is ever live somewhere.
bool value_needed(const Function& f, const LiveInfo& li, std::size_t i) {
  int v = li.def_at[i];
  if (v < 0) return false;
  for (std::size_t j = 0; j < f.body.size(); ++j)
    if (li.live_in[j].count(v) || li.live_out[j].count(v)) return true;
  return false;
}

bool used_anywhere(const Function& f, const LiveInfo& li, int v) {
  for (std::size_t j = 0; j < f.body.size(); ++j)
    if (li.live_in[j].count(v) || li.live_out[j].count(v)) return true;
  for (const auto& in : f.body)
    for (const auto& o : in.args)
      if (!o.is_imm && li.value_ids.at(o.id) == v) return true;
  return false;
}

// Conservative whole intervals covering every position where the value is
// live, defined or used.
std::vector<Interval> build_intervals(const Function& f, const LiveInfo& li) {
  std::map<int, Interval> iv;
  auto touch = [&](int v, int pos) {
    auto [it, fresh] = iv.try_emplace(v);
    Interval& x = it->second;
    if (fresh) {
      x.value = v;
      x.start = pos;
      x.end = pos;
    }
    x.start = std::min(x.start, pos);
    x.end = std::max(x.end, pos);
  };
  for (std::size_t i = 0; i < f.params.size(); ++i)
    if (used_anywhere(f, li, static_cast<int>(i))) touch(static_cast<int>(i), -1);
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    int ii = static_cast<int>(i);
    for (int v : li.live_in[i]) touch(v, ii);
    for (int v : li.live_out[i]) touch(v, ii);
    for (const auto& o : f.body[i].args)
      if (!o.is_imm) touch(li.value_ids.at(o.id), ii);
    if (li.def_at[i] >= 0 && value_needed(f, li, i)) touch(li.def_at[i], ii);
  }
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    if (f.body[i].op != Opcode::Call) continue;
    for (int v : li.live_out[i]) {
      if (li.def_at[i] == v) continue;
      auto it = iv.find(v);
      if (it != iv.end()) it->second.crossing = true;
    }
  }
  std::vector<Interval> out;
  out.reserve(iv.size());
  for (auto& [v, x] : iv) out.push_back(x);
  std::sort(out.begin(), out.end(), [](const Interval& a, const Interval& b) {
    if (a.start != b.start) return a.start < b.start;
    return a.value < b.value;
  });
  return out;
}

}  // namespace

AllocationResult allocate_registers(const Function& f, const ISADescriptor& isa,
                                    const CallingConvention& cc,
                                    const LiveInfo& live) {
  std::vector<int> alloc = allocatable_registers(isa);
  if (alloc.size() < 2)
    throw CodegenError("fewer than 2 allocatable registers on " + isa.name);
  std::set<int> alloc_set(alloc.begin(), alloc.end());

  // Caller pool in argument-register order first (so the convention shapes
  // allocation), callee pool by ascending index.
  std::vector<int> caller_pool, callee_pool;
  for (int r : cc.arg_registers)
    if (alloc_set.count(r)) caller_pool.push_back(r);
  for (int r : alloc)
    if (cc.caller_saved.count(r) &&
        std::find(caller_pool.begin(), caller_pool.end(), r) ==
            caller_pool.end())
      caller_pool.push_back(r);
  for (int r : alloc)
    if (cc.callee_saved.count(r)) callee_pool.push_back(r);
  std::set<int> callee_set(callee_pool.begin(), callee_pool.end());

  auto intervals = build_intervals(f, live);
  std::map<int, const Interval*> by_value;
  for (const auto& iv : intervals) by_value[iv.value] = &iv;

  AllocationResult res;
  res.crosses_call.assign(live.value_names.size(), false);
  for (const auto& iv : intervals) res.crosses_call[iv.value] = iv.crossing;

  std::set<int> free_regs(alloc_set);
  struct Active {
    const Interval* iv;
    int reg;
  };
  std::vector<Active> active;
  int next_slot = 0;

  auto spill = [&](int value) {
    Location l;
    l.kind = Location::Kind::Slot;
    l.slot_id = next_slot++;
    res.assignment[value] = l;
  };
  auto assign = [&](const Interval* iv, int reg) {
    Location l;
    l.kind = Location::Kind::Reg;
    l.reg = reg;
    res.assignment[iv->value] = l;
    free_regs.erase(reg);
    active.push_back({iv, reg});
  };

  for (const auto& iv : intervals) {
    for (std::size_t a = 0; a < active.size();) {
      if (active[a].iv->end < iv.start) {
        free_regs.insert(active[a].reg);
        active.erase(active.begin() + a);
      } else {
        ++a;
      }
    }
    int reg = -1;
    if (iv.crossing) {
      for (int r : callee_pool)
        if (free_regs.count(r)) {
          reg = r;
          break;
        }
    } else {
      for (int r : caller_pool)
        if (free_regs.count(r)) {
          reg = r;
          break;
        }
      if (reg < 0)
        for (int r : callee_pool)
          if (free_regs.count(r)) {
            reg = r;
            break;
          }
    }
    if (reg >= 0) {
      assign(&iv, reg);
      continue;
    }
    // Furthest-end eviction among holders of registers this interval could
    // use, or spill the interval itself.
    std::size_t victim = active.size();
    int best_end = iv.end;
    for (std::size_t a = 0; a < active.size(); ++a) {
      if (iv.crossing && !callee_set.count(active[a].reg)) continue;
      if (active[a].iv->end > best_end ||
          (active[a].iv->end == best_end && victim < active.size() &&
           active[a].iv->value > active[victim].iv->value)) {
        best_end = active[a].iv->end;
        victim = a;
      }
    }
    if (victim == active.size()) {
      spill(iv.value);
    } else {
      int r = active[victim].reg;
      spill(active[victim].iv->value);
      active.erase(active.begin() + victim);
      assign(&iv, r);
    }
  }

  res.spill_slot_count = next_slot;
  auto spilled = [&](int v) {
    auto it = res.assignment.find(v);
    return it != res.assignment.end() && it->second.kind == Location::Kind::Slot;
  };
  for (std::size_t i = 0; i < f.params.size(); ++i)
    if (spilled(static_cast<int>(i))) ++res.static_spill_store_count;
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    if (live.def_at[i] >= 0 && spilled(live.def_at[i]))
      ++res.static_spill_store_count;
    for (const auto& o : f.body[i].args)
      if (!o.is_imm && spilled(live.value_ids.at(o.id)))
        ++res.static_spill_load_count;
  }
  return res;
}

FrameLayout compute_frame_layout(const Function& f,
                                 const AllocationResult& alloc,
                                 const CallingConvention& cc,
                                 int max_outgoing_args) {
  FrameLayout fl;
  std::set<int> saved;
  for (const auto& [v, loc] : alloc.assignment)
    if (loc.kind == Location::Kind::Reg && cc.callee_saved.count(loc.reg))
      saved.insert(loc.reg);
  fl.saved_callee_regs.assign(saved.begin(), saved.end());
  std::int64_t off = 0;
  for (int r : fl.saved_callee_regs) {
    off -= 8;
    fl.callee_saved_offsets[r] = off;
  }
  for (int s = 0; s < alloc.spill_slot_count; ++s) {
    off -= 8;
    fl.spill_offsets[s] = off;
  }
  for (const auto& l : f.locals) {
    off -= l.size;
    fl.local_offsets[l.name] = off;
  }
  fl.outgoing_bytes = 8 * max_outgoing_args;
  std::int64_t below_fp = -off + fl.outgoing_bytes;
  below_fp = (below_fp + 15) & ~std::int64_t{15};
  fl.frame_size_bytes = static_cast<int>(16 + below_fp);
  return fl;
}

std::size_t MachineProgram::function_index(const std::string& name) const {
  for (std::size_t i = 0; i < functions.size(); ++i)
    if (functions[i].name == name) return i;
  throw CodegenError("unknown function: " + name);
}

namespace {

constexpr std::int64_t kRedZoneBytes = 32;

// Emits machine code for one function, managing ephemeral temporaries in the
// red zone below SP when every allocatable register is occupied.
class Emitter {
 public:
  Emitter(const Function& f, const LiveInfo& live, const AllocationResult& alloc,
          const FrameLayout& layout, const ISADescriptor& isa,
          const CallingConvention& cc)
      : f_(f), live_(live), alloc_(alloc), layout_(layout), isa_(isa), cc_(cc) {
    alloc_regs_ = allocatable_registers(isa);
    cisc_ = isa.style == IsaStyle::CiscMemOperand;
    // Register occupancy per position (-1 = prologue).
    occupied_.assign(f.body.size() + 1, {});
    std::map<int, std::pair<int, int>> spans;  // value -> [start, end]
    auto touch = [&](int v, int pos) {
      auto [it, fresh] = spans.try_emplace(v, std::pair<int, int>{pos, pos});
      it->second.first = std::min(it->second.first, pos);
      it->second.second = std::max(it->second.second, pos);
    };
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      int ii = static_cast<int>(i);
      for (int v : live.live_in[i]) touch(v, ii);
      for (int v : live.live_out[i]) touch(v, ii);
      if (live.def_at[i] >= 0 && alloc.assignment.count(live.def_at[i]))
        touch(live.def_at[i], ii);
      for (const auto& o : f.body[i].args)
        if (!o.is_imm) touch(live.value_ids.at(o.id), ii);
    }
    for (std::size_t i = 0; i < f.params.size(); ++i)
      if (spans.count(static_cast<int>(i)))
        spans[static_cast<int>(i)].first = -1;
    for (const auto& [v, span] : spans) {
      auto it = alloc.assignment.find(v);
      if (it == alloc.assignment.end() ||
          it->second.kind != Location::Kind::Reg)
        continue;
      for (int p = span.first; p <= span.second; ++p)
        occupied_[static_cast<std::size_t>(p + 1)].insert(it->second.reg);
    }
  }

  std::vector<MachineInstr> take_code() { return std::move(code_); }
  std::size_t size() const { return code_.size(); }

  void emit(MachineInstr in) { code_.push_back(std::move(in)); }

  void emit_mov(MachineOperand dst, MachineOperand src) {
    if (dst.kind == MachineOperand::Kind::Reg &&
        src.kind == MachineOperand::Kind::Reg && dst.reg == src.reg)
      return;
    if (dst.is_mem() && src.is_mem()) {
      int t = acquire();
      emit_mov(MachineOperand::make_reg(t), src);
      emit_mov(dst, MachineOperand::make_reg(t));
      release(t);
      return;
    }
    if (dst.is_mem() && src.kind == MachineOperand::Kind::Imm && !cisc_) {
      int t = acquire();
      emit_mov(MachineOperand::make_reg(t), src);
      emit_mov(dst, MachineOperand::make_reg(t));
      release(t);
      return;
    }
    MachineInstr in;
    in.op = MOp::Mov;
    in.dst = dst;
    in.a = src;
    code_.push_back(in);
  }

  // dest_reg, when nonnegative, is the result's register: its old content is
  // dead here, so temporaries may claim it without parking.
  void begin_instr(int ir_index, std::set<int> operand_regs,
                   int dest_reg = -1) {
    pos_ = ir_index;
    forbidden_ = std::move(operand_regs);
    dest_reg_ = dest_reg;
    assert(held_.empty() && parked_.empty());
  }

  // Frees every temporary; must be called before a Call is emitted and at the
  // end of each IR instruction.
  void end_instr() {
    while (!held_.empty()) release(held_.back());
  }

  int acquire() {
    const auto& occ = occupied_[static_cast<std::size_t>(pos_ + 1)];
    for (int r : alloc_regs_) {
      if ((occ.count(r) && r != dest_reg_) || forbidden_.count(r)) continue;
      if (std::find(held_.begin(), held_.end(), r) != held_.end()) continue;
      held_.push_back(r);
      return r;
    }
    // Everything is live: park a register in the red zone.
    for (int r : alloc_regs_) {
      if (forbidden_.count(r)) continue;
      if (std::find(held_.begin(), held_.end(), r) != held_.end()) continue;
      std::int64_t off = park_offset(static_cast<int>(parked_.size()));
      MachineInstr in;
      in.op = MOp::Mov;
      in.dst = MachineOperand::slot_sp(off);
      in.a = MachineOperand::make_reg(r);
      code_.push_back(in);
      parked_.push_back(r);
      held_.push_back(r);
      return r;
    }
    throw CodegenError("no temporary register available in " + f_.name);
  }

  // Last resort for ALU destinations: parks any register, including an
  // operand register of the current instruction. Safe there because the
  // machine reads both sources before the destination is written, and the
  // parked value is reloaded on release.
  int acquire_dest() {
    try {
      return acquire();
    } catch (const CodegenError&) {
    }
    for (int r : alloc_regs_) {
      if (std::find(held_.begin(), held_.end(), r) != held_.end()) continue;
      std::int64_t off = park_offset(static_cast<int>(parked_.size()));
      MachineInstr in;
      in.op = MOp::Mov;
      in.dst = MachineOperand::slot_sp(off);
      in.a = MachineOperand::make_reg(r);
      code_.push_back(in);
      parked_.push_back(r);
      held_.push_back(r);
      return r;
    }
    throw CodegenError("no destination register available in " + f_.name);
  }

  void release(int r) {
    auto it = std::find(held_.begin(), held_.end(), r);
    assert(it != held_.end());
    held_.erase(it);
    auto pit = std::find(parked_.begin(), parked_.end(), r);
    if (pit != parked_.end()) {
      std::int64_t off =
          park_offset(static_cast<int>(pit - parked_.begin()));
      MachineInstr in;
      in.op = MOp::Mov;
      in.dst = MachineOperand::make_reg(r);
      in.a = MachineOperand::slot_sp(off);
      code_.push_back(in);
      parked_.erase(pit);
    }
  }

  void forbid(int r) { forbidden_.insert(r); }

  bool cisc() const { return cisc_; }

  // Moves with register or frame-slot destinations, executed as if parallel.
  void parallel_moves(
      std::vector<std::pair<MachineOperand, MachineOperand>> moves) {
    auto same = [](const MachineOperand& x, const MachineOperand& y) {
      if (x.kind != y.kind) return false;
      if (x.kind == MachineOperand::Kind::Reg) return x.reg == y.reg;
      if (x.is_mem()) return x.offset == y.offset;
      return false;
    };
    moves.erase(std::remove_if(moves.begin(), moves.end(),
                               [&](const auto& m) {
                                 return same(m.first, m.second);
                               }),
                moves.end());
    // Stage 1: slot destinations with register (or CISC immediate) sources.
    // Slot destinations are never read by other moves, and draining them
    // first means stage 3 temporaries cannot clobber a pending source.
    std::vector<std::pair<MachineOperand, MachineOperand>> regs, rest;
    for (auto& m : moves) {
      if (m.first.kind == MachineOperand::Kind::Reg) {
        regs.push_back(m);
      } else if (m.second.kind == MachineOperand::Kind::Reg ||
                 (m.second.kind == MachineOperand::Kind::Imm && cisc_)) {
        emit_mov(m.first, m.second);
      } else {
        rest.push_back(m);
      }
    }
    // Stage 2: register destinations, respecting read-before-write order.
    while (!regs.empty()) {
      bool progressed = false;
      for (std::size_t i = 0; i < regs.size(); ++i) {
        int d = regs[i].first.reg;
        bool read_later = false;
        for (std::size_t j = 0; j < regs.size(); ++j) {
          if (j == i) continue;
          if (regs[j].second.kind == MachineOperand::Kind::Reg &&
              regs[j].second.reg == d)
            read_later = true;
        }
        if (read_later) continue;
        emit_mov(regs[i].first, regs[i].second);
        regs.erase(regs.begin() + i);
        progressed = true;
        break;
      }
      if (progressed) continue;
      // Cycle: park a source register that is also a pending destination and
      // redirect its readers to the red zone.
      int src = -1;
      for (const auto& m : regs) {
        if (m.second.kind != MachineOperand::Kind::Reg) continue;
        for (const auto& o : regs)
          if (o.first.reg == m.second.reg) src = m.second.reg;
        if (src >= 0) break;
      }
      if (src < 0) throw CodegenError("unresolvable move cycle");
      std::int64_t off = park_offset(static_cast<int>(parked_.size()) +
                                     static_cast<int>(held_.size()));
      emit_mov(MachineOperand::slot_sp(off), MachineOperand::make_reg(src));
      for (auto& m : regs)
        if (m.second.kind == MachineOperand::Kind::Reg && m.second.reg == src)
          m.second = MachineOperand::slot_sp(off);
    }
    // Stage 3: slot destinations needing a temporary (memory or RISC
    // immediate sources).
    for (auto& m : rest) emit_mov(m.first, m.second);
  }

 private:
  static std::int64_t park_offset(int depth) {
    std::int64_t off = -8 * (depth + 1);
    if (-off > kRedZoneBytes)
      throw CodegenError("red zone exhausted");
    return off;
  }

  const Function& f_;
  const LiveInfo& live_;
  const AllocationResult& alloc_;
  const FrameLayout& layout_;
  const ISADescriptor& isa_;
  const CallingConvention& cc_;
  std::vector<int> alloc_regs_;
  bool cisc_ = false;
  std::vector<MachineInstr> code_;
  std::vector<std::set<int>> occupied_;
  int pos_ = -1;
  int dest_reg_ = -1;
  std::set<int> forbidden_;
  std::vector<int> held_;
  std::vector<int> parked_;
};

class FunctionLowerer {
 public:
  FunctionLowerer(const Program& p, const Function& f, const ISADescriptor& isa,
                  const CallingConvention& cc)
      : p_(p),
        f_(f),
        isa_(isa),
        cc_(cc),
        live_(liveness(f)),
        alloc_(allocate_registers(f, isa, cc, live_)) {
    int max_out = 0;
    for (const auto& in : f.body)
      if (in.op == Opcode::Call)
        max_out = std::max(
            max_out, static_cast<int>(in.args.size()) -
                         static_cast<int>(cc.arg_registers.size()));
    layout_ = compute_frame_layout(f, alloc_, cc, std::max(0, max_out));
    // Resolve spill-slot ids to frame offsets.
    for (auto& [v, loc] : alloc_.assignment)
      if (loc.kind == Location::Kind::Slot)
        loc.fp_offset = layout_.spill_offsets.at(loc.slot_id);
  }

  MachineFunction run(std::vector<FrameDescriptor>& meta, bool emit_callsites) {
    MachineFunction mf;
    mf.name = f_.name;
    mf.arity = f_.params.size();
    mf.layout = layout_;

    Emitter em(f_, live_, alloc_, layout_, isa_, cc_);
    emit_prologue(em);

    std::vector<std::size_t> ir2m(f_.body.size() + 1, 0);
    for (std::size_t i = 0; i < f_.body.size(); ++i) {
      ir2m[i] = em.size();
      lower_instr(em, i, mf, meta, emit_callsites);
    }
    ir2m[f_.body.size()] = em.size();

    mf.code = em.take_code();
    for (auto& in : mf.code) {
      if (in.op == MOp::Jump || in.op == MOp::Branch) {
        in.target_a = ir2m[in.target_a];
        if (in.op == MOp::Branch) in.target_b = ir2m[in.target_b];
      }
    }
    return mf;
  }

 private:
  const Program& p_;
  const Function& f_;
  const ISADescriptor& isa_;
  const CallingConvention& cc_;
  LiveInfo live_;
  AllocationResult alloc_;
  FrameLayout layout_;

  const Location* loc_of(int v) const {
    auto it = alloc_.assignment.find(v);
    return it == alloc_.assignment.end() ? nullptr : &it->second;
  }
  const Location* loc_of(const std::string& name) const {
    auto it = live_.value_ids.find(name);
    return it == live_.value_ids.end() ? nullptr : loc_of(it->second);
  }

  MachineOperand loc_operand(const Location& l) const {
    if (l.kind == Location::Kind::Reg) return MachineOperand::make_reg(l.reg);
    return MachineOperand::slot_fp(l.fp_offset, true);
  }

  std::set<int> operand_regs(const Instruction& in) const {
    std::set<int> s;
    for (const auto& o : in.args) {
      if (o.is_imm) continue;
      const Location* l = loc_of(o.id);
      if (l && l->kind == Location::Kind::Reg) s.insert(l->reg);
    }
    return s;
  }

  // Reads an operand in place, without temporaries (branch/print).
  MachineOperand direct_operand(const Operand& o) {
    if (o.is_imm) return MachineOperand::make_imm(o.imm);
    const Location* l = loc_of(o.id);
    if (!l) throw CodegenError("operand without location: " + o.id);
    return loc_operand(*l);
  }

  // Materializes an operand for reading. allow_mem permits returning a frame
  // slot directly (the CISC single memory operand).
  MachineOperand read_operand(Emitter& em, const Operand& o, bool allow_mem) {
    if (o.is_imm) return MachineOperand::make_imm(o.imm);
    const Location* l = loc_of(o.id);
    if (!l) throw CodegenError("operand without location: " + o.id);
    if (l->kind == Location::Kind::Reg) return MachineOperand::make_reg(l->reg);
    MachineOperand slot = MachineOperand::slot_fp(l->fp_offset, true);
    if (allow_mem && em.cisc()) return slot;
    int t = em.acquire();
    em.emit_mov(MachineOperand::make_reg(t), slot);
    return MachineOperand::make_reg(t);
  }

  void emit_prologue(Emitter& em) {
    MachineInstr enter;
    enter.op = MOp::Enter;
    em.emit(enter);
    em.begin_instr(-1, {});
    std::vector<std::pair<MachineOperand, MachineOperand>> moves;
    std::size_t nregs = cc_.arg_registers.size();
    for (std::size_t j = 0; j < f_.params.size(); ++j) {
      const Location* l = loc_of(static_cast<int>(j));
      if (!l) continue;  // unused parameter
      MachineOperand src =
          j < nregs
              ? MachineOperand::make_reg(cc_.arg_registers[j])
              : MachineOperand::slot_fp(
                    16 + 8 * static_cast<std::int64_t>(j - nregs));
      moves.emplace_back(loc_operand(*l), src);
    }
    em.parallel_moves(std::move(moves));
    em.end_instr();
  }

  void lower_instr(Emitter& em, std::size_t i, MachineFunction& mf,
                   std::vector<FrameDescriptor>& meta, bool emit_callsites) {
    const Instruction& in = f_.body[i];
    std::set<int> forbid = operand_regs(in);
    int dest = -1;
    if (!in.result.empty()) {
      if (const Location* l = loc_of(in.result);
          l && l->kind == Location::Kind::Reg) {
        // A call result is written after the call, so its register is not
        // reclaimable while arguments are being staged.
        if (in.op == Opcode::Call || forbid.count(l->reg))
          forbid.insert(l->reg);
        else
          dest = l->reg;
      }
    }
    em.begin_instr(static_cast<int>(i), std::move(forbid), dest);
    switch (in.op) {
      case Opcode::Const:
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::Mul:
      case Opcode::Div:
      case Opcode::Cmp:
        lower_compute(em, in);
        break;
      case Opcode::Branch: {
        // Conditions are tested in place (register, immediate or slot) so no
        // temporary can be pending when control leaves the instruction.
        MachineInstr b;
        b.op = MOp::Branch;
        b.a = direct_operand(in.args[0]);
        b.target_a = *f_.label_index(in.label_a);  // IR index, fixed up later
        b.target_b = *f_.label_index(in.label_b);
        em.emit(b);
        break;
      }
      case Opcode::Jump: {
        MachineInstr j;
        j.op = MOp::Jump;
        j.target_a = *f_.label_index(in.label_a);
        em.emit(j);
        break;
      }
      case Opcode::LoadLocal: {
        const Location* ld = loc_of(in.result);
        if (!ld) break;  // dead load
        MachineOperand src =
            MachineOperand::slot_fp(layout_.local_offsets.at(in.local));
        em.emit_mov(loc_operand(*ld), src);
        break;
      }
      case Opcode::StoreLocal: {
        MachineOperand dst =
            MachineOperand::slot_fp(layout_.local_offsets.at(in.local));
        MachineOperand src = read_operand(em, in.args[0], false);
        em.emit_mov(dst, src);
        break;
      }
      case Opcode::Call:
        lower_call(em, i, mf, meta, emit_callsites);
        return;
      case Opcode::Return: {
        MachineOperand src = read_operand(em, in.args[0], false);
        em.emit_mov(MachineOperand::make_reg(cc_.return_register), src);
        em.end_instr();
        MachineInstr lv;
        lv.op = MOp::Leave;
        em.emit(lv);
        MachineInstr rt;
        rt.op = MOp::Ret;
        em.emit(rt);
        return;
      }
      case Opcode::EqPoint: {
        MachineInstr ep;
        ep.op = MOp::EqPt;
        ep.point = in.eq_id;
        mf.eq_index[in.eq_id] = em.size();
        em.emit(ep);
        meta.push_back(make_descriptor(SiteKind::EqPoint, in.eq_id,
                                       live_.live_in[i]));
        break;
      }
      case Opcode::Print: {
        MachineInstr pr;
        pr.op = MOp::PrintVal;
        pr.a = direct_operand(in.args[0]);
        em.emit(pr);
        break;
      }
    }
    em.end_instr();
  }

  void lower_compute(Emitter& em, const Instruction& in) {
    const Location* ld = in.result.empty() ? nullptr : loc_of(in.result);
    if (!ld && in.op != Opcode::Div) return;  // dead pure computation

    if (in.op == Opcode::Const) {
      if (!ld) return;
      em.emit_mov(loc_operand(*ld), MachineOperand::make_imm(in.args[0].imm));
      return;
    }

    // Binary op; in CISC style at most one source may stay in memory.
    MachineOperand b = read_operand(em, in.args[1], true);
    MachineOperand a = read_operand(em, in.args[0], !b.is_mem());

    int dreg;
    bool store_back = false;
    if (ld && ld->kind == Location::Kind::Reg) {
      dreg = ld->reg;
    } else {
      store_back = ld != nullptr;
      // Reuse a source temporary when one exists; sources are dead within
      // the instruction once the ALU op has read them.
      dreg = -1;
      if (a.kind == MachineOperand::Kind::Reg && !occupied_src(a, in))
        dreg = a.reg;
      else if (b.kind == MachineOperand::Kind::Reg && !occupied_src(b, in))
        dreg = b.reg;
      if (dreg < 0) dreg = em.acquire_dest();
    }

    MachineInstr op;
    op.op = in.op == Opcode::Cmp ? MOp::CmpSet : MOp::Alu;
    op.alu = in.op;
    op.pred = in.pred;
    op.dst = MachineOperand::make_reg(dreg);
    op.a = a;
    op.b = b;
    em.emit(op);
    if (store_back)
      em.emit_mov(MachineOperand::slot_fp(ld->fp_offset, true),
                  MachineOperand::make_reg(dreg));
  }

  // True when the materialized source operand is a register that belongs to a
  // live allocated value (and therefore cannot be clobbered by the result).
  bool occupied_src(const MachineOperand& o, const Instruction& in) const {
    if (o.kind != MachineOperand::Kind::Reg) return true;
    for (const auto& arg : in.args) {
      if (arg.is_imm) continue;
      const Location* l = loc_of(arg.id);
      if (l && l->kind == Location::Kind::Reg && l->reg == o.reg) return true;
    }
    return false;
  }

  void lower_call(Emitter& em, std::size_t i, MachineFunction& mf,
                  std::vector<FrameDescriptor>& meta, bool emit_callsites) {
    const Instruction& in = f_.body[i];
    std::size_t nregs = cc_.arg_registers.size();
    // Overflow arguments first, into the reserved outgoing area at SP.
    for (std::size_t j = nregs; j < in.args.size(); ++j) {
      MachineOperand src = read_operand(em, in.args[j], false);
      em.emit_mov(MachineOperand::slot_sp(
                      8 * static_cast<std::int64_t>(j - nregs)),
                  src);
      em.end_instr();  // release per-argument temporaries
    }
    // Register arguments as one parallel move.
    std::vector<std::pair<MachineOperand, MachineOperand>> moves;
    for (std::size_t j = 0; j < std::min(nregs, in.args.size()); ++j) {
      MachineOperand src;
      if (in.args[j].is_imm) {
        src = MachineOperand::make_imm(in.args[j].imm);
      } else {
        const Location* l = loc_of(in.args[j].id);
        src = loc_operand(*l);
      }
      moves.emplace_back(MachineOperand::make_reg(cc_.arg_registers[j]), src);
    }
    em.parallel_moves(std::move(moves));
    em.end_instr();  // nothing may stay parked across the call

    if (emit_callsites) {
      std::set<int> live_across = live_.live_out[i];
      if (live_.def_at[i] >= 0) live_across.erase(live_.def_at[i]);
      meta.push_back(make_descriptor(SiteKind::CallSite,
                                     static_cast<std::int64_t>(i),
                                     live_across));
    }
    MachineInstr call;
    call.op = MOp::CallFn;
    call.target_a = p_.function_index(in.callee);
    call.point = static_cast<std::int64_t>(i);
    mf.call_index[static_cast<std::int64_t>(i)] = em.size();
    em.emit(call);

    if (!in.result.empty()) {
      const Location* ld = loc_of(in.result);
      if (ld)
        em.emit_mov(loc_operand(*ld),
                    MachineOperand::make_reg(cc_.return_register));
    }
  }

  FrameDescriptor make_descriptor(SiteKind kind, std::int64_t point,
                                  const std::set<int>& live_values) const {
    FrameDescriptor d;
    d.function = f_.name;
    d.site = kind;
    d.point = point;
    d.frame_size_bytes = layout_.frame_size_bytes;
    d.callee_saved_layout = layout_.callee_saved_offsets;
    d.ra_offset = layout_.ra_offset;
    d.saved_fp_offset = layout_.saved_fp_offset;
    for (int v : live_values) {
      const Location* l = loc_of(v);
      if (!l)
        throw CodegenError("live value without location: " +
                           live_.value_names[static_cast<std::size_t>(v)]);
      d.live_values[live_.value_names[static_cast<std::size_t>(v)]] = *l;
    }
    return d;
  }
};

}  // namespace

Lowered lower(const Program& p, const ISADescriptor& isa,
              const CallingConvention& cc, const LowerOptions& opts) {
  validate_descriptor(isa);
  validate_convention(isa, cc);
  Program q = opts.load_elim ? eliminate_redundant_loads(p) : p;
  bool any_eqpoint = false;
  for (const auto& f : q.functions)
    for (const auto& in : f.body)
      if (in.op == Opcode::EqPoint) any_eqpoint = true;

  Lowered out;
  out.prog.isa = isa;
  out.prog.cc = cc;
  for (const auto& f : q.functions) {
    FunctionLowerer fl(q, f, isa, cc);
    out.prog.functions.push_back(fl.run(out.meta, any_eqpoint));
  }
  out.prog.entry_index = q.function_index(q.entry);
  std::sort(out.meta.begin(), out.meta.end(),
            [](const FrameDescriptor& a, const FrameDescriptor& b) {
              if (a.function != b.function) return a.function < b.function;
              if (a.site != b.site) return a.site < b.site;
              return a.point < b.point;
            });
  return out;
}

MetaIndex::MetaIndex(const std::vector<FrameDescriptor>& meta) {
  for (const auto& d : meta)
    index_[{d.function, static_cast<int>(d.site), d.point}] = &d;
}

const FrameDescriptor* MetaIndex::find(const std::string& fn, SiteKind k,
                                       std::int64_t point) const {
  auto it = index_.find({fn, static_cast<int>(k), point});
  return it == index_.end() ? nullptr : it->second;
}

const FrameDescriptor& MetaIndex::at(const std::string& fn, SiteKind k,
                                     std::int64_t point) const {
  const FrameDescriptor* d = find(fn, k, point);
  if (!d)
    throw CodegenError("missing frame descriptor for " + fn + " " +
                       (k == SiteKind::EqPoint ? "eqpoint " : "call site ") +
                       std::to_string(point));
  return *d;
}

std::string meta_to_json(const std::vector<FrameDescriptor>& meta) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : meta) {
    nlohmann::json j;
    j["function"] = d.function;
    j["site"] = d.site == SiteKind::EqPoint ? "eq" : "call";
    j["point"] = d.point;
    j["frame_size"] = d.frame_size_bytes;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, loc] : d.live_values) {
      nlohmann::json e;
      e["value"] = name;
      e["kind"] = loc.kind == Location::Kind::Reg ? "reg" : "slot";
      e["index_or_offset"] =
          loc.kind == Location::Kind::Reg ? loc.reg : loc.fp_offset;
      entries.push_back(e);
    }
    j["entries"] = entries;
    nlohmann::json saved = nlohmann::json::array();
    for (const auto& [reg, off] : d.callee_saved_layout)
      saved.push_back({{"offset", off}, {"reg", reg}});
    j["callee_saved"] = saved;
    j["ra_offset"] = d.ra_offset;
    j["saved_fp_offset"] = d.saved_fp_offset;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

std::vector<FrameDescriptor> meta_from_json(const std::string& text) {
  nlohmann::json arr = nlohmann::json::parse(text);
  std::vector<FrameDescriptor> out;
  for (const auto& j : arr) {
    FrameDescriptor d;
    d.function = j.at("function").get<std::string>();
    d.site = j.at("site").get<std::string>() == "eq" ? SiteKind::EqPoint
                                                     : SiteKind::CallSite;
    d.point = j.at("point").get<std::int64_t>();
    d.frame_size_bytes = j.at("frame_size").get<int>();
    for (const auto& e : j.at("entries")) {
      Location l;
      if (e.at("kind").get<std::string>() == "reg") {
        l.kind = Location::Kind::Reg;
        l.reg = e.at("index_or_offset").get<int>();
      } else {
        l.kind = Location::Kind::Slot;
        l.fp_offset = e.at("index_or_offset").get<std::int64_t>();
      }
      d.live_values[e.at("value").get<std::string>()] = l;
    }
    for (const auto& s : j.at("callee_saved"))
      d.callee_saved_layout[s.at("reg").get<int>()] =
          s.at("offset").get<std::int64_t>();
    d.ra_offset = j.at("ra_offset").get<std::int64_t>();
    d.saved_fp_offset = j.at("saved_fp_offset").get<std::int64_t>();
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

nlohmann::json operand_json(const MachineOperand& o) {
  nlohmann::json j;
  switch (o.kind) {
    case MachineOperand::Kind::None:
      j["kind"] = "none";
      break;
    case MachineOperand::Kind::Reg:
      j["kind"] = "reg";
      j["reg"] = o.reg;
      break;
    case MachineOperand::Kind::Imm:
      j["kind"] = "imm";
      j["value"] = o.value;
      break;
    case MachineOperand::Kind::SlotFP:
      j["kind"] = "fp_slot";
      j["offset"] = o.offset;
      j["spill"] = o.spill;
      break;
    case MachineOperand::Kind::SlotSP:
      j["kind"] = "sp_slot";
      j["offset"] = o.offset;
      j["spill"] = o.spill;
      break;
  }
  return j;
}

const char* mop_name(MOp m) {
  switch (m) {
    case MOp::Mov: return "mov";
    case MOp::Alu: return "alu";
    case MOp::CmpSet: return "cmpset";
    case MOp::Jump: return "jump";
    case MOp::Branch: return "branch";
    case MOp::CallFn: return "call";
    case MOp::Ret: return "ret";
    case MOp::Enter: return "enter";
    case MOp::Leave: return "leave";
    case MOp::EqPt: return "eqpoint";
    case MOp::PrintVal: return "print";
  }
  return "?";
}

}  // namespace

std::string mprog_to_json(const MachineProgram& mp) {
  nlohmann::json j;
  j["isa"] = mp.isa.name;
  j["style"] = mp.isa.style == IsaStyle::CiscMemOperand ? "cisc-memory-operand"
                                                        : "risc-load-store";
  j["gpr_count"] = mp.isa.gpr_count;
  j["entry"] = mp.functions[mp.entry_index].name;
  nlohmann::json fns = nlohmann::json::array();
  for (const auto& mf : mp.functions) {
    nlohmann::json fj;
    fj["name"] = mf.name;
    fj["arity"] = mf.arity;
    fj["frame_size"] = mf.layout.frame_size_bytes;
    nlohmann::json code = nlohmann::json::array();
    for (const auto& in : mf.code) {
      nlohmann::json ij;
      ij["op"] = mop_name(in.op);
      if (in.op == MOp::Alu) ij["alu"] = opcode_name(in.alu);
      if (in.op == MOp::CmpSet) ij["pred"] = pred_name(in.pred);
      if (in.dst.kind != MachineOperand::Kind::None)
        ij["dst"] = operand_json(in.dst);
      if (in.a.kind != MachineOperand::Kind::None) ij["a"] = operand_json(in.a);
      if (in.b.kind != MachineOperand::Kind::None) ij["b"] = operand_json(in.b);
      if (in.op == MOp::Jump || in.op == MOp::Branch ||
          in.op == MOp::CallFn) {
        ij["target"] = in.target_a;
        if (in.op == MOp::Branch) ij["target_else"] = in.target_b;
      }
      if (in.op == MOp::EqPt || in.op == MOp::CallFn) ij["point"] = in.point;
      code.push_back(ij);
    }
    fj["code"] = code;
    fns.push_back(fj);
  }
  j["functions"] = fns;
  return j.dump(2) + "\n";
}

}  // namespace unistack
