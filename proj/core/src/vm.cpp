#include "unistack/vm.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

#include "json.hpp"

namespace unistack {

namespace {

constexpr std::uint64_t kSentinelRa = ~0ull;
constexpr std::uint64_t kRedZoneBytes = 32;

std::uint64_t align16(std::uint64_t x) { return (x + 15) & ~15ull; }

std::uint64_t peek(const std::vector<std::uint8_t>& stack, std::uint64_t addr) {
  if (addr + 8 > stack.size() || addr + 8 < addr)
    throw std::runtime_error("stack read out of bounds at " +
                             std::to_string(addr));
  std::uint64_t v;
  std::memcpy(&v, stack.data() + addr, 8);
  return v;
}

void poke(std::vector<std::uint8_t>& stack, std::uint64_t addr,
          std::uint64_t v) {
  if (addr + 8 > stack.size() || addr + 8 < addr)
    throw std::runtime_error("stack write out of bounds at " +
                             std::to_string(addr));
  std::memcpy(stack.data() + addr, &v, 8);
}

class Interp {
 public:
  Interp(const MachineProgram& mp, const VmOptions& opts)
      : mp_(mp), opts_(opts) {}

  MachineState st;

  void start(const std::vector<std::int64_t>& inputs) {
    st = MachineState{};
    st.regs.assign(static_cast<std::size_t>(mp_.isa.gpr_count), 0);
    st.stack.assign(opts_.stack_size, 0);
    const MachineFunction& entry = mp_.entry();
    if (inputs.size() != entry.arity)
      throw VmError("entry function '" + entry.name + "' takes " +
                        std::to_string(entry.arity) + " argument(s), got " +
                        std::to_string(inputs.size()),
                    entry.name, 0);
    std::size_t nreg = mp_.cc.arg_registers.size();
    std::uint64_t overflow =
        inputs.size() > nreg ? align16(8 * (inputs.size() - nreg)) : 0;
    st.sp = st.stack.size() - overflow;
    for (std::size_t j = nreg; j < inputs.size(); ++j)
      poke(st.stack, st.sp + 8 * (j - nreg),
           static_cast<std::uint64_t>(inputs[j]));
    st.sp -= 8;
    poke(st.stack, st.sp, kSentinelRa);
    for (std::size_t j = 0; j < std::min(nreg, inputs.size()); ++j)
      st.regs[static_cast<std::size_t>(mp_.cc.arg_registers[j])] =
          static_cast<std::uint64_t>(inputs[j]);
    st.func = mp_.entry_index;
    st.pc = 0;
    st.depth = 1;
    st.metrics.max_call_depth = 1;
  }

  void adopt(MachineState state) {
    st = std::move(state);
    if (st.at_point) {
      ++st.pc;
      st.at_point = false;
    }
  }

  // Runs to completion, or until `stop` fires at an equivalence point.
  // Returns true if the program halted.
  bool run_loop(const StopPredicate* stop) {
    while (!st.halted) {
      const MachineFunction& mf = mp_.functions[st.func];
      const MachineInstr& ins = mf.code[st.pc];
      if (ins.op == MOp::EqPt) {
        ++st.metrics.dynamic_instruction_count;
        ++st.metrics.equivalence_points_hit;
        if (stop && (*stop)(st.metrics.equivalence_points_hit, mf.name,
                            ins.point)) {
          st.at_point = true;
          return false;
        }
        ++st.pc;
        continue;
      }
      step(mf, ins);
    }
    return true;
  }

  RunResult finish() const {
    return RunResult{st.exit_value, st.output, st.metrics};
  }

 private:
  const MachineProgram& mp_;
  VmOptions opts_;

  [[noreturn]] void fail(const std::string& msg) {
    throw VmError(msg, mp_.functions[st.func].name, st.pc);
  }

  std::uint64_t addr_of(const MachineOperand& o) const {
    std::uint64_t base = o.kind == MachineOperand::Kind::SlotFP ? st.fp : st.sp;
    return base + static_cast<std::uint64_t>(o.offset);
  }

  std::uint64_t read_op(const MachineOperand& o) {
    switch (o.kind) {
      case MachineOperand::Kind::Reg:
        return st.regs[static_cast<std::size_t>(o.reg)];
      case MachineOperand::Kind::Imm:
        return static_cast<std::uint64_t>(o.value);
      case MachineOperand::Kind::SlotFP:
      case MachineOperand::Kind::SlotSP: {
        ++st.metrics.dynamic_load_count;
        if (o.spill) ++st.metrics.dynamic_spill_load_count;
        return peek(st.stack, addr_of(o));
      }
      default:
        fail("read of an empty operand");
    }
  }

  void write_op(const MachineOperand& o, std::uint64_t v) {
    switch (o.kind) {
      case MachineOperand::Kind::Reg:
        st.regs[static_cast<std::size_t>(o.reg)] = v;
        return;
      case MachineOperand::Kind::SlotFP:
      case MachineOperand::Kind::SlotSP:
        ++st.metrics.dynamic_store_count;
        if (o.spill) ++st.metrics.dynamic_spill_store_count;
        poke(st.stack, addr_of(o), v);
        return;
      default:
        fail("write to a non-location operand");
    }
  }

  std::uint64_t eval_alu(Opcode op, std::uint64_t a, std::uint64_t b) {
    switch (op) {
      case Opcode::Add:
        return a + b;
      case Opcode::Sub:
        return a - b;
      case Opcode::Mul:
        return a * b;
      case Opcode::Div: {
        auto sa = static_cast<std::int64_t>(a);
        auto sb = static_cast<std::int64_t>(b);
        if (sb == 0) fail("division by zero");
        if (sa == std::numeric_limits<std::int64_t>::min() && sb == -1)
          return a;  // wraps, like the arithmetic ops
        return static_cast<std::uint64_t>(sa / sb);
      }
      default:
        fail("bad ALU opcode");
    }
  }

  static bool eval_pred(CmpPred p, std::int64_t a, std::int64_t b) {
    switch (p) {
      case CmpPred::Eq:
        return a == b;
      case CmpPred::Ne:
        return a != b;
      case CmpPred::Lt:
        return a < b;
      case CmpPred::Le:
        return a <= b;
      case CmpPred::Gt:
        return a > b;
      case CmpPred::Ge:
        return a >= b;
    }
    return false;
  }

  void step(const MachineFunction& mf, const MachineInstr& ins) {
    ++st.metrics.dynamic_instruction_count;
    switch (ins.op) {
      case MOp::Mov:
        write_op(ins.dst, read_op(ins.a));
        ++st.pc;
        break;
      case MOp::Alu:
        write_op(ins.dst, eval_alu(ins.alu, read_op(ins.a), read_op(ins.b)));
        ++st.pc;
        break;
      case MOp::CmpSet: {
        auto a = static_cast<std::int64_t>(read_op(ins.a));
        auto b = static_cast<std::int64_t>(read_op(ins.b));
        write_op(ins.dst, eval_pred(ins.pred, a, b) ? 1 : 0);
        ++st.pc;
        break;
      }
      case MOp::Jump:
        st.pc = ins.target_a;
        break;
      case MOp::Branch:
        st.pc = read_op(ins.a) != 0 ? ins.target_a : ins.target_b;
        break;
      case MOp::CallFn: {
        if (opts_.checked && st.sp % 16 != 0)
          fail("stack pointer misaligned at call: sp=" +
               std::to_string(st.sp));
        std::uint64_t ra = (static_cast<std::uint64_t>(st.func) << 32) |
                           static_cast<std::uint64_t>(st.pc + 1);
        st.sp -= 8;
        poke(st.stack, st.sp, ra);
        ++st.depth;
        st.metrics.max_call_depth =
            std::max(st.metrics.max_call_depth, st.depth);
        st.func = ins.target_a;
        st.pc = 0;
        break;
      }
      case MOp::Ret: {
        std::uint64_t ra = peek(st.stack, st.sp);
        st.sp += 8;
        if (ra == kSentinelRa) {
          st.halted = true;
          st.exit_value = static_cast<std::int64_t>(
              st.regs[static_cast<std::size_t>(mp_.cc.return_register)]);
        } else {
          st.func = static_cast<std::size_t>(ra >> 32);
          st.pc = static_cast<std::size_t>(ra & 0xffffffffull);
          --st.depth;
        }
        break;
      }
      case MOp::Enter: {
        // Saved FP and RA pushes plus the callee-saved spray count as one
        // instruction and no data traffic; both frames lay them out
        // identically so they carry no cross-target signal.
        st.sp -= 8;
        poke(st.stack, st.sp, st.fp);
        st.fp = st.sp;
        std::uint64_t need =
            static_cast<std::uint64_t>(mf.layout.frame_size_bytes) - 16;
        if (st.sp < need + kRedZoneBytes) fail("stack overflow");
        st.sp -= need;
        for (const auto& [reg, off] : mf.layout.callee_saved_offsets)
          poke(st.stack, st.fp + static_cast<std::uint64_t>(off),
               st.regs[static_cast<std::size_t>(reg)]);
        ++st.pc;
        break;
      }
      case MOp::Leave: {
        for (const auto& [reg, off] : mf.layout.callee_saved_offsets)
          st.regs[static_cast<std::size_t>(reg)] =
              peek(st.stack, st.fp + static_cast<std::uint64_t>(off));
        st.sp = st.fp;
        st.fp = peek(st.stack, st.sp);
        st.sp += 8;
        ++st.pc;
        break;
      }
      case MOp::PrintVal:
        st.output +=
            std::to_string(static_cast<std::int64_t>(read_op(ins.a))) + "\n";
        ++st.pc;
        break;
      case MOp::EqPt:
        // handled in run_loop
        ++st.pc;
        break;
    }
  }
};

const FrameDescriptor& descriptor_for(const MetaIndex& meta,
                                      const ActivationRecord& rec) {
  return meta.at(rec.function, rec.site, rec.point);
}

void check_record_against(const ActivationRecord& rec,
                          const FrameDescriptor& desc) {
  if (rec.frame_size != desc.frame_size_bytes)
    throw std::runtime_error(
        "snapshot frame size mismatch in '" + rec.function + "': " +
        std::to_string(rec.frame_size) + " vs " +
        std::to_string(desc.frame_size_bytes));
  for (const auto& [name, loc] : desc.live_values) {
    (void)loc;
    if (!rec.bindings.count(name))
      throw std::runtime_error("snapshot missing binding for value '" + name +
                               "' in function '" + rec.function + "'");
  }
  for (const auto& [name, v] : rec.bindings) {
    (void)v;
    if (!desc.live_values.count(name))
      throw std::runtime_error("snapshot has stray binding for value '" +
                               name + "' in function '" + rec.function + "'");
  }
}

}  // namespace

VmError::VmError(const std::string& msg, std::string function, std::size_t pc)
    : std::runtime_error(msg + " (in " + function + " at instruction " +
                         std::to_string(pc) + ")"),
      function(std::move(function)),
      pc(pc) {}

StopPredicate stop_at_hit(std::uint64_t k) {
  if (k == 0) return {};
  return [k](std::uint64_t hits, const std::string&, std::int64_t) {
    return hits == k;
  };
}

RunResult run(const MachineProgram& mp, const std::vector<std::int64_t>& inputs,
              const VmOptions& opts) {
  Interp vm(mp, opts);
  vm.start(inputs);
  vm.run_loop(nullptr);
  return vm.finish();
}

PauseResult run_until_point(const MachineProgram& mp,
                            const std::vector<std::int64_t>& inputs,
                            const StopPredicate& stop,
                            const VmOptions& opts) {
  Interp vm(mp, opts);
  vm.start(inputs);
  PauseResult out;
  if (stop && !vm.run_loop(&stop)) {
    out.finished = false;
    out.state = std::move(vm.st);
    return out;
  }
  if (!vm.st.halted) vm.run_loop(nullptr);
  out.finished = true;
  out.result = vm.finish();
  return out;
}

RunResult resume(MachineState state, const MachineProgram& mp,
                 const VmOptions& opts) {
  Interp vm(mp, opts);
  vm.adopt(std::move(state));
  vm.run_loop(nullptr);
  return vm.finish();
}

void recompute_saved_callee(StackSnapshot& snap, const MetaIndex& meta) {
  std::map<int, std::uint64_t> sim;
  for (ActivationRecord& rec : snap.records) {
    const FrameDescriptor& desc = descriptor_for(meta, rec);
    rec.saved_callee.clear();
    for (const auto& [reg, off] : desc.callee_saved_layout) {
      (void)off;
      rec.saved_callee[reg] = sim[reg];
    }
    for (const auto& [name, loc] : desc.live_values) {
      if (loc.kind != Location::Kind::Reg) continue;
      auto it = rec.bindings.find(name);
      if (it == rec.bindings.end())
        throw std::runtime_error("snapshot missing binding for value '" +
                                 name + "' in function '" + rec.function +
                                 "'");
      sim[loc.reg] = it->second;
    }
  }
}

StackSnapshot capture_snapshot(const MachineState& state,
                               const MachineProgram& mp,
                               const MetaIndex& meta) {
  if (state.halted) throw std::runtime_error("cannot snapshot a halted state");
  const MachineFunction* mf = &mp.functions[state.func];
  if (!state.at_point || state.pc >= mf->code.size() ||
      mf->code[state.pc].op != MOp::EqPt)
    throw VmError("state is not paused at an equivalence point", mf->name,
                  state.pc);

  std::vector<ActivationRecord> recs;  // innermost first during the walk
  std::vector<std::uint64_t> regfile = state.regs;
  std::size_t fidx = state.func;
  std::uint64_t fp = state.fp;
  const FrameDescriptor* desc =
      &meta.at(mf->name, SiteKind::EqPoint, mf->code[state.pc].point);
  for (;;) {
    mf = &mp.functions[fidx];
    ActivationRecord rec;
    rec.function = mf->name;
    rec.site = desc->site;
    rec.point = desc->point;
    rec.frame_size = desc->frame_size_bytes;
    for (const auto& [name, loc] : desc->live_values)
      rec.bindings[name] =
          loc.kind == Location::Kind::Reg
              ? regfile[static_cast<std::size_t>(loc.reg)]
              : peek(state.stack, fp + static_cast<std::uint64_t>(loc.fp_offset));
    recs.push_back(std::move(rec));

    for (const auto& [reg, off] : mf->layout.callee_saved_offsets)
      regfile[static_cast<std::size_t>(reg)] =
          peek(state.stack, fp + static_cast<std::uint64_t>(off));
    std::uint64_t ra = peek(state.stack, fp + 8);
    std::uint64_t saved_fp = peek(state.stack, fp);
    if (ra == kSentinelRa) break;
    std::size_t caller = static_cast<std::size_t>(ra >> 32);
    std::size_t ret_pc = static_cast<std::size_t>(ra & 0xffffffffull);
    const MachineFunction& cf = mp.functions[caller];
    if (ret_pc == 0 || cf.code[ret_pc - 1].op != MOp::CallFn)
      throw std::runtime_error("corrupt return address while walking frames");
    desc = &meta.at(cf.name, SiteKind::CallSite, cf.code[ret_pc - 1].point);
    fidx = caller;
    fp = saved_fp;
  }
  std::reverse(recs.begin(), recs.end());
  StackSnapshot snap{std::move(recs)};
  recompute_saved_callee(snap, meta);
  return snap;
}

MachineState restore_snapshot(const StackSnapshot& snap,
                              const MachineProgram& mp, const MetaIndex& meta,
                              const VmOptions& opts) {
  if (snap.records.empty())
    throw std::runtime_error("cannot restore an empty snapshot");
  std::vector<const FrameDescriptor*> descs;
  std::vector<std::size_t> fidxs;
  for (std::size_t i = 0; i < snap.records.size(); ++i) {
    const ActivationRecord& rec = snap.records[i];
    bool last = i + 1 == snap.records.size();
    if (last != (rec.site == SiteKind::EqPoint))
      throw std::runtime_error(
          "snapshot shape invalid: only the innermost frame may rest at an "
          "equivalence point");
    const FrameDescriptor& desc = descriptor_for(meta, rec);
    check_record_against(rec, desc);
    descs.push_back(&desc);
    fidxs.push_back(mp.function_index(rec.function));
  }

  MachineState st;
  st.regs.assign(static_cast<std::size_t>(mp.isa.gpr_count), 0);
  st.stack.assign(opts.stack_size, 0);

  const MachineFunction& outer = mp.functions[fidxs.front()];
  std::size_t nreg = mp.cc.arg_registers.size();
  std::uint64_t overflow =
      outer.arity > nreg ? align16(8 * (outer.arity - nreg)) : 0;
  std::uint64_t sp = st.stack.size() - overflow;

  std::map<int, std::uint64_t> sim;
  std::uint64_t ra_token = kSentinelRa;
  std::uint64_t fp = 0;
  for (std::size_t i = 0; i < snap.records.size(); ++i) {
    const ActivationRecord& rec = snap.records[i];
    const FrameDescriptor& desc = *descs[i];
    sp -= 8;
    poke(st.stack, sp, ra_token);
    sp -= 8;
    poke(st.stack, sp, fp);
    fp = sp;
    sp -= static_cast<std::uint64_t>(desc.frame_size_bytes) - 16;
    for (const auto& [reg, off] : desc.callee_saved_layout)
      poke(st.stack, fp + static_cast<std::uint64_t>(off), sim[reg]);
    for (const auto& [name, loc] : desc.live_values) {
      std::uint64_t v = rec.bindings.at(name);
      if (loc.kind == Location::Kind::Reg)
        sim[loc.reg] = v;
      else
        poke(st.stack, fp + static_cast<std::uint64_t>(loc.fp_offset), v);
    }
    if (i + 1 < snap.records.size()) {
      const MachineFunction& mf = mp.functions[fidxs[i]];
      auto it = mf.call_index.find(rec.point);
      if (it == mf.call_index.end())
        throw std::runtime_error("no call site " + std::to_string(rec.point) +
                                 " in function '" + rec.function + "'");
      ra_token = (static_cast<std::uint64_t>(fidxs[i]) << 32) |
                 static_cast<std::uint64_t>(it->second + 1);
    }
  }

  st.sp = sp;
  st.fp = fp;
  st.func = fidxs.back();
  const MachineFunction& inner = mp.functions[st.func];
  auto it = inner.eq_index.find(snap.records.back().point);
  if (it == inner.eq_index.end())
    throw std::runtime_error("no equivalence point " +
                             std::to_string(snap.records.back().point) +
                             " in function '" + inner.name + "'");
  st.pc = it->second;
  st.at_point = true;
  for (const auto& [reg, v] : sim)
    st.regs[static_cast<std::size_t>(reg)] = v;
  st.depth = snap.records.size();
  st.metrics.max_call_depth = st.depth;
  return st;
}

std::string snapshot_to_json(const StackSnapshot& snap) {
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (const ActivationRecord& rec : snap.records) {
    nlohmann::json r;
    r["function"] = rec.function;
    r["site"] = rec.site == SiteKind::EqPoint ? "eq" : "call";
    r["point"] = rec.point;
    r["frame_size"] = rec.frame_size;
    r["bindings"] = nlohmann::json::array();
    for (const auto& [name, v] : rec.bindings) {
      nlohmann::json b;
      b["value"] = name;
      b["val"] = static_cast<std::int64_t>(v);
      r["bindings"].push_back(b);
    }
    r["callee_saved"] = nlohmann::json::array();
    for (const auto& [reg, v] : rec.saved_callee) {
      nlohmann::json s;
      s["reg"] = reg;
      s["val"] = static_cast<std::int64_t>(v);
      r["callee_saved"].push_back(s);
    }
    j["records"].push_back(r);
  }
  return j.dump(2) + "\n";
}

StackSnapshot snapshot_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  StackSnapshot snap;
  for (const auto& r : j.at("records")) {
    ActivationRecord rec;
    rec.function = r.at("function").get<std::string>();
    std::string site = r.at("site").get<std::string>();
    if (site == "eq")
      rec.site = SiteKind::EqPoint;
    else if (site == "call")
      rec.site = SiteKind::CallSite;
    else
      throw std::runtime_error("unknown snapshot site kind: " + site);
    rec.point = r.at("point").get<std::int64_t>();
    rec.frame_size = r.at("frame_size").get<std::int64_t>();
    for (const auto& b : r.at("bindings"))
      rec.bindings[b.at("value").get<std::string>()] =
          static_cast<std::uint64_t>(b.at("val").get<std::int64_t>());
    for (const auto& s : r.at("callee_saved"))
      rec.saved_callee[s.at("reg").get<int>()] =
          static_cast<std::uint64_t>(s.at("val").get<std::int64_t>());
    snap.records.push_back(std::move(rec));
  }
  return snap;
}

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u64(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

struct BinReader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;
  std::uint64_t u64() {
    if (pos + 8 > b.size()) throw std::runtime_error("truncated snapshot");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(b[pos + static_cast<std::size_t>(i)])
           << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    std::uint64_t n = u64();
    if (pos + n > b.size()) throw std::runtime_error("truncated snapshot");
    std::string s(b.begin() + static_cast<std::ptrdiff_t>(pos),
                  b.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<std::uint8_t> snapshot_to_binary(const StackSnapshot& snap) {
  std::vector<std::uint8_t> out = {'U', 'S', 'N', 'P'};
  put_u64(out, 1);  // version
  put_u64(out, snap.records.size());
  for (const ActivationRecord& rec : snap.records) {
    put_str(out, rec.function);
    out.push_back(rec.site == SiteKind::EqPoint ? 0 : 1);
    put_u64(out, static_cast<std::uint64_t>(rec.point));
    put_u64(out, static_cast<std::uint64_t>(rec.frame_size));
    put_u64(out, rec.bindings.size());
    for (const auto& [name, v] : rec.bindings) {
      put_str(out, name);
      put_u64(out, v);
    }
    put_u64(out, rec.saved_callee.size());
    for (const auto& [reg, v] : rec.saved_callee) {
      put_u64(out, static_cast<std::uint64_t>(reg));
      put_u64(out, v);
    }
  }
  return out;
}

StackSnapshot snapshot_from_binary(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || bytes[0] != 'U' || bytes[1] != 'S' ||
      bytes[2] != 'N' || bytes[3] != 'P')
    throw std::runtime_error("bad snapshot magic");
  BinReader r{bytes, 4};
  if (r.u64() != 1) throw std::runtime_error("unsupported snapshot version");
  StackSnapshot snap;
  std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    ActivationRecord rec;
    rec.function = r.str();
    if (r.pos >= bytes.size()) throw std::runtime_error("truncated snapshot");
    rec.site = bytes[r.pos++] == 0 ? SiteKind::EqPoint : SiteKind::CallSite;
    rec.point = static_cast<std::int64_t>(r.u64());
    rec.frame_size = static_cast<std::int64_t>(r.u64());
    std::uint64_t nb = r.u64();
    for (std::uint64_t k = 0; k < nb; ++k) {
      std::string name = r.str();
      rec.bindings[name] = r.u64();
    }
    std::uint64_t ns = r.u64();
    for (std::uint64_t k = 0; k < ns; ++k) {
      int reg = static_cast<int>(r.u64());
      rec.saved_callee[reg] = r.u64();
    }
    snap.records.push_back(std::move(rec));
  }
  return snap;
}

}  // namespace unistack
