#include "unistack/experiments.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace unistack {

namespace {

std::vector<KernelDef> build_kernels() {
  std::vector<KernelDef> ks;

  // Pure dependence chain; never needs more than two registers, so it stays
  // spill-free even on the narrowest register file.
  ks.push_back({"stencil", R"(fn main(p0) {
  eqpoint 0
  iv = mul p0, 0
L0:
  eqpoint 1
  t = cmp ge iv, 12
  branch t, L2, L1
L1:
  iv = add iv, 1
  jump L0
L2:
  print iv
  return iv
}
)",
                {7}});

  ks.push_back({"triple_loop", R"(fn main(p0) {
  eqpoint 0
  acc = mul p0, 1
  i = mul p0, 0
Li:
  eqpoint 1
  ti = cmp ge i, 3
  branch ti, Lid, Lib
Lib:
  j = mul i, 0
Lj:
  tj = cmp ge j, 3
  branch tj, Ljd, Ljb
Ljb:
  kk = mul j, 0
Lk:
  tk = cmp ge kk, 2
  branch tk, Lkd, Lkb
Lkb:
  acc = add acc, kk
  acc = add acc, j
  acc = sub acc, i
  kk = add kk, 1
  jump Lk
Lkd:
  j = add j, 1
  jump Lj
Ljd:
  i = add i, 1
  jump Li
Lid:
  print acc
  return acc
}
)",
                {2}});

  ks.push_back({"rec_reduce", R"(fn main(p0) {
  eqpoint 0
  n = div p0, 1
  r = call rec(n)
  eqpoint 1
  out = add r, n
  print out
  return out
}

fn rec(n) {
  t = cmp le n, 0
  branch t, Lb, Lr
Lb:
  z = mul n, 0
  eqpoint 2
  return z
Lr:
  m = sub n, 1
  s = call rec(m)
  eqpoint 3
  u = add s, n
  return u
}
)",
                {6}});

  {
    // 24 simultaneously live values: spills on a 17-register file, none on
    // the full 32.
    std::ostringstream os;
    os << "fn main(p0) {\n  eqpoint 0\n";
    for (int i = 1; i <= 24; ++i)
      os << "  a" << i << " = add p0, " << i << "\n";
    os << "  eqpoint 1\n";
    os << "  s = add a1, a2\n";
    for (int i = 3; i <= 24; ++i) os << "  s = add s, a" << i << "\n";
    os << "  print s\n  return s\n}\n";
    ks.push_back({"high_pressure", os.str(), {3}});
  }

  ks.push_back({"call_heavy", R"(fn main(p0) {
  eqpoint 0
  a = add p0, 2
  r1 = call helper(a)
  eqpoint 1
  b = add r1, a
  r2 = call helper(b)
  eqpoint 2
  c = add r2, b
  r3 = call helper(c)
  eqpoint 3
  d = add r3, 1
  print d
  return d
}

fn helper(q) {
  e = mul q, 3
  f = add e, 5
  return f
}
)",
                {5}});

  ks.push_back({"mixed", R"(fn main(p0) {
  local buf 8
  eqpoint 0
  acc = add p0, 0
  i = mul p0, 0
L0:
  eqpoint 1
  t = cmp ge i, 4
  branch t, L2, L1
L1:
  v = call step(acc)
  acc = add v, i
  i = add i, 1
  jump L0
L2:
  store-local buf, acc
  u1 = load-local buf
  u2 = load-local buf
  w = add u1, u2
  print w
  return w
}

fn step(q) {
  r = mul q, 2
  s = sub r, 1
  return s
}
)",
                {3}});

  return ks;
}

}  // namespace

const std::vector<KernelDef>& kernel_suite() {
  static const std::vector<KernelDef> ks = build_kernels();
  return ks;
}

const KernelDef& kernel_by_name(const std::string& name) {
  for (const KernelDef& k : kernel_suite())
    if (k.name == name) return k;
  throw ValidationError("unknown kernel: " + name);
}

Program kernel_program(const std::string& name) {
  return parse_program(kernel_by_name(name).text);
}

Program recursion_chain(int k) {
  if (k < 2) throw ValidationError("recursion chain needs k >= 2");
  std::ostringstream os;
  os << "fn main(p0) {\n";
  for (int j = 1; j <= k; ++j)
    os << "  c" << j << " = add p0, " << j << "\n";
  os << "  t = cmp le p0, 0\n  branch t, Lbase, Lrec\nLbase:\n  eqpoint 0\n";
  os << "  s = add c1, c2\n";
  for (int j = 3; j <= k; ++j) os << "  s = add s, c" << j << "\n";
  os << "  print s\n  return s\nLrec:\n";
  os << "  d = sub p0, 1\n  r = call main(d)\n";
  os << "  u = add r, c1\n";
  for (int j = 2; j <= k; ++j) os << "  u = add u, c" << j << "\n";
  os << "  return u\n}\n";
  return parse_program(os.str());
}

SweepResult sweep_registers(const Program& p, const std::string& label,
                            const std::vector<std::int64_t>& inputs,
                            int regs_lo, int regs_hi,
                            const LowerOptions& lopts) {
  if (regs_lo > regs_hi)
    throw ValidationError("empty register sweep range");
  SweepResult out;
  out.program = label;
  for (int n = regs_lo; n <= regs_hi; ++n) {
    ISADescriptor isa = armlike_n(n);
    CallingConvention cc = default_convention(isa);
    TargetContext t = make_target(p, isa, cc, lopts);
    RunResult r = run(t.low.prog, inputs);

    SweepRow row;
    row.regs = n;
    row.allocatable = static_cast<int>(allocatable_registers(isa).size());
    for (const MachineFunction& mf : t.low.prog.functions)
      row.spill_slots += mf.layout.spill_offsets.size();
    row.spill_loads = r.metrics.dynamic_spill_load_count;
    row.spill_stores = r.metrics.dynamic_spill_store_count;
    row.dynamic_instructions = r.metrics.dynamic_instruction_count;
    row.exit_value = r.exit_value;

    int callee_alloc = 0;
    {
      std::vector<int> allocv = allocatable_registers(isa);
      std::set<int> alloc(allocv.begin(), allocv.end());
      for (int reg : cc.callee_saved)
        if (alloc.count(reg)) ++callee_alloc;
    }
    row.no_spill_expected = true;
    Program lowered_src = lopts.load_elim ? eliminate_redundant_loads(p) : p;
    for (const Function& f : lowered_src.functions) {
      LiveInfo live = liveness(f);
      // The allocator works over conservative whole intervals, so the
      // prediction has to count interval overlap, not pointwise liveness.
      int n_values = static_cast<int>(live.value_names.size());
      std::vector<int> first(static_cast<std::size_t>(n_values), 1 << 30);
      std::vector<int> last(static_cast<std::size_t>(n_values), -(1 << 30));
      auto touch = [&](int v, int pos) {
        first[static_cast<std::size_t>(v)] =
            std::min(first[static_cast<std::size_t>(v)], pos);
        last[static_cast<std::size_t>(v)] =
            std::max(last[static_cast<std::size_t>(v)], pos);
      };
      for (int v = 0; v < static_cast<int>(f.params.size()); ++v) touch(v, -1);
      for (std::size_t i = 0; i < f.body.size(); ++i) {
        int ii = static_cast<int>(i);
        for (int v : live.live_in[i]) touch(v, ii);
        for (int v : live.live_out[i]) touch(v, ii);
        for (const Operand& o : f.body[i].args)
          if (!o.is_imm) touch(live.value_ids.at(o.id), ii);
        if (live.def_at[i] >= 0) touch(live.def_at[i], ii);
      }
      for (int pos = -1; pos < static_cast<int>(f.body.size()); ++pos) {
        int overlap = 0;
        for (int v = 0; v < n_values; ++v)
          if (first[static_cast<std::size_t>(v)] <= pos &&
              pos <= last[static_cast<std::size_t>(v)])
            ++overlap;
        if (overlap > row.allocatable) row.no_spill_expected = false;
      }
      std::set<int> crossing;
      for (std::size_t i = 0; i < f.body.size(); ++i) {
        if (f.body[i].op != Opcode::Call) continue;
        for (int v : live.live_out[i]) {
          if (!f.body[i].result.empty() &&
              v == live.value_ids.at(f.body[i].result))
            continue;
          crossing.insert(v);
        }
      }
      if (static_cast<int>(crossing.size()) > callee_alloc)
        row.no_spill_expected = false;
    }
    out.rows.push_back(row);
  }
  const SweepRow& base = out.rows.back();  // widest register file
  for (SweepRow& row : out.rows)
    row.overhead_pct =
        100.0 *
        (static_cast<double>(row.dynamic_instructions) -
         static_cast<double>(base.dynamic_instructions)) /
        static_cast<double>(base.dynamic_instructions);
  return out;
}

ScaleResult transform_scaling(const std::vector<int>& ks, int max_frames) {
  ISADescriptor a = x86like(), b = armlike();
  CallingConvention cca = default_convention(a), ccb = default_convention(b);
  ScaleResult out;
  for (int k : ks) {
    Program p = recursion_chain(k);
    TargetContext src = make_target(p, a, cca);
    TargetContext dst = make_target(p, b, ccb);
    for (int n = 1; n <= max_frames; ++n) {
      PauseResult pause =
          run_until_point(src.low.prog, {n - 1}, stop_at_hit(1));
      if (pause.finished)
        throw MigrationError("recursion chain finished before its base case");
      StackSnapshot snap =
          capture_snapshot(pause.state, src.low.prog, src.meta);
      TransformResult tr = transform_stack(snap, src.meta, dst.meta);
      ScaleRow row;
      row.k = k;
      row.frames = static_cast<int>(tr.stats.frames_processed);
      row.values_moved = tr.stats.values_moved;
      row.callee_saved_moved = tr.stats.callee_saved_moved;
      row.op_count = tr.stats.op_count;
      row.bytes_written = tr.stats.bytes_written;
      out.rows.push_back(row);
    }
  }
  return out;
}

UniformVerifyResult verify_uniform(std::uint64_t seed_lo,
                                   std::uint64_t seed_hi,
                                   const GeneratorConfig& base,
                                   const LowerOptions& lopts) {
  UniformAbi u = make_uniform_abi(x86like(), armlike());
  UniformVerifyResult out;
  for (std::uint64_t seed = seed_lo; seed <= seed_hi; ++seed) {
    GeneratorConfig cfg = base;
    cfg.seed = seed;
    Program p = generate_program(cfg);
    ++out.seeds;
    auto note = [&](const std::string& what) {
      out.failures.push_back("seed " + std::to_string(seed) + ": " + what);
    };
    try {
      TargetContext a = make_target(p, u.a, u.cc, lopts);
      TargetContext b = make_target(p, u.b, u.cc, lopts);
      LayoutDiff diff = diff_layout(p, a.low.meta, b.low.meta, u.map);
      if (!diff.empty()) {
        const LayoutDivergence& d = diff.divergences.front();
        note("layout divergence at " + d.function + "/" + d.site + "/" +
             std::to_string(d.point) + " " + d.value + " (" + d.cause + ")");
        continue;
      }
      std::vector<std::int64_t> inputs = {
          static_cast<std::int64_t>(seed % 7)};
      RunResult ra = run(a.low.prog, inputs);
      RunResult rb = run(b.low.prog, inputs);
      if (ra.exit_value != rb.exit_value || ra.output != rb.output) {
        note("cross-target run divergence");
        continue;
      }
      for (std::uint64_t h = 1; h <= ra.metrics.equivalence_points_hit; ++h) {
        for (int dir = 0; dir < 2; ++dir) {
          const TargetContext& s = dir == 0 ? a : b;
          const TargetContext& d = dir == 0 ? b : a;
          MigrationOptions mo;
          mo.mode = MigrationMode::Uniform;
          mo.stop_at_hit = h;
          mo.inputs = inputs;
          MigrationReport rep = migrate(p, s, d, u.map, mo);
          ++out.migrations;
          if (!rep.taken) {
            note("stop " + std::to_string(h) + " never fired");
          } else if (!rep.semantic_ok) {
            note("semantic divergence at stop " + std::to_string(h) +
                 " direction " + (dir == 0 ? "a->b" : "b->a"));
          }
        }
      }
    } catch (const std::exception& e) {
      note(e.what());
    }
  }
  return out;
}

bool FaultCheckResult::all_detected() const {
  if (rows.empty()) return false;
  for (const FaultCheckRow& r : rows)
    if (!r.diverged || !r.convention_cause) return false;
  return true;
}

FaultCheckResult verify_convention_fault(const LowerOptions& lopts) {
  UniformAbi u = make_uniform_abi(x86like(), armlike());
  CallingConvention faulty = inject_convention_fault(u.cc);
  FaultCheckResult out;
  for (const KernelDef& k : kernel_suite()) {
    Program p = parse_program(k.text);
    TargetContext a = make_target(p, u.a, u.cc, lopts);
    TargetContext b = make_target(p, u.b, faulty, lopts);
    LayoutDiff diff = diff_layout(p, a.low.meta, b.low.meta, u.map);
    FaultCheckRow row;
    row.kernel = k.name;
    row.diverged = !diff.empty();
    for (const LayoutDivergence& d : diff.divergences) {
      if (d.cause != "convention") continue;
      row.convention_cause = true;
      row.first = d.function + "/" + d.site + "/" + std::to_string(d.point) +
                  " " + d.value + ": " + d.loc_a + " vs " + d.loc_b;
      break;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

namespace {

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string sweep_to_csv(const SweepResult& r) {
  std::ostringstream os;
  os << "program,regs,allocatable,spill_slots,spill_loads,spill_stores,"
        "dynamic_instructions,overhead_pct,exit_value,no_spill_expected\n";
  for (const SweepRow& row : r.rows)
    os << r.program << ',' << row.regs << ',' << row.allocatable << ','
       << row.spill_slots << ',' << row.spill_loads << ',' << row.spill_stores
       << ',' << row.dynamic_instructions << ',' << fmt_pct(row.overhead_pct)
       << ',' << row.exit_value << ',' << (row.no_spill_expected ? 1 : 0)
       << '\n';
  return os.str();
}

std::string sweep_to_json(const SweepResult& r) {
  nlohmann::json j;
  j["version"] = 1;
  j["program"] = r.program;
  j["rows"] = nlohmann::json::array();
  for (const SweepRow& row : r.rows) {
    nlohmann::json e;
    e["regs"] = row.regs;
    e["allocatable"] = row.allocatable;
    e["spill_slots"] = row.spill_slots;
    e["spill_loads"] = row.spill_loads;
    e["spill_stores"] = row.spill_stores;
    e["dynamic_instructions"] = row.dynamic_instructions;
    e["overhead_pct"] = row.overhead_pct;
    e["exit_value"] = row.exit_value;
    e["no_spill_expected"] = row.no_spill_expected;
    j["rows"].push_back(e);
  }
  return j.dump(2) + "\n";
}

std::string scale_to_csv(const ScaleResult& r) {
  std::ostringstream os;
  os << "k,frames,values_moved,callee_saved_moved,op_count,bytes_written\n";
  for (const ScaleRow& row : r.rows)
    os << row.k << ',' << row.frames << ',' << row.values_moved << ','
       << row.callee_saved_moved << ',' << row.op_count << ','
       << row.bytes_written << '\n';
  return os.str();
}

std::string scale_to_json(const ScaleResult& r) {
  nlohmann::json j;
  j["version"] = 1;
  j["rows"] = nlohmann::json::array();
  for (const ScaleRow& row : r.rows) {
    nlohmann::json e;
    e["k"] = row.k;
    e["frames"] = row.frames;
    e["values_moved"] = row.values_moved;
    e["callee_saved_moved"] = row.callee_saved_moved;
    e["op_count"] = row.op_count;
    e["bytes_written"] = row.bytes_written;
    j["rows"].push_back(e);
  }
  return j.dump(2) + "\n";
}

std::string uniform_to_json(const UniformVerifyResult& r,
                            std::uint64_t seed_lo, std::uint64_t seed_hi) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed_lo"] = seed_lo;
  j["seed_hi"] = seed_hi;
  j["seeds"] = r.seeds;
  j["migrations"] = r.migrations;
  j["ok"] = r.ok();
  j["failures"] = r.failures;
  return j.dump(2) + "\n";
}

std::string fault_to_json(const FaultCheckResult& r) {
  nlohmann::json j;
  j["version"] = 1;
  j["all_detected"] = r.all_detected();
  j["kernels"] = nlohmann::json::array();
  for (const FaultCheckRow& row : r.rows) {
    nlohmann::json e;
    e["kernel"] = row.kernel;
    e["diverged"] = row.diverged;
    e["convention_cause"] = row.convention_cause;
    e["first_divergence"] = row.first;
    j["kernels"].push_back(e);
  }
  return j.dump(2) + "\n";
}

}  // namespace unistack
