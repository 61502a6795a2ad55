// unistack: compile, run, migrate and measure programs on the two abstract
// targets, with or without the uniform stack layout.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "unistack/experiments.hpp"

namespace {

using namespace unistack;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Writes through a temporary and renames, so failures leave no partial file.
void write_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  std::filesystem::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw UsageError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty())
    std::cout << content;
  else
    write_atomic(out_path, content);
}

struct TargetSpec {
  ISADescriptor isa;
  CallingConvention cc;
};

TargetSpec resolve_isa(const std::string& name) {
  if (std::filesystem::exists(name)) {
    auto [isa, cc] = isa_from_json(slurp(name));
    return {isa, cc};
  }
  ISADescriptor isa = preset_by_name(name);
  return {isa, default_convention(isa)};
}

Program load_program(const std::string& file, const std::string& kernel) {
  if (!kernel.empty()) return kernel_program(kernel);
  if (file.empty()) throw UsageError("no input program (file or --kernel)");
  return parse_program(slurp(file));
}

// Shared flags for subcommands that lower a program.
struct CompileFlags {
  std::string file, kernel;
  std::string isa = "x86like";
  std::string to = "armlike";
  bool uniform = false;
  std::string load_elim = "off";
  std::string checked = "on";
  LowerOptions lopts() const { return {load_elim == "on"}; }
  VmOptions vopts() const {
    VmOptions v;
    v.checked = checked == "on";
    return v;
  }
};

void add_program_opts(CLI::App* cmd, CompileFlags& fl, bool with_dst) {
  cmd->add_option("program", fl.file, "IR source file");
  cmd->add_option("--kernel", fl.kernel, "use a built-in kernel instead");
  cmd->add_option("--isa", fl.isa, "target preset or isa.json path");
  if (with_dst) cmd->add_option("--to", fl.to, "destination target");
  cmd->add_flag("--uniform", fl.uniform, "lower under the uniform ABI");
  cmd->add_option("--load-elim", fl.load_elim, "redundant load elimination")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--checked", fl.checked, "per-step machine checks")
      ->check(CLI::IsMember({"on", "off"}));
}

// Picks the uniform-side descriptor whose base preset matches `name`.
ISADescriptor uniform_side(const UniformAbi& u, const std::string& name) {
  if (u.a.name.rfind(name, 0) == 0) return u.a;
  if (u.b.name.rfind(name, 0) == 0) return u.b;
  throw UsageError("no uniform target derived from " + name);
}

struct Pair {
  TargetContext src, dst;
  RegisterMap map;
};

Pair build_pair(const Program& p, const CompileFlags& fl,
                bool faulty_dst = false) {
  Pair out;
  if (fl.uniform) {
    UniformAbi u = make_uniform_abi(x86like(), armlike());
    CallingConvention dst_cc = faulty_dst ? inject_convention_fault(u.cc) : u.cc;
    out.src = make_target(p, uniform_side(u, fl.isa), u.cc, fl.lopts());
    out.dst = make_target(p, uniform_side(u, fl.to), dst_cc, fl.lopts());
    out.map = u.map;
  } else {
    TargetSpec s = resolve_isa(fl.isa);
    TargetSpec d = resolve_isa(fl.to);
    CallingConvention dst_cc = faulty_dst ? inject_convention_fault(d.cc) : d.cc;
    out.src = make_target(p, s.isa, s.cc, fl.lopts());
    out.dst = make_target(p, d.isa, d.cc, fl.lopts());
    out.map = positional_register_map(out.src.isa, out.dst.isa);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heterogeneous-migration toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a random program");
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen_cmd = gen;
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--out", gen_out, "output path (default stdout)");

  // compile
  auto* compile = app.add_subcommand("compile", "lower a program to metadata "
                                                "and machine code");
  CompileFlags cfl;
  add_program_opts(compile, cfl, false);
  std::string compile_out;
  compile->add_option("--out", compile_out,
                      "output basename (BASE.mprog.json, BASE.meta.json)")
      ->required();

  // run
  auto* runc = app.add_subcommand("run", "execute a program on one target");
  CompileFlags rfl;
  add_program_opts(runc, rfl, false);
  std::vector<std::int64_t> run_inputs;
  std::string run_report, run_out;
  runc->add_option("--input", run_inputs, "entry arguments");
  runc->add_option("--report", run_report, "emit a metrics report")
      ->check(CLI::IsMember({"json"}));
  runc->add_option("--out", run_out, "report path (default stdout)");

  // migrate
  auto* mig = app.add_subcommand("migrate", "run, move the stack across "
                                            "targets, resume");
  CompileFlags mfl;
  add_program_opts(mig, mfl, true);
  std::vector<std::int64_t> mig_inputs;
  std::uint64_t mig_stop = 1;
  std::string mig_report = "json", mig_out;
  mig->add_option("--input", mig_inputs, "entry arguments");
  mig->add_option("--stop-at-point", mig_stop,
                  "migrate at the k-th equivalence point hit");
  mig->add_option("--report", mig_report, "report format")
      ->check(CLI::IsMember({"json"}));
  mig->add_option("--out", mig_out, "report path (default stdout)");

  // diff
  auto* diffc = app.add_subcommand("diff", "compare frame layouts across "
                                           "targets");
  CompileFlags dfl;
  add_program_opts(diffc, dfl, true);
  std::string diff_fault, diff_out;
  diffc->add_option("--inject-fault", diff_fault,
                    "perturb the destination convention")
      ->check(CLI::IsMember({"convention"}));
  diffc->add_option("--out", diff_out, "report path (default stdout)");

  // sweep-regs
  auto* sweep = app.add_subcommand("sweep-regs", "register-depth sweep");
  CompileFlags sfl;
  add_program_opts(sweep, sfl, false);
  int sweep_hi = 32;
  std::vector<std::int64_t> sweep_inputs;
  std::string sweep_report = "csv", sweep_out;
  sweep->add_option("--regs", sweep_hi, "widest register file (sweep is 4..N)")
      ->check(CLI::Range(4, 32));
  sweep->add_option("--input", sweep_inputs, "entry arguments");
  sweep->add_option("--report", sweep_report, "report format")
      ->check(CLI::IsMember({"json", "csv"}));
  sweep->add_option("--out", sweep_out, "report path (default stdout)");

  // scale-transform
  auto* scale = app.add_subcommand("scale-transform",
                                   "transform cost vs frame count");
  std::vector<int> scale_ks = {6, 9, 12};
  int scale_frames = 100;
  std::string scale_report = "csv", scale_out;
  scale->add_option("--live", scale_ks, "live values per frame (grid)");
  scale->add_option("--frames", scale_frames, "largest frame count")
      ->check(CLI::Range(1, 100000));
  scale->add_option("--report", scale_report, "report format")
      ->check(CLI::IsMember({"json", "csv"}));
  scale->add_option("--out", scale_out, "report path (default stdout)");

  // verify-uniform
  auto* verify = app.add_subcommand("verify-uniform",
                                    "prove transformation-free migration "
                                    "over random programs");
  std::uint64_t verify_seed = 0, verify_count = 200;
  std::string verify_fault, verify_out, verify_load_elim = "off";
  verify->add_option("--seed", verify_seed, "first seed");
  verify->add_option("--seeds", verify_count, "number of seeds");
  verify->add_option("--load-elim", verify_load_elim, "lower with load "
                                                      "elimination")
      ->check(CLI::IsMember({"on", "off"}));
  verify->add_option("--inject-fault", verify_fault,
                     "check that a convention fault is caught")
      ->check(CLI::IsMember({"convention"}));
  verify->add_option("--out", verify_out, "report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      GeneratorConfig cfg;
      cfg.seed = gen_seed;
      emit(gen_out, print_program(generate_program(cfg)));
      return 0;
    }

    if (*compile) {
      Program p = load_program(cfl.file, cfl.kernel);
      TargetContext t;
      if (cfl.uniform) {
        UniformAbi u = make_uniform_abi(x86like(), armlike());
        t = make_target(p, uniform_side(u, cfl.isa), u.cc, cfl.lopts());
      } else {
        TargetSpec s = resolve_isa(cfl.isa);
        t = make_target(p, s.isa, s.cc, cfl.lopts());
      }
      write_atomic(compile_out + ".mprog.json", mprog_to_json(t.low.prog));
      write_atomic(compile_out + ".meta.json", meta_to_json(t.low.meta));
      return 0;
    }

    if (*runc) {
      Program p = load_program(rfl.file, rfl.kernel);
      TargetContext t;
      if (rfl.uniform) {
        UniformAbi u = make_uniform_abi(x86like(), armlike());
        t = make_target(p, uniform_side(u, rfl.isa), u.cc, rfl.lopts());
      } else {
        TargetSpec s = resolve_isa(rfl.isa);
        t = make_target(p, s.isa, s.cc, rfl.lopts());
      }
      if (run_inputs.empty() && !rfl.kernel.empty())
        run_inputs = kernel_by_name(rfl.kernel).inputs;
      RunResult r = run(t.low.prog, run_inputs, rfl.vopts());
      if (run_report.empty()) {
        std::cout << r.output;
        std::cout << "exit " << r.exit_value << "\n";
      } else {
        nlohmann::json j;
        j["exit_value"] = r.exit_value;
        j["output"] = r.output;
        j["isa"] = t.isa.name;
        j["dynamic_instruction_count"] = r.metrics.dynamic_instruction_count;
        j["dynamic_load_count"] = r.metrics.dynamic_load_count;
        j["dynamic_store_count"] = r.metrics.dynamic_store_count;
        j["dynamic_spill_load_count"] = r.metrics.dynamic_spill_load_count;
        j["dynamic_spill_store_count"] = r.metrics.dynamic_spill_store_count;
        j["max_call_depth"] = r.metrics.max_call_depth;
        j["equivalence_points_hit"] = r.metrics.equivalence_points_hit;
        emit(run_out, j.dump(2) + "\n");
      }
      return 0;
    }

    if (*mig) {
      Program p = load_program(mfl.file, mfl.kernel);
      Pair pair = build_pair(p, mfl);
      MigrationOptions mo;
      mo.mode = mfl.uniform ? MigrationMode::Uniform : MigrationMode::Transform;
      mo.stop_at_hit = mig_stop;
      if (mig_inputs.empty() && !mfl.kernel.empty())
        mig_inputs = kernel_by_name(mfl.kernel).inputs;
      mo.inputs = mig_inputs;
      mo.vm = mfl.vopts();
      MigrationReport rep = migrate(p, pair.src, pair.dst, pair.map, mo);
      emit(mig_out, report_to_json(rep));
      return rep.semantic_ok ? 0 : 1;
    }

    if (*diffc) {
      Program p = load_program(dfl.file, dfl.kernel);
      Pair pair = build_pair(p, dfl, diff_fault == "convention");
      LayoutDiff diff =
          diff_layout(p, pair.src.low.meta, pair.dst.low.meta, pair.map);
      emit(diff_out, diff_to_json(diff));
      return diff.empty() ? 0 : 1;
    }

    if (*sweep) {
      Program p = load_program(sfl.file, sfl.kernel);
      std::vector<std::int64_t> inputs = sweep_inputs;
      if (inputs.empty() && !sfl.kernel.empty())
        inputs = kernel_by_name(sfl.kernel).inputs;
      std::string label = sfl.kernel.empty() ? sfl.file : sfl.kernel;
      SweepResult r =
          sweep_registers(p, label, inputs, 4, sweep_hi, sfl.lopts());
      emit(sweep_out,
           sweep_report == "csv" ? sweep_to_csv(r) : sweep_to_json(r));
      return 0;
    }

    if (*scale) {
      ScaleResult r = transform_scaling(scale_ks, scale_frames);
      emit(scale_out,
           scale_report == "csv" ? scale_to_csv(r) : scale_to_json(r));
      return 0;
    }

    if (*verify) {
      if (verify_fault == "convention") {
        FaultCheckResult r =
            verify_convention_fault({verify_load_elim == "on"});
        emit(verify_out, fault_to_json(r));
        // Divergence is the expected outcome: the fault must be caught.
        if (!r.all_detected()) {
          std::cerr << "fault went undetected on at least one kernel\n";
        }
        return r.all_detected() ? 1 : 0;
      }
      if (verify_count == 0) throw UsageError("--seeds must be positive");
      UniformVerifyResult r =
          verify_uniform(verify_seed, verify_seed + verify_count - 1, {},
                         {verify_load_elim == "on"});
      emit(verify_out, uniform_to_json(r, verify_seed,
                                       verify_seed + verify_count - 1));
      if (!r.ok())
        for (const auto& f : r.failures) std::cerr << f << "\n";
      return r.ok() ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid program: " << e.what() << "\n";
    return 2;
  } catch (const MigrationError& e) {
    std::cerr << "migration failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
