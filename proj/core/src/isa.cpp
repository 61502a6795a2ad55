#include "unistack/isa.hpp"

#include <algorithm>

#include "json.hpp"

namespace unistack {

namespace {

std::vector<std::string> reg_names(int n) {
  std::vector<std::string> v;
  v.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v.push_back("r" + std::to_string(i));
  return v;
}

}  // namespace

void validate_descriptor(const ISADescriptor& isa) {
  if (isa.gpr_count < 3) throw IsaError("descriptor needs at least 3 GPRs");
  auto in_range = [&](int r) { return r >= 0 && r < isa.gpr_count; };
  if (!in_range(isa.stack_pointer) || !in_range(isa.frame_pointer))
    throw IsaError("SP/FP out of range");
  if (isa.stack_pointer == isa.frame_pointer)
    throw IsaError("SP and FP must be distinct");
  if (isa.platform_register) {
    int p = *isa.platform_register;
    if (!in_range(p) || p == isa.stack_pointer || p == isa.frame_pointer)
      throw IsaError("platform register collides with SP/FP or out of range");
  }
  if (isa.register_names.size() != static_cast<std::size_t>(isa.gpr_count))
    throw IsaError("register name list does not match gpr_count");
  if (isa.pointer_bits != 64) throw IsaError("only 64-bit pointers supported");
}

void validate_convention(const ISADescriptor& isa,
                         const CallingConvention& cc) {
  auto in_range = [&](int r) { return r >= 0 && r < isa.gpr_count; };
  for (int r : cc.arg_registers) {
    if (!in_range(r)) throw IsaError("argument register out of range");
    if (cc.callee_saved.count(r))
      throw IsaError("argument register cannot be callee-saved");
    if (r == isa.stack_pointer || r == isa.frame_pointer ||
        (isa.platform_register && r == *isa.platform_register))
      throw IsaError("argument register r" + std::to_string(r) +
                     " is reserved");
  }
  if (!cc.caller_saved.count(cc.return_register))
    throw IsaError("return register must be caller-saved");
  if (cc.stack_alignment_bytes != 16)
    throw IsaError("stack alignment must be 16");
  std::set<int> covered = cc.callee_saved;
  covered.insert(cc.caller_saved.begin(), cc.caller_saved.end());
  covered.insert(isa.stack_pointer);
  if (isa.platform_register) covered.insert(*isa.platform_register);
  for (int r = 0; r < isa.gpr_count; ++r)
    if (!covered.count(r))
      throw IsaError("register r" + std::to_string(r) +
                     " not covered by the convention");
  for (int r : cc.callee_saved)
    if (cc.caller_saved.count(r))
      throw IsaError("register r" + std::to_string(r) +
                     " both caller- and callee-saved");
}

ISADescriptor x86like() {
  ISADescriptor d;
  d.name = "x86like";
  d.style = IsaStyle::CiscMemOperand;
  d.gpr_count = 17;
  d.register_names = reg_names(17);
  d.stack_pointer = 16;
  d.frame_pointer = 15;
  return d;
}

ISADescriptor armlike() {
  ISADescriptor d;
  d.name = "armlike";
  d.style = IsaStyle::RiscLoadStore;
  d.gpr_count = 32;
  d.register_names = reg_names(32);
  d.stack_pointer = 31;
  d.frame_pointer = 30;
  d.platform_register = 18;
  return d;
}

ISADescriptor armlike_reduced() {
  ISADescriptor d = armlike();
  d.name = "armlike-reduced";
  d.gpr_count = 17;
  d.register_names = reg_names(17);
  d.stack_pointer = 16;
  d.frame_pointer = 15;
  d.platform_register = 14;
  return d;
}

ISADescriptor armlike_n(int gprs) {
  if (gprs < 4 || gprs > 32)
    throw IsaError("infeasible register count: " + std::to_string(gprs));
  ISADescriptor d = armlike();
  d.name = "armlike-" + std::to_string(gprs);
  d.gpr_count = gprs;
  d.register_names = reg_names(gprs);
  d.stack_pointer = gprs - 1;
  d.frame_pointer = gprs - 2;
  if (gprs >= 8)
    d.platform_register = gprs - 3;
  else
    d.platform_register.reset();
  return d;
}

ISADescriptor preset_by_name(const std::string& name) {
  if (name == "x86like") return x86like();
  if (name == "armlike") return armlike();
  if (name == "armlike-reduced") return armlike_reduced();
  throw IsaError("unknown ISA preset: " + name);
}

CallingConvention default_convention(const ISADescriptor& isa) {
  validate_descriptor(isa);
  std::vector<int> avail;
  for (int r = 0; r < isa.gpr_count; ++r) {
    if (r == isa.stack_pointer || r == isa.frame_pointer) continue;
    if (isa.platform_register && r == *isa.platform_register) continue;
    avail.push_back(r);
  }
  int k = std::min<int>(5, std::max<int>(0, static_cast<int>(avail.size()) - 6));
  CallingConvention cc;
  for (std::size_t i = avail.size() - static_cast<std::size_t>(k);
       i < avail.size(); ++i)
    cc.callee_saved.insert(avail[i]);
  cc.callee_saved.insert(isa.frame_pointer);
  for (int r : avail)
    if (!cc.callee_saved.count(r)) cc.caller_saved.insert(r);
  int nargs = std::min<int>(6, static_cast<int>(cc.caller_saved.size()));
  for (int r : avail) {
    if (static_cast<int>(cc.arg_registers.size()) >= nargs) break;
    if (cc.caller_saved.count(r)) cc.arg_registers.push_back(r);
  }
  if (cc.arg_registers.empty()) throw IsaError("no argument registers");
  cc.return_register = cc.arg_registers.front();
  validate_convention(isa, cc);
  return cc;
}

CallingConvention inject_convention_fault(const CallingConvention& cc) {
  CallingConvention out = cc;
  std::reverse(out.arg_registers.begin(), out.arg_registers.end());
  return out;
}

std::vector<int> allocatable_registers(const ISADescriptor& isa) {
  std::vector<int> v;
  for (int r = 0; r < isa.gpr_count; ++r) {
    if (r == isa.stack_pointer || r == isa.frame_pointer) continue;
    if (isa.platform_register && r == *isa.platform_register) continue;
    v.push_back(r);
  }
  return v;
}

UniformAbi make_uniform_abi(const ISADescriptor& a, const ISADescriptor& b) {
  validate_descriptor(a);
  validate_descriptor(b);
  int m = std::min(a.gpr_count, b.gpr_count);
  if (m < 4)
    throw IsaError(
        "uniform ABI needs at least 4 GPRs (SP, FP, return and a scratch)");
  bool platform = a.platform_register.has_value() ||
                  b.platform_register.has_value();

  auto shrink = [&](const ISADescriptor& d) {
    ISADescriptor out = d;
    out.gpr_count = m;
    out.register_names = reg_names(m);
    out.stack_pointer = m - 1;
    out.frame_pointer = m - 2;
    if (platform)
      out.platform_register = m - 3;
    else
      out.platform_register.reset();
    if (!(out == d)) out.name = d.name + "-uniform";
    return out;
  };

  UniformAbi u;
  u.a = shrink(a);
  u.b = shrink(b);
  u.cc = default_convention(u.a);
  for (int r = 0; r < m; ++r) {
    u.map.forward[r] = r;
    u.map.backward[r] = r;
  }
  return u;
}

int map_register(const RegisterMap& m, int reg, MapDirection dir) {
  const auto& tbl = dir == MapDirection::AtoB ? m.forward : m.backward;
  auto it = tbl.find(reg);
  if (it == tbl.end())
    throw IsaError("unmapped register index " + std::to_string(reg));
  return it->second;
}

RegisterMap positional_register_map(const ISADescriptor& a,
                                    const ISADescriptor& b) {
  RegisterMap m;
  auto add = [&](int ra, int rb) {
    m.forward[ra] = rb;
    m.backward[rb] = ra;
  };
  add(a.stack_pointer, b.stack_pointer);
  add(a.frame_pointer, b.frame_pointer);
  std::vector<int> ra, rb;
  for (int r = 0; r < a.gpr_count; ++r)
    if (r != a.stack_pointer && r != a.frame_pointer) ra.push_back(r);
  for (int r = 0; r < b.gpr_count; ++r)
    if (r != b.stack_pointer && r != b.frame_pointer) rb.push_back(r);
  for (std::size_t i = 0; i < std::min(ra.size(), rb.size()); ++i)
    add(ra[i], rb[i]);
  return m;
}

std::string isa_to_json(const ISADescriptor& isa, const CallingConvention& cc) {
  nlohmann::json j;
  j["name"] = isa.name;
  j["style"] = isa.style == IsaStyle::CiscMemOperand ? "cisc-memory-operand"
                                                     : "risc-load-store";
  j["gpr_count"] = isa.gpr_count;
  j["register_names"] = isa.register_names;
  j["stack_pointer"] = isa.stack_pointer;
  j["frame_pointer"] = isa.frame_pointer;
  if (isa.platform_register) j["platform_register"] = *isa.platform_register;
  j["pointer_bits"] = isa.pointer_bits;
  nlohmann::json c;
  c["arg_registers"] = cc.arg_registers;
  c["return_register"] = cc.return_register;
  c["callee_saved"] = std::vector<int>(cc.callee_saved.begin(),
                                       cc.callee_saved.end());
  c["caller_saved"] = std::vector<int>(cc.caller_saved.begin(),
                                       cc.caller_saved.end());
  c["stack_alignment_bytes"] = cc.stack_alignment_bytes;
  j["convention"] = c;
  return j.dump(2) + "\n";
}

std::pair<ISADescriptor, CallingConvention> isa_from_json(
    const std::string& text) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    ISADescriptor isa;
    isa.name = j.at("name").get<std::string>();
    std::string style = j.at("style").get<std::string>();
    if (style == "cisc-memory-operand")
      isa.style = IsaStyle::CiscMemOperand;
    else if (style == "risc-load-store")
      isa.style = IsaStyle::RiscLoadStore;
    else
      throw IsaError("unknown style: " + style);
    isa.gpr_count = j.at("gpr_count").get<int>();
    if (j.contains("register_names"))
      isa.register_names = j["register_names"].get<std::vector<std::string>>();
    else
      isa.register_names = reg_names(isa.gpr_count);
    isa.stack_pointer = j.at("stack_pointer").get<int>();
    isa.frame_pointer = j.at("frame_pointer").get<int>();
    if (j.contains("platform_register"))
      isa.platform_register = j["platform_register"].get<int>();
    if (j.contains("pointer_bits"))
      isa.pointer_bits = j["pointer_bits"].get<int>();
    validate_descriptor(isa);
    CallingConvention cc;
    if (j.contains("convention")) {
      const auto& c = j["convention"];
      cc.arg_registers = c.at("arg_registers").get<std::vector<int>>();
      cc.return_register = c.at("return_register").get<int>();
      for (int r : c.at("callee_saved").get<std::vector<int>>())
        cc.callee_saved.insert(r);
      for (int r : c.at("caller_saved").get<std::vector<int>>())
        cc.caller_saved.insert(r);
      if (c.contains("stack_alignment_bytes"))
        cc.stack_alignment_bytes = c["stack_alignment_bytes"].get<int>();
      validate_convention(isa, cc);
    } else {
      cc = default_convention(isa);
    }
    return {isa, cc};
  } catch (const nlohmann::json::exception& e) {
    throw IsaError(std::string("malformed descriptor: ") + e.what());
  }
}

}  // namespace unistack
