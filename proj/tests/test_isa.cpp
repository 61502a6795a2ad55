#include <algorithm>
#include <set>

#include "doctest.h"
#include "unistack/isa.hpp"

using namespace unistack;

TEST_CASE("presets have the documented shape") {
  ISADescriptor x = x86like();
  CHECK(x.style == IsaStyle::CiscMemOperand);
  CHECK(x.gpr_count == 17);
  CHECK(x.stack_pointer == 16);
  CHECK(x.frame_pointer == 15);
  CHECK(!x.platform_register.has_value());

  ISADescriptor a = armlike();
  CHECK(a.style == IsaStyle::RiscLoadStore);
  CHECK(a.gpr_count == 32);
  CHECK(a.stack_pointer == 31);
  CHECK(a.frame_pointer == 30);
  CHECK(a.platform_register.has_value());

  ISADescriptor r = armlike_reduced();
  CHECK(r.style == IsaStyle::RiscLoadStore);
  CHECK(r.gpr_count == 17);

  for (const auto& isa : {x, a, r}) {
    validate_descriptor(isa);
    validate_convention(isa, default_convention(isa));
    CHECK(static_cast<int>(isa.register_names.size()) == isa.gpr_count);
  }
}

TEST_CASE("armlike_n keeps the platform register only from 8 registers up") {
  for (int n = 4; n <= 32; ++n) {
    ISADescriptor isa = armlike_n(n);
    validate_descriptor(isa);
    CHECK(isa.gpr_count == n);
    CHECK(isa.platform_register.has_value() == (n >= 8));
    CallingConvention cc = default_convention(isa);
    validate_convention(isa, cc);
  }
  CHECK_THROWS_AS(armlike_n(3), IsaError);
  CHECK_THROWS_AS(armlike_n(33), IsaError);
}

TEST_CASE("allocatable registers exclude SP, FP and platform register") {
  for (int n : {4, 8, 17, 32}) {
    ISADescriptor isa = armlike_n(n);
    std::vector<int> regs = allocatable_registers(isa);
    int reserved = isa.platform_register ? 3 : 2;
    CHECK(static_cast<int>(regs.size()) == n - reserved);
    for (int r : regs) {
      CHECK(r != isa.stack_pointer);
      CHECK(r != isa.frame_pointer);
      if (isa.platform_register) CHECK(r != *isa.platform_register);
      CHECK(r >= 0);
      CHECK(r < isa.gpr_count);
    }
  }
}

TEST_CASE("default convention partitions the allocatable file") {
  for (int n : {4, 8, 10, 17, 32}) {
    ISADescriptor isa = armlike_n(n);
    CallingConvention cc = default_convention(isa);
    std::vector<int> allocv = allocatable_registers(isa);
    std::set<int> alloc(allocv.begin(), allocv.end());
    int avail = static_cast<int>(alloc.size());

    CHECK(cc.arg_registers.size() ==
          static_cast<std::size_t>(std::min(6, avail)));
    REQUIRE(!cc.arg_registers.empty());
    CHECK(cc.return_register == cc.arg_registers[0]);
    CHECK(cc.callee_saved.count(isa.frame_pointer) == 1);
    CHECK(cc.stack_alignment_bytes == 16);

    int callee_alloc = 0;
    for (int r : cc.callee_saved)
      if (alloc.count(r)) ++callee_alloc;
    CHECK(callee_alloc == std::min(5, std::max(0, avail - 6)));

    // every allocatable register is exactly one of caller/callee saved
    for (int r : alloc) {
      CHECK(cc.caller_saved.count(r) + cc.callee_saved.count(r) == 1);
    }
    for (int r : cc.arg_registers) CHECK(cc.caller_saved.count(r) == 1);
  }
}

TEST_CASE("convention fault reverses argument order and is an involution") {
  CallingConvention cc = default_convention(x86like());
  CallingConvention bad = inject_convention_fault(cc);
  REQUIRE(bad.arg_registers.size() == cc.arg_registers.size());
  std::vector<int> rev(cc.arg_registers.rbegin(), cc.arg_registers.rend());
  CHECK(bad.arg_registers == rev);
  CHECK(bad.callee_saved == cc.callee_saved);
  CHECK(inject_convention_fault(bad) == cc);
}

TEST_CASE("uniform ABI matches the files and maps every register") {
  UniformAbi u = make_uniform_abi(x86like(), armlike());
  CHECK(u.a.gpr_count == u.b.gpr_count);
  CHECK(u.a.gpr_count == std::min(x86like().gpr_count, armlike().gpr_count));
  CHECK(u.a.style == IsaStyle::CiscMemOperand);
  CHECK(u.b.style == IsaStyle::RiscLoadStore);
  CHECK(u.a.stack_pointer == u.b.stack_pointer);
  CHECK(u.a.frame_pointer == u.b.frame_pointer);
  validate_descriptor(u.a);
  validate_descriptor(u.b);
  validate_convention(u.a, u.cc);
  validate_convention(u.b, u.cc);

  // total bijection
  CHECK(static_cast<int>(u.map.forward.size()) == u.a.gpr_count);
  for (int r = 0; r < u.a.gpr_count; ++r) {
    int fwd = map_register(u.map, r, MapDirection::AtoB);
    CHECK(map_register(u.map, fwd, MapDirection::BtoA) == r);
  }
  // symmetric construction
  UniformAbi v = make_uniform_abi(armlike(), x86like());
  CHECK(v.a.gpr_count == u.a.gpr_count);
  CHECK(v.cc.arg_registers.size() == u.cc.arg_registers.size());
}

TEST_CASE("positional map pins SP and FP") {
  RegisterMap m = positional_register_map(x86like(), armlike());
  CHECK(map_register(m, x86like().stack_pointer, MapDirection::AtoB) ==
        armlike().stack_pointer);
  CHECK(map_register(m, x86like().frame_pointer, MapDirection::AtoB) ==
        armlike().frame_pointer);
  CHECK_THROWS_AS(map_register(m, 99, MapDirection::AtoB), IsaError);
}

TEST_CASE("descriptor JSON round trips") {
  for (const auto& isa : {x86like(), armlike(), armlike_n(11)}) {
    CallingConvention cc = default_convention(isa);
    auto [isa2, cc2] = isa_from_json(isa_to_json(isa, cc));
    CHECK(isa2 == isa);
    CHECK(cc2 == cc);
  }
  CHECK_THROWS_AS(isa_from_json("{}"), IsaError);
  CHECK_THROWS_AS(isa_from_json("not json"), IsaError);
}

TEST_CASE("descriptor validation rejects inconsistent files") {
  ISADescriptor bad = x86like();
  bad.frame_pointer = bad.stack_pointer;
  CHECK_THROWS_AS(validate_descriptor(bad), IsaError);

  bad = x86like();
  bad.register_names.pop_back();
  CHECK_THROWS_AS(validate_descriptor(bad), IsaError);

  CallingConvention cc = default_convention(x86like());
  cc.arg_registers.push_back(x86like().stack_pointer);
  CHECK_THROWS_AS(validate_convention(x86like(), cc), IsaError);
}
