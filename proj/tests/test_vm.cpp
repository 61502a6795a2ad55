#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "unistack/experiments.hpp"
#include "unistack/migration.hpp"
#include "unistack/vm.hpp"

using namespace unistack;

namespace {

const std::map<std::string, std::pair<std::int64_t, std::uint64_t>>&
kernel_reference() {
  // name -> {exit value, equivalence points hit}
  static const std::map<std::string, std::pair<std::int64_t, std::uint64_t>>
      ref = {
          {"stencil", {12, 14}},      {"triple_loop", {11, 5}},
          {"rec_reduce", {27, 9}},    {"high_pressure", {372, 2}},
          {"call_heavy", {417, 4}},   {"mixed", {88, 6}},
      };
  return ref;
}

TargetContext target_for(const Program& p, const ISADescriptor& isa) {
  return make_target(p, isa, default_convention(isa));
}

}  // namespace

TEST_CASE("kernels produce their reference results on every target") {
  for (const auto& k : kernel_suite()) {
    auto [exit_value, hits] = kernel_reference().at(k.name);
    Program p = parse_program(k.text);
    for (const auto& isa : {x86like(), armlike(), armlike_reduced()}) {
      TargetContext t = target_for(p, isa);
      RunResult r = run(t.low.prog, k.inputs);
      CHECK(r.exit_value == exit_value);
      CHECK(r.metrics.equivalence_points_hit == hits);
    }
  }
}

TEST_CASE("targets agree on generated programs") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    Program p = generate_program(cfg);
    std::vector<std::int64_t> in = {static_cast<std::int64_t>(seed % 7)};

    TargetContext ref = target_for(p, x86like());
    RunResult rr = run(ref.low.prog, in);
    for (const auto& isa : {armlike(), armlike_reduced(), armlike_n(4)}) {
      TargetContext t = target_for(p, isa);
      RunResult r = run(t.low.prog, in);
      CHECK(r.exit_value == rr.exit_value);
      CHECK(r.output == rr.output);
      CHECK(r.metrics.equivalence_points_hit ==
            rr.metrics.equivalence_points_hit);
    }
  }
}

TEST_CASE("pausing and resuming is invisible to the program") {
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    TargetContext t = target_for(p, armlike());
    RunResult ref = run(t.low.prog, k.inputs);
    std::uint64_t hits = ref.metrics.equivalence_points_hit;
    REQUIRE(hits > 0);

    for (std::uint64_t h = 1; h <= hits; ++h) {
      PauseResult pr =
          run_until_point(t.low.prog, k.inputs, stop_at_hit(h));
      REQUIRE(!pr.finished);
      CHECK(pr.state.at_point);
      RunResult r = resume(pr.state, t.low.prog);
      CHECK(r.exit_value == ref.exit_value);
      CHECK(r.output == ref.output);
      CHECK(r.metrics.equivalence_points_hit == hits);
    }

    // beyond the last hit the program just finishes
    PauseResult done =
        run_until_point(t.low.prog, k.inputs, stop_at_hit(hits + 1));
    CHECK(done.finished);
    CHECK(done.result.exit_value == ref.exit_value);
    PauseResult never = run_until_point(t.low.prog, k.inputs, stop_at_hit(0));
    CHECK(never.finished);
  }
}

TEST_CASE("capture/restore reproduces the snapshot and the run") {
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    TargetContext t = target_for(p, x86like());
    RunResult ref = run(t.low.prog, k.inputs);

    PauseResult pr = run_until_point(t.low.prog, k.inputs, stop_at_hit(2));
    if (pr.finished) continue;
    StackSnapshot s1 = capture_snapshot(pr.state, t.low.prog, t.meta);
    MachineState restored = restore_snapshot(s1, t.low.prog, t.meta);
    StackSnapshot s2 = capture_snapshot(restored, t.low.prog, t.meta);
    CHECK(s1 == s2);

    RunResult r = resume(std::move(restored), t.low.prog);
    CHECK(r.exit_value == ref.exit_value);
    CHECK(r.output == ref.output);
  }
}

TEST_CASE("snapshot records carry the paused frame chain") {
  Program p = kernel_program("rec_reduce");
  TargetContext t = target_for(p, armlike());
  PauseResult pr = run_until_point(
      t.low.prog, kernel_by_name("rec_reduce").inputs, stop_at_hit(1));
  REQUIRE(!pr.finished);
  StackSnapshot s = capture_snapshot(pr.state, t.low.prog, t.meta);
  REQUIRE(!s.records.empty());
  CHECK(s.records.back().site == SiteKind::EqPoint);
  for (std::size_t i = 0; i + 1 < s.records.size(); ++i)
    CHECK(s.records[i].site == SiteKind::CallSite);
  CHECK(s.records.size() == pr.state.depth);
}

TEST_CASE("recursion chain pauses with exactly n frames") {
  Program p = recursion_chain(6);
  TargetContext t = target_for(p, armlike());
  for (int n : {1, 2, 5, 17}) {
    PauseResult pr = run_until_point(t.low.prog, {n - 1}, stop_at_hit(1));
    REQUIRE(!pr.finished);
    StackSnapshot s = capture_snapshot(pr.state, t.low.prog, t.meta);
    CHECK(s.records.size() == static_cast<std::size_t>(n));
  }
}

TEST_CASE("snapshot serialization round trips") {
  Program p = kernel_program("mixed");
  TargetContext t = target_for(p, armlike());
  PauseResult pr = run_until_point(t.low.prog, kernel_by_name("mixed").inputs,
                                   stop_at_hit(3));
  REQUIRE(!pr.finished);
  StackSnapshot s = capture_snapshot(pr.state, t.low.prog, t.meta);

  CHECK(snapshot_from_json(snapshot_to_json(s)) == s);
  std::vector<std::uint8_t> bytes = snapshot_to_binary(s);
  CHECK(snapshot_from_binary(bytes) == s);
  CHECK(snapshot_to_binary(s) == bytes);

  std::vector<std::uint8_t> bad = bytes;
  bad[0] ^= 0xff;
  CHECK_THROWS(snapshot_from_binary(bad));
  CHECK_THROWS(snapshot_from_json("{\"records\": 3}"));
}

TEST_CASE("restore rejects snapshots that do not fit the metadata") {
  Program p = kernel_program("mixed");
  TargetContext t = target_for(p, armlike());
  PauseResult pr = run_until_point(t.low.prog, kernel_by_name("mixed").inputs,
                                   stop_at_hit(1));
  REQUIRE(!pr.finished);
  StackSnapshot s = capture_snapshot(pr.state, t.low.prog, t.meta);

  StackSnapshot missing = s;
  REQUIRE(!missing.records.back().bindings.empty());
  std::string dropped = missing.records.back().bindings.begin()->first;
  missing.records.back().bindings.erase(dropped);
  try {
    restore_snapshot(missing, t.low.prog, t.meta);
    FAIL_CHECK("missing binding accepted");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(dropped) != std::string::npos);
  }

  StackSnapshot wrong_size = s;
  wrong_size.records.back().frame_size += 16;
  CHECK_THROWS(restore_snapshot(wrong_size, t.low.prog, t.meta));

  StackSnapshot unknown_fn = s;
  unknown_fn.records.back().function = "nope";
  CHECK_THROWS(restore_snapshot(unknown_fn, t.low.prog, t.meta));
}

TEST_CASE("division traps and wrapping") {
  Program p = parse_program("fn main(p0) {\n  d = div p0, -1\n  return d\n}\n");
  TargetContext t = target_for(p, x86like());
  CHECK(run(t.low.prog, {7}).exit_value == -7);
  CHECK(run(t.low.prog, {INT64_MIN}).exit_value == INT64_MIN);

  Program z =
      parse_program("fn main(p0) {\n  d = div p0, 0\n  return d\n}\n");
  TargetContext tz = target_for(z, x86like());
  CHECK_THROWS_AS(run(tz.low.prog, {1}), VmError);
}

TEST_CASE("entry arity and stack limits are enforced") {
  Program p = kernel_program("stencil");
  TargetContext t = target_for(p, armlike());
  CHECK_THROWS_AS(run(t.low.prog, {}), VmError);
  CHECK_THROWS_AS(run(t.low.prog, {1, 2}), VmError);

  Program chain = recursion_chain(6);
  TargetContext tc = target_for(chain, armlike());
  VmOptions tiny;
  tiny.stack_size = 4096;
  CHECK_THROWS_AS(run(tc.low.prog, {100000}, tiny), VmError);
}

TEST_CASE("metrics stay consistent") {
  for (const auto& k : kernel_suite()) {
    Program p = parse_program(k.text);
    TargetContext t = target_for(p, armlike());
    RunResult r = run(t.low.prog, k.inputs);
    CHECK(r.metrics.dynamic_spill_load_count <= r.metrics.dynamic_load_count);
    CHECK(r.metrics.dynamic_spill_store_count <=
          r.metrics.dynamic_store_count);
    CHECK(r.metrics.max_call_depth >= 1);
    CHECK(r.metrics.dynamic_instruction_count > 0);
  }
  // plenty of registers on the wide target: no spill traffic
  TargetContext t = target_for(kernel_program("high_pressure"), armlike());
  RunResult r = run(t.low.prog, kernel_by_name("high_pressure").inputs);
  CHECK(r.metrics.dynamic_spill_load_count == 0);
  CHECK(r.metrics.dynamic_spill_store_count == 0);
}
