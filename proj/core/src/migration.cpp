#include "unistack/migration.hpp"

#include <chrono>
#include <map>
#include <set>
#include <tuple>

#include "json.hpp"

namespace unistack {

namespace {

std::string site_name(SiteKind k) {
  return k == SiteKind::EqPoint ? "eq" : "call";
}

std::string loc_str(const Location& loc) {
  if (loc.kind == Location::Kind::Reg) return "reg:" + std::to_string(loc.reg);
  return "slot:" + std::to_string(loc.fp_offset);
}

using DescKey = std::tuple<std::string, int, std::int64_t>;

DescKey key_of(const FrameDescriptor& d) {
  return {d.function, static_cast<int>(d.site), d.point};
}

RunMetrics combine(const RunMetrics& a, const RunMetrics& b) {
  RunMetrics m;
  m.dynamic_instruction_count =
      a.dynamic_instruction_count + b.dynamic_instruction_count;
  m.dynamic_load_count = a.dynamic_load_count + b.dynamic_load_count;
  m.dynamic_store_count = a.dynamic_store_count + b.dynamic_store_count;
  m.dynamic_spill_load_count =
      a.dynamic_spill_load_count + b.dynamic_spill_load_count;
  m.dynamic_spill_store_count =
      a.dynamic_spill_store_count + b.dynamic_spill_store_count;
  m.max_call_depth = std::max(a.max_call_depth, b.max_call_depth);
  m.equivalence_points_hit =
      a.equivalence_points_hit + b.equivalence_points_hit;
  return m;
}

}  // namespace

TransformResult transform_stack(const StackSnapshot& snap,
                                const MetaIndex& src, const MetaIndex& dst) {
  TransformResult out;
  for (const ActivationRecord& rec : snap.records) {
    const FrameDescriptor* sd = src.find(rec.function, rec.site, rec.point);
    if (!sd)
      throw MigrationError("no source descriptor for " + rec.function + "/" +
                           site_name(rec.site) + "/" +
                           std::to_string(rec.point));
    const FrameDescriptor* dd = dst.find(rec.function, rec.site, rec.point);
    if (!dd)
      throw MigrationError("no destination descriptor for " + rec.function +
                           "/" + site_name(rec.site) + "/" +
                           std::to_string(rec.point));
    for (const auto& [name, loc] : sd->live_values) {
      (void)loc;
      if (!rec.bindings.count(name))
        throw MigrationError("snapshot missing binding for value '" + name +
                             "' in function '" + rec.function + "'");
      if (!dd->live_values.count(name))
        throw MigrationError("value '" + name + "' live in the source but "
                             "absent from the destination descriptor of '" +
                             rec.function + "'");
    }
    for (const auto& [name, v] : rec.bindings) {
      (void)v;
      if (!sd->live_values.count(name))
        throw MigrationError("snapshot has stray binding for value '" + name +
                             "' in function '" + rec.function + "'");
    }

    ActivationRecord moved = rec;
    moved.frame_size = dd->frame_size_bytes;
    moved.saved_callee.clear();  // recomputed below
    out.snapshot.records.push_back(std::move(moved));

    out.stats.frames_processed += 1;
    out.stats.values_moved += rec.bindings.size();
    out.stats.callee_saved_moved += dd->callee_saved_layout.size();
  }
  recompute_saved_callee(out.snapshot, dst);
  out.stats.op_count = out.stats.values_moved + out.stats.callee_saved_moved +
                       kPerFrameFixedOps * out.stats.frames_processed;
  out.stats.bytes_written =
      8 * (out.stats.values_moved + out.stats.callee_saved_moved +
           2 * out.stats.frames_processed);
  return out;
}

LayoutDiff diff_layout(const Program& p,
                       const std::vector<FrameDescriptor>& meta_a,
                       const std::vector<FrameDescriptor>& meta_b,
                       const RegisterMap& map) {
  std::map<DescKey, const FrameDescriptor*> a, b;
  for (const auto& d : meta_a) a[key_of(d)] = &d;
  for (const auto& d : meta_b) b[key_of(d)] = &d;
  std::set<DescKey> keys;
  for (const auto& [k, d] : a) keys.insert(k);
  for (const auto& [k, d] : b) keys.insert(k);

  LayoutDiff diff;
  auto add = [&](const DescKey& k, const std::string& value,
                 const std::string& la, const std::string& lb,
                 const std::string& cause) {
    LayoutDivergence d;
    d.function = std::get<0>(k);
    d.site = site_name(static_cast<SiteKind>(std::get<1>(k)));
    d.point = std::get<2>(k);
    d.value = value;
    d.loc_a = la;
    d.loc_b = lb;
    d.cause = cause;
    diff.divergences.push_back(std::move(d));
  };

  for (const DescKey& k : keys) {
    auto ia = a.find(k), ib = b.find(k);
    if (ia == a.end() || ib == b.end()) {
      add(k, "<descriptor>", ia == a.end() ? "absent" : "present",
          ib == b.end() ? "absent" : "present", "structure");
      continue;
    }
    const FrameDescriptor& da = *ia->second;
    const FrameDescriptor& db = *ib->second;

    std::set<std::string> params;
    if (const Function* f = p.find(da.function))
      params.insert(f->params.begin(), f->params.end());

    std::set<std::string> values;
    for (const auto& [name, loc] : da.live_values) values.insert(name);
    for (const auto& [name, loc] : db.live_values) values.insert(name);
    for (const std::string& v : values) {
      auto la = da.live_values.find(v);
      auto lb = db.live_values.find(v);
      if (la == da.live_values.end() || lb == db.live_values.end()) {
        add(k, v, la == da.live_values.end() ? "absent" : loc_str(la->second),
            lb == db.live_values.end() ? "absent" : loc_str(lb->second),
            "structure");
        continue;
      }
      const Location& x = la->second;
      const Location& y = lb->second;
      bool same;
      std::string cause;
      if (x.kind == Location::Kind::Reg && y.kind == Location::Kind::Reg) {
        auto it = map.forward.find(x.reg);
        same = it != map.forward.end() && it->second == y.reg;
        cause = it == map.forward.end() ? "register-depth" : "style";
      } else if (x.kind != y.kind) {
        same = false;
        cause = "register-depth";
      } else {
        same = x.fp_offset == y.fp_offset;
        cause = "spill-order";
      }
      if (same) continue;
      if (params.count(v)) cause = "convention";
      add(k, v, loc_str(x), loc_str(y), cause);
    }

    if (da.frame_size_bytes != db.frame_size_bytes)
      add(k, "<frame-size>", std::to_string(da.frame_size_bytes),
          std::to_string(db.frame_size_bytes), "register-depth");

    bool saved_same = da.callee_saved_layout.size() ==
                      db.callee_saved_layout.size();
    if (saved_same) {
      auto itb = db.callee_saved_layout.begin();
      for (const auto& [reg, off] : da.callee_saved_layout) {
        auto m = map.forward.find(reg);
        if (m == map.forward.end() || m->second != itb->first ||
            off != itb->second) {
          saved_same = false;
          break;
        }
        ++itb;
      }
    }
    if (!saved_same)
      add(k, "<callee-saved>", std::to_string(da.callee_saved_layout.size()),
          std::to_string(db.callee_saved_layout.size()), "register-depth");
  }
  return diff;
}

std::string diff_to_json(const LayoutDiff& diff) {
  nlohmann::json j;
  j["identical"] = diff.empty();
  j["divergences"] = nlohmann::json::array();
  for (const LayoutDivergence& d : diff.divergences) {
    nlohmann::json e;
    e["function"] = d.function;
    e["site"] = d.site;
    e["point"] = d.point;
    e["value"] = d.value;
    e["loc_a"] = d.loc_a;
    e["loc_b"] = d.loc_b;
    e["cause"] = d.cause;
    j["divergences"].push_back(e);
  }
  return j.dump(2) + "\n";
}

TargetContext make_target(const Program& p, const ISADescriptor& isa,
                          const CallingConvention& cc,
                          const LowerOptions& opts) {
  TargetContext t;
  t.isa = isa;
  t.cc = cc;
  t.low = lower(p, isa, cc, opts);
  t.meta = MetaIndex(t.low.meta);
  return t;
}

MigrationReport migrate(const Program& p, const TargetContext& src,
                        const TargetContext& dst, const RegisterMap& map,
                        const MigrationOptions& opts) {
  MigrationReport rep;
  rep.src_isa = src.isa.name;
  rep.dst_isa = dst.isa.name;
  rep.mode = opts.mode == MigrationMode::Uniform ? "uniform" : "transform";
  rep.stop_hit = opts.stop_at_hit;

  if (opts.mode == MigrationMode::Uniform) {
    LayoutDiff diff = diff_layout(p, src.low.meta, dst.low.meta, map);
    if (!diff.empty()) {
      const LayoutDivergence& d = diff.divergences.front();
      throw MigrationError(
          "uniform migration requires identical layouts; first divergence: " +
          d.function + "/" + d.site + "/" + std::to_string(d.point) + " " +
          d.value + " (" + d.loc_a + " vs " + d.loc_b + ", cause " + d.cause +
          ")");
    }
  }

  RunResult ref = run(src.low.prog, opts.inputs, opts.vm);

  PauseResult pause = run_until_point(src.low.prog, opts.inputs,
                                      stop_at_hit(opts.stop_at_hit), opts.vm);
  if (pause.finished) {
    rep.taken = false;
    rep.exit_value = pause.result.exit_value;
    rep.output = pause.result.output;
    rep.metrics = pause.result.metrics;
    rep.semantic_ok = true;
    return rep;
  }

  StackSnapshot snap = capture_snapshot(pause.state, src.low.prog, src.meta);
  std::string pre_output = pause.state.output;
  RunMetrics pre_metrics = pause.state.metrics;

  StackSnapshot landed;
  if (opts.mode == MigrationMode::Uniform) {
    landed = snap;  // layouts proven identical, nothing to rewrite
  } else {
    auto t0 = std::chrono::steady_clock::now();
    TransformResult tr = transform_stack(snap, src.meta, dst.meta);
    auto t1 = std::chrono::steady_clock::now();
    rep.transform_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    rep.stats = tr.stats;
    landed = std::move(tr.snapshot);
  }

  MachineState restored =
      restore_snapshot(landed, dst.low.prog, dst.meta, opts.vm);
  RunResult rest = resume(std::move(restored), dst.low.prog, opts.vm);

  rep.taken = true;
  rep.exit_value = rest.exit_value;
  rep.output = pre_output + rest.output;
  rep.metrics = combine(pre_metrics, rest.metrics);
  rep.semantic_ok =
      rep.exit_value == ref.exit_value && rep.output == ref.output;
  return rep;
}

std::string report_to_json(const MigrationReport& r) {
  nlohmann::json j;
  j["src_isa"] = r.src_isa;
  j["dst_isa"] = r.dst_isa;
  j["mode"] = r.mode;
  j["taken"] = r.taken;
  j["stop_hit"] = r.stop_hit;
  j["exit_value"] = r.exit_value;
  j["output"] = r.output;
  j["semantic_ok"] = r.semantic_ok;
  j["transform_ms"] = r.transform_ms;
  nlohmann::json s;
  s["frames_processed"] = r.stats.frames_processed;
  s["values_moved"] = r.stats.values_moved;
  s["callee_saved_moved"] = r.stats.callee_saved_moved;
  s["bytes_written"] = r.stats.bytes_written;
  s["op_count"] = r.stats.op_count;
  j["transform"] = s;
  nlohmann::json m;
  m["dynamic_instruction_count"] = r.metrics.dynamic_instruction_count;
  m["dynamic_load_count"] = r.metrics.dynamic_load_count;
  m["dynamic_store_count"] = r.metrics.dynamic_store_count;
  m["dynamic_spill_load_count"] = r.metrics.dynamic_spill_load_count;
  m["dynamic_spill_store_count"] = r.metrics.dynamic_spill_store_count;
  m["max_call_depth"] = r.metrics.max_call_depth;
  m["equivalence_points_hit"] = r.metrics.equivalence_points_hit;
  j["metrics"] = m;
  return j.dump(2) + "\n";
}

}  // namespace unistack
