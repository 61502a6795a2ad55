// Independent reference implementations used to check the analysis results:
// a path-based liveness oracle and an exhaustive minimal-spill search. Both
// are deliberately brute force and share no code with the library.
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "unistack/codegen.hpp"
#include "unistack/ir.hpp"

namespace oracles {

inline std::vector<std::vector<std::size_t>> successors_of(
    const unistack::Function& f) {
  using unistack::Opcode;
  std::vector<std::vector<std::size_t>> succ(f.body.size());
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    const auto& in = f.body[i];
    if (in.op == Opcode::Jump) {
      succ[i].push_back(*f.label_index(in.label_a));
    } else if (in.op == Opcode::Branch) {
      succ[i].push_back(*f.label_index(in.label_a));
      succ[i].push_back(*f.label_index(in.label_b));
    } else if (in.op != Opcode::Return) {
      if (i + 1 < f.body.size()) succ[i].push_back(i + 1);
    }
  }
  return succ;
}

inline bool uses_value(const unistack::Instruction& in, const std::string& v) {
  for (const auto& o : in.args)
    if (!o.is_imm && o.id == v) return true;
  return false;
}

// Is v live on entry to instruction i: does some path from i reach a use of
// v with no redefinition strictly before the use?
inline bool live_in_at(const unistack::Function& f,
                       const std::vector<std::vector<std::size_t>>& succ,
                       std::size_t i, const std::string& v) {
  std::set<std::size_t> visited;
  std::vector<std::size_t> work = {i};
  while (!work.empty()) {
    std::size_t j = work.back();
    work.pop_back();
    if (j >= f.body.size() || !visited.insert(j).second) continue;
    if (uses_value(f.body[j], v)) return true;
    if (f.body[j].result == v) continue;  // redefined before any further use
    for (std::size_t s : succ[j]) work.push_back(s);
  }
  return false;
}

inline bool live_out_at(const unistack::Function& f,
                        const std::vector<std::vector<std::size_t>>& succ,
                        std::size_t i, const std::string& v) {
  for (std::size_t s : succ[i])
    if (live_in_at(f, succ, s, v)) return true;
  return false;
}

// Minimal number of spilled values under the allocator's own model:
// conservative whole intervals, a set S of spilled values is feasible when
// at every position the surviving intervals fit the allocatable registers
// and the surviving call-crossing intervals fit the callee-saved ones.
// Returns -1 when the function has more than max_values values.
inline int min_spills(const unistack::Function& f,
                      const unistack::LiveInfo& live, int allocatable,
                      int callee_saved, int max_values = 12) {
  int n = static_cast<int>(live.value_names.size());
  if (n > max_values) return -1;

  std::vector<int> start(static_cast<std::size_t>(n), 1 << 30);
  std::vector<int> end(static_cast<std::size_t>(n), -(1 << 30));
  std::vector<bool> crossing(static_cast<std::size_t>(n), false);
  auto touch = [&](int v, int pos) {
    start[static_cast<std::size_t>(v)] =
        std::min(start[static_cast<std::size_t>(v)], pos);
    end[static_cast<std::size_t>(v)] =
        std::max(end[static_cast<std::size_t>(v)], pos);
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
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    if (f.body[i].op != unistack::Opcode::Call) continue;
    for (int v : live.live_out[i])
      if (v != live.def_at[i]) crossing[static_cast<std::size_t>(v)] = true;
  }

  std::vector<int> alive_values;
  for (int v = 0; v < n; ++v)
    if (end[static_cast<std::size_t>(v)] >= start[static_cast<std::size_t>(v)])
      alive_values.push_back(v);

  auto feasible = [&](unsigned mask) {
    for (int pos = -1; pos < static_cast<int>(f.body.size()); ++pos) {
      int total = 0, cross = 0;
      for (std::size_t k = 0; k < alive_values.size(); ++k) {
        if (mask & (1u << k)) continue;  // spilled
        int v = alive_values[k];
        if (start[static_cast<std::size_t>(v)] <= pos &&
            pos <= end[static_cast<std::size_t>(v)]) {
          ++total;
          if (crossing[static_cast<std::size_t>(v)]) ++cross;
        }
      }
      if (total > allocatable || cross > callee_saved) return false;
    }
    return true;
  };

  int m = static_cast<int>(alive_values.size());
  int best = m + 1;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    int bits = __builtin_popcount(mask);
    if (bits >= best) continue;
    if (feasible(mask)) best = bits;
  }
  return best;
}

}  // namespace oracles
