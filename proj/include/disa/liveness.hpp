#pragma once

// CFG successor computation and backward may-liveness.
//
// Conservative edges, in line with what a desk-scale rewriter can know:
//   JMPI / CALLI  -> every jump table entry in the program
//   RET           -> every instruction that follows a call
//   CALL          -> the callee only; the return site is reached through the
//                    callee's RET edges
// A register is dead before instruction i iff no path starting at i reads it
// before writing it. sp never participates.

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <vector>

#include "disa/ir.hpp"

namespace disa {

inline CfgResult compute_cfg(const ProgramIR& ir) {
  CfgResult cfg;
  std::set<InstrId> jt;
  for (const auto& obj : ir.data_objects)
    if (obj.kind == DataKind::JumpTable)
      for (InstrId e : obj.entries) jt.insert(e);
  cfg.jumptable_union.assign(jt.begin(), jt.end());

  std::set<InstrId> rs;
  for (const auto& [id, in] : ir.instructions)
    if ((in.payload.opcode == Opcode::Call || in.payload.opcode == Opcode::Calli) &&
        in.fallthrough)
      rs.insert(*in.fallthrough);
  cfg.return_sites.assign(rs.begin(), rs.end());

  for (const auto& [id, in] : ir.instructions) {
    std::vector<InstrId>& succ = cfg.successors[id];
    switch (in.payload.opcode) {
      case Opcode::Halt:
      case Opcode::Trap:
        break;
      case Opcode::Jmp:
        succ = in.branch_targets;
        break;
      case Opcode::Beq:
      case Opcode::Blt:
        succ = in.branch_targets;
        if (in.fallthrough) succ.push_back(*in.fallthrough);
        break;
      case Opcode::Call:
        succ = in.branch_targets;
        break;
      case Opcode::Calli:
      case Opcode::Jmpi:
        succ = cfg.jumptable_union;
        break;
      case Opcode::Ret:
        succ = cfg.return_sites;
        break;
      default:
        if (in.fallthrough) succ.push_back(*in.fallthrough);
        break;
    }
  }
  return cfg;
}

inline LivenessResult compute_liveness(const ProgramIR& ir, const CfgResult& cfg) {
  LivenessResult res;
  std::map<InstrId, uint8_t> live_in, live_out;
  std::map<InstrId, std::vector<InstrId>> preds;
  for (const auto& [id, succs] : cfg.successors)
    for (InstrId s : succs) preds[s].push_back(id);

  std::deque<InstrId> work;
  std::set<InstrId> queued;
  for (const auto& [id, in] : ir.instructions) {
    work.push_back(id);
    queued.insert(id);
  }
  while (!work.empty()) {
    InstrId id = work.front();
    work.pop_front();
    queued.erase(id);
    const auto& in = ir.instr(id);
    uint8_t out = 0;
    for (InstrId s : cfg.successors.at(id)) out |= live_in[s];
    uint8_t newin = regs_read(in.payload) |
                    static_cast<uint8_t>(out & ~regs_written(in.payload));
    live_out[id] = out;
    if (newin != live_in[id]) {
      live_in[id] = newin;
      for (InstrId p : preds[id])
        if (queued.insert(p).second) work.push_back(p);
    }
  }
  for (const auto& [id, in] : ir.instructions) {
    res.live_in[id] = live_in[id];
    res.dead_before[id] = static_cast<uint8_t>(~live_in[id]);
  }
  return res;
}

inline LivenessResult compute_liveness(const ProgramIR& ir) {
  return compute_liveness(ir, compute_cfg(ir));
}

// Recompute the selected cached analyses; untouched ones keep their state.
inline void reanalyze(ProgramIR& ir, uint32_t which) {
  if (which & kAnalysisCfg) {
    ir.analyses.cfg = compute_cfg(ir);
    ir.analyses.cfg_valid = true;
  }
  if (which & kAnalysisLiveness) {
    if (ir.analyses.cfg_valid)
      ir.analyses.liveness = compute_liveness(ir, ir.analyses.cfg);
    else
      ir.analyses.liveness = compute_liveness(ir);
    ir.analyses.liveness_valid = true;
  }
}

// Convenience: dead-register mask before `id`, computing liveness on demand.
inline uint8_t dead_mask_before(ProgramIR& ir, InstrId id) {
  if (!ir.analyses.liveness_valid) reanalyze(ir, kAnalysisCfg | kAnalysisLiveness);
  auto it = ir.analyses.liveness.dead_before.find(id);
  if (it == ir.analyses.liveness.dead_before.end())
    throw IRError("liveness: unknown instruction id");
  return it->second;
}

// Lowest-numbered dead register from `mask`, excluding any in `avoid`.
inline std::optional<uint8_t> pick_dead_register(uint8_t mask, uint8_t avoid = 0) {
  for (uint8_t r = 0; r < kNumGprs; ++r)
    if ((mask & (1u << r)) && !(avoid & (1u << r))) return r;
  return std::nullopt;
}

}  // namespace disa
