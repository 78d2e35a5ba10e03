#pragma once

// The plugin API and the transform suite.
//
// Plugins are named, versioned, seeded IR->IR rewrites that declare which
// facets of the program they read and write; the pipeline uses those
// declarations to derive per-stage seeds, re-run analyses a stage depends on,
// and warn when one stage consumes the facet a later stage wants to work on.
//
// Seeding contract (stable across implementations):
//   stage_seed = first 8 bytes, little-endian, of
//                SHA-256(master_seed LE64 || stage_index LE64 || plugin_name)
//   every random draw comes from xoshiro256** seeded with stage_seed
//
// Frame conventions the stack transforms rely on: one ENTER per function,
// matched by exactly one LEAVE, functions contiguous in the instruction
// stream, sp-relative displacements measured from the ENTER-established
// frame. Programs that violate this are refused, not silently mangled.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "disa/digest.hpp"
#include "disa/ir.hpp"
#include "disa/liveness.hpp"
#include "disa/rng.hpp"

namespace disa {

class TransformError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PipelineError : public std::runtime_error {
 public:
  PipelineError(size_t stage, const std::string& msg)
      : std::runtime_error("stage " + std::to_string(stage) + ": " + msg), stage_index(stage) {}
  size_t stage_index;
};

// ------------------------------------------------------------------- facets

enum class Facet : uint8_t {
  CodeLayout = 0,
  StackFrames,
  GlobalLayout,
  HeapSizes,
  IndirectBranches,
  InstructionStream,
};

constexpr uint32_t facet_bit(Facet f) { return 1u << static_cast<uint8_t>(f); }

inline const char* facet_name(Facet f) {
  switch (f) {
    case Facet::CodeLayout: return "code-layout";
    case Facet::StackFrames: return "stack-frames";
    case Facet::GlobalLayout: return "global-layout";
    case Facet::HeapSizes: return "heap-sizes";
    case Facet::IndirectBranches: return "indirect-branches";
    case Facet::InstructionStream: return "instruction-stream";
  }
  return "?";
}

// How much there is for a facet-reading plugin to chew on.
inline size_t facet_workload(const ProgramIR& ir, Facet f) {
  switch (f) {
    case Facet::CodeLayout:
      return ir.blocks.size() > 1 ? ir.blocks.size() - 1 : 0;
    case Facet::StackFrames: {
      size_t n = 0;
      for (const auto& [id, in] : ir.instructions)
        if (in.payload.opcode == Opcode::Enter) ++n;
      return n;
    }
    case Facet::GlobalLayout:
      return ir.data_objects.size() > 1 ? ir.data_objects.size() - 1 : 0;
    case Facet::HeapSizes: {
      size_t n = 0;
      for (const auto& [id, in] : ir.instructions)
        if (in.payload.opcode == Opcode::Alloc) ++n;
      return n;
    }
    case Facet::IndirectBranches: {
      size_t n = 0;
      for (const auto& [id, in] : ir.instructions)
        if (in.indirect) ++n;
      return n;
    }
    case Facet::InstructionStream:
      return ir.instructions.size();
  }
  return 0;
}

// ------------------------------------------------------------------ seeding

inline uint64_t derive_seed(uint64_t master_seed, uint64_t stage_index,
                            std::string_view plugin_name) {
  std::vector<uint8_t> buf;
  for (int i = 0; i < 8; ++i) buf.push_back((master_seed >> (8 * i)) & 0xff);
  for (int i = 0; i < 8; ++i) buf.push_back((stage_index >> (8 * i)) & 0xff);
  for (char c : plugin_name) buf.push_back(static_cast<uint8_t>(c));
  auto d = sha256(buf);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(d[i]) << (8 * i);
  return v;
}

// ------------------------------------------------------------ plugin basics

using TransformConfig = std::map<std::string, int64_t>;

inline int64_t config_get(const TransformConfig& cfg, const std::string& key, int64_t dflt) {
  auto it = cfg.find(key);
  return it == cfg.end() ? dflt : it->second;
}

struct TransformPlugin {
  std::string name;
  std::string version;
  uint32_t reads = 0;
  uint32_t writes = 0;
  uint32_t analyses_needed = 0;  // recomputed by the pipeline before apply
  std::optional<Facet> warn_if_read_empty;
  std::function<ProgramIR(ProgramIR, uint64_t, const TransformConfig&)> apply;
};

namespace detail {

inline std::vector<InstrId> structural_sequence(const ProgramIR& ir) {
  std::vector<InstrId> seq;
  for (const auto& b : ir.blocks)
    for (InstrId m : b.members) seq.push_back(m);
  return seq;
}

// Raw structural insert after `pos` in its block; fallthrough wiring is
// deferred to rebuild_blocks, so the caller must rebuild before returning.
inline InstrId splice_after_raw(ProgramIR& ir, InstrId pos, const Instruction& payload) {
  size_t idx = 0;
  auto* blk = block_containing(ir, pos, &idx);
  if (!blk) throw TransformError("splice: instruction not in any block");
  IRInstruction in;
  in.id = ir.next_instr_id++;
  in.payload = payload;
  in.indirect = is_indirect(payload.opcode);
  InstrId new_id = in.id;
  ir.instructions.emplace(new_id, std::move(in));
  blk->members.insert(blk->members.begin() + static_cast<long>(idx) + 1, new_id);
  ir.invalidate_analyses();
  return new_id;
}

// Appends a fresh block at the structural end; used for trampolines/stubs.
inline BasicBlock& append_block(ProgramIR& ir) {
  BasicBlock b;
  b.id = ir.next_block_id++;
  b.layout_rank = static_cast<uint32_t>(ir.blocks.size());
  ir.blocks.push_back(std::move(b));
  return ir.blocks.back();
}

inline InstrId append_instr(ProgramIR& ir, BasicBlock& blk, const Instruction& payload) {
  IRInstruction in;
  in.id = ir.next_instr_id++;
  in.payload = payload;
  in.indirect = is_indirect(payload.opcode);
  InstrId new_id = in.id;
  ir.instructions.emplace(new_id, std::move(in));
  blk.members.push_back(new_id);
  ir.invalidate_analyses();
  return new_id;
}

// One ENTER/LEAVE pair plus the instructions whose innermost frame it is.
struct FrameRegion {
  InstrId enter_id = 0;
  InstrId leave_id = 0;
  int64_t enter_imm = 0;
  std::vector<InstrId> body;  // strictly between enter and leave, own frame only
};

inline std::vector<FrameRegion> match_frames(const ProgramIR& ir) {
  std::vector<FrameRegion> done;
  std::vector<FrameRegion> stack;
  for (InstrId id : structural_sequence(ir)) {
    const auto& in = ir.instr(id);
    if (in.payload.opcode == Opcode::Enter) {
      FrameRegion r;
      r.enter_id = id;
      r.enter_imm = in.payload.imm;
      stack.push_back(std::move(r));
    } else if (in.payload.opcode == Opcode::Leave) {
      if (stack.empty())
        throw TransformError("frame nesting irregularity: leave without matching enter");
      stack.back().leave_id = id;
      done.push_back(std::move(stack.back()));
      stack.pop_back();
    } else if (!stack.empty()) {
      stack.back().body.push_back(id);
    }
  }
  if (!stack.empty())
    throw TransformError("frame nesting irregularity: enter without matching leave");
  // deterministic processing order: by position of the enter
  std::map<InstrId, size_t> pos;
  size_t i = 0;
  for (InstrId id : structural_sequence(ir)) pos[id] = i++;
  std::sort(done.begin(), done.end(), [&](const FrameRegion& a, const FrameRegion& b) {
    return pos.at(a.enter_id) < pos.at(b.enter_id);
  });
  return done;
}

inline bool is_sp_relative_mem(const Instruction& in) {
  return (in.opcode == Opcode::Load || in.opcode == Opcode::Store) && in.reg_b == kSp;
}

}  // namespace detail

// --------------------------------------------------------------- transforms

// Block-level layout randomization: a seeded uniform permutation of layout
// ranks. Blocks holding pinned instructions keep their ranks so the emitter
// can still honor the pins.
inline ProgramIR bilr(ProgramIR ir, uint64_t seed) {
  std::set<BlockId> pinned_blocks;
  for (const auto& [id, off] : ir.pins) {
    size_t idx = 0;
    if (auto* blk = detail::block_containing(ir, id, &idx)) pinned_blocks.insert(blk->id);
  }
  std::vector<size_t> movable;
  std::vector<uint32_t> slots;
  for (size_t i = 0; i < ir.blocks.size(); ++i) {
    if (pinned_blocks.count(ir.blocks[i].id)) continue;
    movable.push_back(i);
    slots.push_back(ir.blocks[i].layout_rank);
  }
  Rng rng(seed);
  auto perm = random_permutation(static_cast<uint32_t>(movable.size()), rng);
  for (size_t k = 0; k < movable.size(); ++k)
    ir.blocks[movable[k]].layout_rank = slots[perm[k]];
  ir.invalidate_analyses();
  return ir;
}

// Per-function stack frame padding: ENTER grows by a seeded pad, every
// sp-relative access in the function shifts by the same amount, so all
// absolute addresses above the pad stay put and behavior is unchanged.
inline ProgramIR stack_pad(ProgramIR ir, uint64_t seed, const TransformConfig& cfg) {
  int64_t max_pad = config_get(cfg, "max_pad_words", 16);
  if (max_pad < 1) throw TransformError("stack_pad: max_pad_words must be >= 1");
  auto frames = detail::match_frames(ir);
  Rng rng(seed);
  for (const auto& frame : frames) {
    int64_t pad = 1 + static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(max_pad)));
    ir.instr(frame.enter_id).payload.imm += pad;
    for (InstrId id : frame.body) {
      auto& in = ir.instr(id);
      if (detail::is_sp_relative_mem(in.payload)) in.payload.imm += pad;
    }
  }
  ir.invalidate_analyses();
  return ir;
}

// Permutes data object order; every data address is re-derived from the
// symbolic references at emission, so no immediate needs touching here.
inline ProgramIR global_shuffle(ProgramIR ir, uint64_t seed) {
  for (const auto& [id, in] : ir.instructions)
    if (in.ambiguous_global)
      throw TransformError(
          "global_shuffle: unattributable global-region immediate at instruction " +
          std::to_string(id));
  Rng rng(seed);
  auto perm = random_permutation(static_cast<uint32_t>(ir.data_objects.size()), rng);
  std::vector<IRDataObject> next(ir.data_objects.size());
  for (size_t i = 0; i < perm.size(); ++i) next[i] = std::move(ir.data_objects[perm[i]]);
  ir.data_objects = std::move(next);
  ir.invalidate_analyses();
  return ir;
}

// Pads every ALLOC request by a seeded per-site amount, staged through a dead
// register (push/pop save-restore when nothing is dead).
inline ProgramIR heap_pad(ProgramIR ir, uint64_t seed, const TransformConfig& cfg) {
  int64_t max_pad = config_get(cfg, "max_pad_words", 8);
  if (max_pad < 1) throw TransformError("heap_pad: max_pad_words must be >= 1");
  std::vector<InstrId> sites;
  for (InstrId id : detail::structural_sequence(ir))
    if (ir.instr(id).payload.opcode == Opcode::Alloc) sites.push_back(id);
  Rng rng(seed);
  for (InstrId site : sites) {
    int64_t pad = 1 + static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(max_pad)));
    auto payload = ir.instr(site).payload;  // ALLOC ra, rb
    uint8_t ra = payload.reg_a, rb = payload.reg_b;
    auto dead = pick_dead_register(dead_mask_before(ir, site));
    // the site id keeps heading the sequence so branches into the ALLOC
    // still run the scratch setup
    if (dead) {
      uint8_t s = *dead;  // rb is live at the site, so s != rb
      morph(ir, site, make_instr(Opcode::Movi, s, 0, 0, pad));
      InstrId a1 = detail::splice_after_raw(ir, site, make_instr(Opcode::Add, s, rb, s));
      detail::splice_after_raw(ir, a1, make_instr(Opcode::Alloc, ra, s));
    } else {
      uint8_t t = 0;
      while (t == ra || t == rb) ++t;
      morph(ir, site, make_instr(Opcode::Push, t));
      InstrId a1 = detail::splice_after_raw(ir, site, make_instr(Opcode::Movi, t, 0, 0, pad));
      InstrId a2 = detail::splice_after_raw(ir, a1, make_instr(Opcode::Add, t, rb, t));
      InstrId a3 = detail::splice_after_raw(ir, a2, make_instr(Opcode::Alloc, ra, t));
      detail::splice_after_raw(ir, a3, make_instr(Opcode::Pop, t));
    }
    rebuild_blocks(ir);
  }
  ir.invalidate_analyses();
  return ir;
}

// Stack canary: one extra frame slot right below the return address gets a
// seeded value at entry; it is reloaded and compared before LEAVE, and a
// mismatch traps. Accesses that reach above the original frame shift by one
// to compensate for the new slot.
inline ProgramIR canary(ProgramIR ir, uint64_t seed) {
  auto frames = detail::match_frames(ir);
  Rng rng(seed);
  for (const auto& frame : frames) {
    int64_t canary_value = static_cast<int64_t>(rng.next_u64());
    int64_t slot = frame.enter_imm + 1;

    ir.instr(frame.enter_id).payload.imm = slot;
    for (InstrId id : frame.body) {
      auto& in = ir.instr(id);
      if (detail::is_sp_relative_mem(in.payload) && in.payload.imm >= slot)
        in.payload.imm += 1;
    }

    // entry: store the canary into the reserved slot
    InstrId after_enter = *ir.instr(frame.enter_id).fallthrough;
    auto entry_dead = pick_dead_register(dead_mask_before(ir, after_enter));
    if (entry_dead) {
      uint8_t rd = *entry_dead;
      InstrId m = insert_after(ir, frame.enter_id, make_instr(Opcode::Movi, rd, 0, 0, canary_value));
      insert_after(ir, m, make_instr(Opcode::Store, rd, kSp, 0, slot));
    } else {
      uint8_t rd = 0;
      InstrId p1 = insert_after(ir, frame.enter_id, make_instr(Opcode::Push, rd));
      InstrId p2 = insert_after(ir, p1, make_instr(Opcode::Movi, rd, 0, 0, canary_value));
      // the push moved sp down one word
      InstrId p3 = insert_after(ir, p2, make_instr(Opcode::Store, rd, kSp, 0, slot + 1));
      insert_after(ir, p3, make_instr(Opcode::Pop, rd));
    }

    // exit: reload, compare, trap on mismatch; the LEAVE id morphs into the
    // start of the check so jumps to the epilogue cannot bypass it
    uint8_t exit_dead_mask = dead_mask_before(ir, frame.leave_id);
    auto rd = pick_dead_register(exit_dead_mask);
    auto re = rd ? pick_dead_register(exit_dead_mask, static_cast<uint8_t>(1u << *rd))
                 : std::nullopt;
    if (rd && re) {
      morph(ir, frame.leave_id, make_instr(Opcode::Load, *rd, kSp, 0, slot));
      InstrId c2 = detail::splice_after_raw(ir, frame.leave_id,
                                            make_instr(Opcode::Movi, *re, 0, 0, canary_value));
      InstrId c3 = detail::splice_after_raw(ir, c2, make_instr(Opcode::Beq, *rd, *re, 0, 0));
      InstrId c4 = detail::splice_after_raw(ir, c3, make_instr(Opcode::Trap));
      InstrId lv = detail::splice_after_raw(ir, c4, make_instr(Opcode::Leave));
      ir.instr(c3).branch_targets = {lv};
    } else {
      // spill whatever we must; displacements account for the active pushes
      uint8_t r0 = rd.value_or(0);
      uint8_t r1 = 0;
      while (r1 == r0) ++r1;
      int64_t pushes = rd ? 1 : 2;
      std::vector<Instruction> seq;
      if (!rd) seq.push_back(make_instr(Opcode::Push, r0));
      seq.push_back(make_instr(Opcode::Push, r1));
      seq.push_back(make_instr(Opcode::Load, r0, kSp, 0, slot + pushes));
      seq.push_back(make_instr(Opcode::Movi, r1, 0, 0, canary_value));
      morph(ir, frame.leave_id, seq[0]);
      InstrId prev = frame.leave_id;
      for (size_t i = 1; i < seq.size(); ++i)
        prev = detail::splice_after_raw(ir, prev, seq[i]);
      InstrId beq = detail::splice_after_raw(ir, prev, make_instr(Opcode::Beq, r0, r1, 0, 0));
      InstrId trap = detail::splice_after_raw(ir, beq, make_instr(Opcode::Trap));
      InstrId first_pop = detail::splice_after_raw(ir, trap, make_instr(Opcode::Pop, r1));
      InstrId tail = first_pop;
      if (!rd) tail = detail::splice_after_raw(ir, first_pop, make_instr(Opcode::Pop, r0));
      detail::splice_after_raw(ir, tail, make_instr(Opcode::Leave));
      ir.instr(beq).branch_targets = {first_pop};
    }
    rebuild_blocks(ir);
  }
  ir.invalidate_analyses();
  return ir;
}

namespace detail {

// Sorted, deduplicated indirect-target set: every jump table entry.
inline std::vector<InstrId> known_indirect_targets(const ProgramIR& ir) {
  std::set<InstrId> s;
  for (const auto& obj : ir.data_objects)
    if (obj.kind == DataKind::JumpTable)
      for (InstrId e : obj.entries) s.insert(e);
  return {s.begin(), s.end()};
}

}  // namespace detail

// Rewrites every indirect branch into a compare-and-branch chain over its
// known targets, ending in TRAP for values outside the table. Afterwards the
// IR contains no indirect-flagged instruction.
inline ProgramIR indirect_to_direct(ProgramIR ir) {
  auto targets = detail::known_indirect_targets(ir);
  std::vector<InstrId> sites;
  for (InstrId id : detail::structural_sequence(ir))
    if (ir.instr(id).indirect) sites.push_back(id);
  for (InstrId site : sites) {
    if (targets.empty())
      throw TransformError("indirect_to_direct: indirect branch with empty known-target set");
    bool is_call = ir.instr(site).payload.opcode == Opcode::Calli;
    uint8_t rt = ir.instr(site).payload.reg_a;
    InstrId continuation = is_call ? *ir.instr(site).fallthrough : 0;

    auto dead = pick_dead_register(dead_mask_before(ir, site), static_cast<uint8_t>(1u << rt));
    bool spill = !dead.has_value();
    uint8_t s = dead.value_or(rt == 0 ? 1 : 0);

    // the site itself morphs into the first chain instruction so that every
    // incoming edge goes through the checks
    InstrId prev = site;
    if (spill) {
      morph(ir, site, make_instr(Opcode::Push, s));
      prev = detail::splice_after_raw(ir, prev, make_instr(Opcode::Movi, s, 0, 0, 0));
      ir.instr(prev).code_ref = targets[0];
    } else {
      morph(ir, site, make_instr(Opcode::Movi, s, 0, 0, 0));
      ir.instr(site).code_ref = targets[0];
    }

    // per-target dispatch destinations
    std::vector<InstrId> dests;
    for (InstrId t : targets) {
      if (!is_call && !spill) {
        dests.push_back(t);  // plain jump straight to the target
      } else {
        auto& stub = detail::append_block(ir);
        InstrId head = 0;
        if (spill) head = detail::append_instr(ir, stub, make_instr(Opcode::Pop, s));
        if (is_call) {
          InstrId c = detail::append_instr(ir, stub, make_instr(Opcode::Call, 0, 0, 0, 0));
          ir.instr(c).branch_targets = {t};
          if (!head) head = c;
          InstrId j = detail::append_instr(ir, stub, make_instr(Opcode::Jmp));
          ir.instr(j).branch_targets = {continuation};
        } else {
          InstrId j = detail::append_instr(ir, stub, make_instr(Opcode::Jmp));
          ir.instr(j).branch_targets = {t};
          if (!head) head = j;
        }
        dests.push_back(head);
      }
    }

    for (size_t k = 0; k < targets.size(); ++k) {
      if (k > 0) {
        prev = detail::splice_after_raw(ir, prev, make_instr(Opcode::Movi, s, 0, 0, 0));
        ir.instr(prev).code_ref = targets[k];
      }
      prev = detail::splice_after_raw(ir, prev, make_instr(Opcode::Beq, rt, s, 0, 0));
      ir.instr(prev).branch_targets = {dests[k]};
    }
    detail::splice_after_raw(ir, prev, make_instr(Opcode::Trap));
    rebuild_blocks(ir);
  }
  rebuild_blocks(ir);
  return ir;
}

// Control-flow integrity: each indirect branch is preceded by a membership
// check of its target register against the known-target set; out-of-set
// values trap, in-set values proceed through the original instruction.
inline ProgramIR cfi_check(ProgramIR ir) {
  auto targets = detail::known_indirect_targets(ir);
  std::vector<InstrId> sites;
  for (InstrId id : detail::structural_sequence(ir))
    if (ir.instr(id).indirect) sites.push_back(id);
  for (InstrId site : sites) {
    Instruction original = ir.instr(site).payload;
    uint8_t rt = original.reg_a;
    auto dead = pick_dead_register(dead_mask_before(ir, site), static_cast<uint8_t>(1u << rt));
    bool spill = !dead.has_value();
    uint8_t s = dead.value_or(rt == 0 ? 1 : 0);

    InstrId prev = site;
    if (targets.empty()) {
      // empty membership set: nothing is valid, fail closed
      morph(ir, site, make_instr(Opcode::Trap));
      detail::splice_after_raw(ir, prev, original);
      rebuild_blocks(ir);
      continue;
    }
    if (spill) {
      morph(ir, site, make_instr(Opcode::Push, s));
    } else {
      morph(ir, site, make_instr(Opcode::Movi, s, 0, 0, 0));
      ir.instr(site).code_ref = targets[0];
    }
    std::vector<InstrId> pending_beqs;
    for (size_t k = 0; k < targets.size(); ++k) {
      if (k > 0 || spill) {
        prev = detail::splice_after_raw(ir, prev, make_instr(Opcode::Movi, s, 0, 0, 0));
        ir.instr(prev).code_ref = targets[k];
      }
      prev = detail::splice_after_raw(ir, prev, make_instr(Opcode::Beq, rt, s, 0, 0));
      pending_beqs.push_back(prev);
    }
    prev = detail::splice_after_raw(ir, prev, make_instr(Opcode::Trap));
    InstrId ok = 0;
    if (spill) {
      ok = detail::splice_after_raw(ir, prev, make_instr(Opcode::Pop, s));
      detail::splice_after_raw(ir, ok, original);
    } else {
      ok = detail::splice_after_raw(ir, prev, original);
    }
    for (InstrId b : pending_beqs) ir.instr(b).branch_targets = {ok};
    rebuild_blocks(ir);
  }
  return ir;
}

// ------------------------------------------------------------ plugin catalog

inline const std::map<std::string, TransformPlugin>& plugin_catalog() {
  static const std::map<std::string, TransformPlugin> catalog = [] {
    std::map<std::string, TransformPlugin> c;
    auto add = [&](TransformPlugin p) { c[p.name] = std::move(p); };
    add({"bilr", "1.0.0", facet_bit(Facet::CodeLayout), facet_bit(Facet::CodeLayout), 0,
         std::nullopt,
         [](ProgramIR ir, uint64_t seed, const TransformConfig&) { return bilr(std::move(ir), seed); }});
    add({"stack_pad", "1.0.0", facet_bit(Facet::StackFrames), facet_bit(Facet::StackFrames), 0,
         std::nullopt,
         [](ProgramIR ir, uint64_t seed, const TransformConfig& cfg) {
           return stack_pad(std::move(ir), seed, cfg);
         }});
    add({"global_shuffle", "1.0.0", facet_bit(Facet::GlobalLayout),
         facet_bit(Facet::GlobalLayout), 0, std::nullopt,
         [](ProgramIR ir, uint64_t seed, const TransformConfig&) {
           return global_shuffle(std::move(ir), seed);
         }});
    add({"heap_pad", "1.0.0", facet_bit(Facet::HeapSizes),
         facet_bit(Facet::HeapSizes) | facet_bit(Facet::InstructionStream),
         kAnalysisCfg | kAnalysisLiveness, std::nullopt,
         [](ProgramIR ir, uint64_t seed, const TransformConfig& cfg) {
           return heap_pad(std::move(ir), seed, cfg);
         }});
    add({"canary", "1.0.0", facet_bit(Facet::StackFrames),
         facet_bit(Facet::StackFrames) | facet_bit(Facet::InstructionStream),
         kAnalysisCfg | kAnalysisLiveness, std::nullopt,
         [](ProgramIR ir, uint64_t seed, const TransformConfig&) {
           return canary(std::move(ir), seed);
         }});
    add({"indirect_to_direct", "1.0.0", facet_bit(Facet::IndirectBranches),
         facet_bit(Facet::IndirectBranches) | facet_bit(Facet::InstructionStream) |
             facet_bit(Facet::CodeLayout),
         kAnalysisCfg | kAnalysisLiveness, std::nullopt,
         [](ProgramIR ir, uint64_t, const TransformConfig&) {
           return indirect_to_direct(std::move(ir));
         }});
    add({"cfi_check", "1.0.0", facet_bit(Facet::IndirectBranches),
         facet_bit(Facet::InstructionStream) | facet_bit(Facet::CodeLayout),
         kAnalysisCfg | kAnalysisLiveness, Facet::IndirectBranches,
         [](ProgramIR ir, uint64_t, const TransformConfig&) {
           return cfi_check(std::move(ir));
         }});
    return c;
  }();
  return catalog;
}

// ----------------------------------------------------------------- pipeline

struct PipelineStage {
  std::string plugin;
  TransformConfig config;

  bool operator==(const PipelineStage&) const = default;
};

struct PipelineSpec {
  uint64_t master_seed = 0;
  std::vector<PipelineStage> stages;

  bool operator==(const PipelineSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const PipelineStage& s) {
  j = nlohmann::json{{"plugin", s.plugin}, {"config", s.config}};
}
inline void from_json(const nlohmann::json& j, PipelineStage& s) {
  j.at("plugin").get_to(s.plugin);
  if (j.contains("config")) j.at("config").get_to(s.config);
}
inline void to_json(nlohmann::json& j, const PipelineSpec& p) {
  j = nlohmann::json{{"master_seed", p.master_seed}, {"stages", p.stages}};
}
inline void from_json(const nlohmann::json& j, PipelineSpec& p) {
  j.at("master_seed").get_to(p.master_seed);
  p.stages.clear();
  if (j.contains("stages")) j.at("stages").get_to(p.stages);
}

struct ComposeWarning {
  size_t stage_index = 0;
  std::string plugin;
  std::string message;
};

struct StageTiming {
  std::string plugin;
  double millis = 0;
};

struct ComposeResult {
  ProgramIR ir;
  std::vector<ComposeWarning> warnings;
  std::vector<StageTiming> timings;
};

// Applies the pipeline in order. Per stage: derive the seed, re-run whatever
// analyses the plugin declares (only if a previous stage invalidated them),
// check facet workloads for the consumed-facet warning, apply, and validate
// the plugin's output.
inline ComposeResult compose(const PipelineSpec& pipeline, ProgramIR ir) {
  ComposeResult result;
  std::map<Facet, size_t> consumed_by_stage;  // facet -> writer stage index
  constexpr Facet kAllFacets[] = {Facet::CodeLayout,      Facet::StackFrames,
                                  Facet::GlobalLayout,    Facet::HeapSizes,
                                  Facet::IndirectBranches, Facet::InstructionStream};

  for (size_t idx = 0; idx < pipeline.stages.size(); ++idx) {
    const auto& stage = pipeline.stages[idx];
    auto it = plugin_catalog().find(stage.plugin);
    if (it == plugin_catalog().end())
      throw PipelineError(idx, "unknown plugin '" + stage.plugin + "'");
    const TransformPlugin& plugin = it->second;

    if (plugin.warn_if_read_empty &&
        facet_workload(ir, *plugin.warn_if_read_empty) == 0) {
      Facet f = *plugin.warn_if_read_empty;
      if (consumed_by_stage.count(f))
        result.warnings.push_back(
            {idx, plugin.name,
             std::string("facet ") + facet_name(f) + " consumed by earlier stage"});
      else
        result.warnings.push_back(
            {idx, plugin.name, std::string("facet ") + facet_name(f) + " empty"});
    }

    uint32_t need = plugin.analyses_needed;
    uint32_t stale = 0;
    if ((need & kAnalysisCfg) && !ir.analyses.cfg_valid) stale |= kAnalysisCfg;
    if ((need & kAnalysisLiveness) && !ir.analyses.liveness_valid) stale |= kAnalysisLiveness;
    if (stale) reanalyze(ir, stale);

    std::map<Facet, size_t> before;
    for (Facet f : kAllFacets)
      if (plugin.writes & facet_bit(f)) before[f] = facet_workload(ir, f);

    uint64_t seed = derive_seed(pipeline.master_seed, idx, plugin.name);
    auto t0 = std::chrono::steady_clock::now();
    try {
      ir = plugin.apply(std::move(ir), seed, stage.config);
    } catch (const TransformError& e) {
      throw PipelineError(idx, std::string(plugin.name) + ": " + e.what());
    }
    auto t1 = std::chrono::steady_clock::now();
    result.timings.push_back(
        {plugin.name, std::chrono::duration<double, std::milli>(t1 - t0).count()});

    auto violations = validate(ir);
    if (!violations.empty())
      throw PipelineError(idx, plugin.name + " produced invalid IR: " +
                                   violations.front().message);

    for (auto& [f, was] : before)
      if (was > 0 && facet_workload(ir, f) == 0) consumed_by_stage[f] = idx;
  }
  result.ir = std::move(ir);
  return result;
}

}  // namespace disa
