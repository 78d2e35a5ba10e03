#pragma once

// Rewriter intermediate representation. Everything is symbolic: instructions
// reference each other by stable id, jump tables hold instruction ids, data
// references carry (object id, offset). Concrete offsets exist only in
// ProgramImage; the emitter re-derives all of them, which is what makes
// layout randomization safe.
//
// Two orders coexist:
//   structural order  = the blocks vector and each block's member list;
//                       fallthrough edges follow it
//   layout order      = BasicBlock::layout_rank, a permutation the emitter
//                       places blocks by; transforms permute only this

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "disa/isa.hpp"

namespace disa {

using InstrId = uint32_t;
using BlockId = uint32_t;
using ObjectId = uint32_t;

struct GlobalRefSym {
  ObjectId object = 0;
  uint64_t offset = 0;  // word offset inside the object

  bool operator==(const GlobalRefSym&) const = default;
};

struct IRInstruction {
  InstrId id = 0;
  Instruction payload;
  std::optional<uint32_t> original_offset;
  std::optional<InstrId> fallthrough;
  std::vector<InstrId> branch_targets;  // direct targets only
  bool indirect = false;
  // immediate attribution: exactly one of these may be set
  std::optional<GlobalRefSym> global_ref;  // imm = address of object word
  std::optional<InstrId> code_ref;         // imm = final offset of instruction
  bool ambiguous_global = false;  // imm in global region but unattributable
};

struct IRDataObject {
  ObjectId id = 0;
  uint64_t name_hash = 0;
  DataKind kind = DataKind::Raw;
  std::vector<int64_t> raw_words;    // raw payload
  std::vector<InstrId> entries;      // jump table entries, symbolic

  size_t word_size() const {
    return kind == DataKind::Raw ? raw_words.size() : entries.size();
  }
};

struct BasicBlock {
  BlockId id = 0;
  std::vector<InstrId> members;  // structural order, nonempty
  std::vector<BlockId> successors;
  uint32_t layout_rank = 0;
};

struct LivenessResult {
  // registers (r0..r7 bitmask) dead immediately before each instruction;
  // sp is implicit and never dead
  std::map<InstrId, uint8_t> dead_before;
  std::map<InstrId, uint8_t> live_in;  // kept for diagnostics and tests

  bool operator==(const LivenessResult&) const = default;
};

struct CfgResult {
  std::map<InstrId, std::vector<InstrId>> successors;
  std::vector<InstrId> jumptable_union;  // all jump table entries, sorted
  std::vector<InstrId> return_sites;     // instruction after every call, sorted

  bool operator==(const CfgResult&) const = default;
};

enum AnalysisKind : uint32_t {
  kAnalysisCfg = 1u << 0,
  kAnalysisLiveness = 1u << 1,
  kAnalysisAll = kAnalysisCfg | kAnalysisLiveness,
};

struct AnalysisCache {
  bool cfg_valid = false;
  bool liveness_valid = false;
  CfgResult cfg;
  LivenessResult liveness;
};

struct IRMetadata {
  uint32_t word_width = 64;
  uint16_t source_version = 1;
};

class IRError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProgramIR {
  std::map<InstrId, IRInstruction> instructions;
  std::vector<BasicBlock> blocks;          // structural order
  std::vector<IRDataObject> data_objects;  // table order; shuffles permute this
  InstrId entry = 0;
  std::map<InstrId, uint32_t> pins;  // id -> required final offset
  IRMetadata metadata;
  AnalysisCache analyses;

  InstrId next_instr_id = 0;
  ObjectId next_object_id = 0;
  BlockId next_block_id = 0;

  IRInstruction& instr(InstrId id) {
    auto it = instructions.find(id);
    if (it == instructions.end()) throw IRError("no such instruction id " + std::to_string(id));
    return it->second;
  }
  const IRInstruction& instr(InstrId id) const {
    auto it = instructions.find(id);
    if (it == instructions.end()) throw IRError("no such instruction id " + std::to_string(id));
    return it->second;
  }
  IRDataObject* object_by_id(ObjectId id) {
    for (auto& o : data_objects)
      if (o.id == id) return &o;
    return nullptr;
  }
  const IRDataObject* object_by_id(ObjectId id) const {
    for (auto& o : data_objects)
      if (o.id == id) return &o;
    return nullptr;
  }

  void invalidate_analyses() {
    analyses.cfg_valid = false;
    analyses.liveness_valid = false;
  }
};

// ------------------------------------------------------------------ validate

struct Violation {
  std::string message;
  InstrId id = 0;  // offending instruction (or block/object id, see message)
};

using ValidationReport = std::vector<Violation>;

// Total: reports problems, never throws on malformed IR.
inline ValidationReport validate(const ProgramIR& ir) {
  ValidationReport report;
  auto flag = [&](const std::string& msg, uint32_t id) { report.push_back({msg, id}); };

  auto exists = [&](InstrId id) { return ir.instructions.count(id) != 0; };

  if (!exists(ir.entry)) flag("entry id does not exist", ir.entry);

  for (const auto& [id, in] : ir.instructions) {
    if (in.id != id) flag("instruction map key mismatch", id);
    auto form = opcode_info(in.payload.opcode).form;
    auto check_reg = [&](uint8_t r) {
      if (r > kSp) flag("register index out of range", id);
    };
    check_reg(in.payload.reg_a);
    check_reg(in.payload.reg_b);
    check_reg(in.payload.reg_c);
    if (in.fallthrough && !exists(*in.fallthrough)) flag("dangling fallthrough", id);
    for (InstrId t : in.branch_targets)
      if (!exists(t)) flag("dangling branch target", id);
    if (in.code_ref && !exists(*in.code_ref)) flag("dangling code reference", id);
    if (is_direct_branch(in.payload.opcode)) {
      if (in.branch_targets.size() != 1) flag("direct branch needs exactly one target", id);
    } else if (!in.branch_targets.empty()) {
      flag("non-branch instruction has branch targets", id);
    }
    if (in.indirect != is_indirect(in.payload.opcode)) flag("indirect flag inconsistent", id);
    if (has_fallthrough(in.payload.opcode)) {
      if (!in.fallthrough) flag("missing fallthrough", id);
    } else if (in.fallthrough) {
      flag("fallthrough on a non-fallthrough opcode", id);
    }
    (void)form;
  }

  for (const auto& obj : ir.data_objects) {
    if (obj.kind == DataKind::JumpTable)
      for (InstrId e : obj.entries)
        if (!exists(e)) flag("dangling jumptable entry", obj.id);
  }

  for (const auto& [id, off] : ir.pins)
    if (!exists(id)) flag("pinned id does not exist", id);

  // blocks partition: every member exists, belongs to exactly one block,
  // internal fallthrough chain is intact, terminators only at block ends
  std::map<InstrId, BlockId> owner;
  std::set<InstrId> block_starts;
  for (const auto& b : ir.blocks) {
    if (b.members.empty()) {
      flag("empty block", b.id);
      continue;
    }
    block_starts.insert(b.members.front());
    for (size_t i = 0; i < b.members.size(); ++i) {
      InstrId m = b.members[i];
      if (!exists(m)) {
        flag("block member does not exist", b.id);
        continue;
      }
      if (owner.count(m)) flag("instruction in two blocks", m);
      owner[m] = b.id;
      const auto& in = ir.instr(m);
      bool last = i + 1 == b.members.size();
      if (!last) {
        if (ends_block(in.payload.opcode)) flag("terminator mid-block", m);
        if (!in.fallthrough || *in.fallthrough != b.members[i + 1])
          flag("fallthrough chain broken inside block", m);
      }
    }
  }
  for (const auto& b : ir.blocks) {
    if (b.members.empty() || !exists(b.members.back())) continue;
    const auto& last = ir.instr(b.members.back());
    if (last.fallthrough && exists(*last.fallthrough) && !block_starts.count(*last.fallthrough))
      flag("fallthrough into middle of a block", b.members.back());
    for (InstrId t : last.branch_targets)
      if (exists(t) && !block_starts.count(t)) flag("branch target not at block start", b.members.back());
  }
  for (const auto& obj : ir.data_objects)
    if (obj.kind == DataKind::JumpTable)
      for (InstrId e : obj.entries)
        if (exists(e) && !block_starts.count(e)) flag("jumptable entry not at block start", e);

  // all instructions must be owned by some block (lift only materializes
  // reachable records, so partition means: every instruction)
  for (const auto& [id, in] : ir.instructions)
    if (!owner.count(id)) flag("instruction not in any block", id);

  // layout_rank must be a permutation of 0..n-1
  std::vector<uint32_t> ranks;
  for (const auto& b : ir.blocks) ranks.push_back(b.layout_rank);
  auto sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != i) {
      flag("layout_rank not a permutation", ir.blocks.empty() ? 0 : ir.blocks.front().id);
      break;
    }

  for (const auto& b : ir.blocks) {
    std::set<BlockId> known;
    for (const auto& bb : ir.blocks) known.insert(bb.id);
    for (BlockId s : b.successors)
      if (!known.count(s)) flag("dangling block successor", b.id);
  }
  return report;
}

// ------------------------------------------------------------ structural ops

namespace detail {

inline BasicBlock* block_containing(ProgramIR& ir, InstrId id, size_t* index_out = nullptr) {
  for (auto& b : ir.blocks) {
    auto it = std::find(b.members.begin(), b.members.end(), id);
    if (it != b.members.end()) {
      if (index_out) *index_out = static_cast<size_t>(it - b.members.begin());
      return &b;
    }
  }
  return nullptr;
}

}  // namespace detail

// Inserts a straight-line instruction before `pos` in its block. Branches to
// `pos` keep targeting `pos`; only fallthrough flow runs the new instruction
// ahead of it. Returns the new id.
inline InstrId insert_before(ProgramIR& ir, InstrId pos, const Instruction& payload) {
  size_t idx = 0;
  auto* blk = detail::block_containing(ir, pos, &idx);
  if (!blk) throw IRError("insert_before: instruction not in any block");
  IRInstruction in;
  in.id = ir.next_instr_id++;
  in.payload = payload;
  in.indirect = is_indirect(payload.opcode);
  in.fallthrough = pos;
  InstrId new_id = in.id;
  ir.instructions.emplace(new_id, std::move(in));
  blk->members.insert(blk->members.begin() + static_cast<long>(idx), new_id);
  if (idx > 0) {
    ir.instr(blk->members[idx - 1]).fallthrough = new_id;
  } else {
    // structural predecessor block falls through into what is now new_id
    for (auto& b : ir.blocks) {
      if (b.members.empty() || &b == blk) continue;
      auto& last = ir.instr(b.members.back());
      if (last.fallthrough && *last.fallthrough == pos) last.fallthrough = new_id;
    }
  }
  ir.invalidate_analyses();
  return new_id;
}

// Inserts after `pos` (pos must not be a block terminator).
inline InstrId insert_after(ProgramIR& ir, InstrId pos, const Instruction& payload) {
  size_t idx = 0;
  auto* blk = detail::block_containing(ir, pos, &idx);
  if (!blk) throw IRError("insert_after: instruction not in any block");
  auto& before = ir.instr(pos);
  if (ends_block(before.payload.opcode))
    throw IRError("insert_after: cannot insert after a terminator");
  IRInstruction in;
  in.id = ir.next_instr_id++;
  in.payload = payload;
  in.indirect = is_indirect(payload.opcode);
  in.fallthrough = before.fallthrough;
  InstrId new_id = in.id;
  before.fallthrough = new_id;
  ir.instructions.emplace(new_id, std::move(in));
  blk->members.insert(blk->members.begin() + static_cast<long>(idx) + 1, new_id);
  ir.invalidate_analyses();
  return new_id;
}

// Replaces the payload (and direct-branch wiring) of an existing instruction,
// keeping its id so incoming references stay valid.
inline void morph(ProgramIR& ir, InstrId id, const Instruction& payload,
                  std::vector<InstrId> targets = {}) {
  auto& in = ir.instr(id);
  in.payload = payload;
  in.indirect = is_indirect(payload.opcode);
  in.branch_targets = std::move(targets);
  in.global_ref.reset();
  in.code_ref.reset();
  in.ambiguous_global = false;
  size_t idx = 0;
  auto* blk = detail::block_containing(ir, id, &idx);
  if (!blk) throw IRError("morph: instruction not in any block");
  if (has_fallthrough(payload.opcode)) {
    if (idx + 1 < blk->members.size())
      in.fallthrough = blk->members[idx + 1];
    // else: caller must append a continuation or the block truly ends here
  } else {
    in.fallthrough.reset();
  }
  ir.invalidate_analyses();
}

// Deletes an instruction. Refuses rather than leaving dangling references.
inline void erase(ProgramIR& ir, InstrId id) {
  if (ir.entry == id) throw IRError("erase: instruction is the entry point");
  if (ir.pins.count(id)) throw IRError("erase: instruction is pinned");
  for (const auto& [oid, other] : ir.instructions) {
    if (oid == id) continue;
    for (InstrId t : other.branch_targets)
      if (t == id) throw IRError("erase: instruction is a branch target");
    if (other.code_ref && *other.code_ref == id)
      throw IRError("erase: instruction is referenced by a code ref");
  }
  for (const auto& obj : ir.data_objects)
    if (obj.kind == DataKind::JumpTable)
      for (InstrId e : obj.entries)
        if (e == id) throw IRError("erase: instruction is a jumptable entry");

  size_t idx = 0;
  auto* blk = detail::block_containing(ir, id, &idx);
  if (!blk) throw IRError("erase: instruction not in any block");
  auto ft = ir.instr(id).fallthrough;
  // relink structural predecessors
  if (idx > 0) {
    ir.instr(blk->members[idx - 1]).fallthrough = ft;
    if (!ft && !ends_block(ir.instr(blk->members[idx - 1]).payload.opcode))
      throw IRError("erase: would leave predecessor without fallthrough");
  } else {
    for (auto& b : ir.blocks) {
      if (b.members.empty()) continue;
      auto& last = ir.instr(b.members.back());
      if (&b != blk && last.fallthrough && *last.fallthrough == id) last.fallthrough = ft;
    }
  }
  blk->members.erase(blk->members.begin() + static_cast<long>(idx));
  ir.instructions.erase(id);
  if (blk->members.empty()) {
    BlockId bid = blk->id;
    ir.blocks.erase(std::remove_if(ir.blocks.begin(), ir.blocks.end(),
                                   [&](const BasicBlock& b) { return b.id == bid; }),
                    ir.blocks.end());
    for (auto& b : ir.blocks)
      b.successors.erase(std::remove(b.successors.begin(), b.successors.end(), bid),
                         b.successors.end());
    // ranks must stay a permutation
    std::vector<BasicBlock*> by_rank;
    for (auto& b : ir.blocks) by_rank.push_back(&b);
    std::sort(by_rank.begin(), by_rank.end(),
              [](auto* a, auto* b) { return a->layout_rank < b->layout_rank; });
    for (uint32_t i = 0; i < by_rank.size(); ++i) by_rank[i]->layout_rank = i;
  }
  ir.invalidate_analyses();
}

// Re-derives basic blocks from the structural instruction sequence. Layout
// ranks survive: new blocks are ranked by where their first instruction sat
// in the old rank order. Call after any transform that adds control flow.
inline void rebuild_blocks(ProgramIR& ir) {
  struct OldPos {
    uint32_t rank;
    size_t index;
  };
  std::map<InstrId, OldPos> old_pos;
  std::vector<InstrId> sequence;
  for (const auto& b : ir.blocks)
    for (size_t i = 0; i < b.members.size(); ++i) {
      old_pos[b.members[i]] = {b.layout_rank, i};
      sequence.push_back(b.members[i]);
    }

  std::set<InstrId> leaders;
  if (!sequence.empty()) leaders.insert(sequence.front());
  leaders.insert(ir.entry);
  for (const auto& [id, in] : ir.instructions)
    for (InstrId t : in.branch_targets) leaders.insert(t);
  for (const auto& obj : ir.data_objects)
    if (obj.kind == DataKind::JumpTable)
      for (InstrId e : obj.entries) leaders.insert(e);
  for (const auto& [id, off] : ir.pins) leaders.insert(id);
  for (size_t i = 0; i + 1 < sequence.size(); ++i)
    if (ends_block(ir.instr(sequence[i]).payload.opcode)) leaders.insert(sequence[i + 1]);

  std::vector<BasicBlock> blocks;
  std::map<InstrId, BlockId> block_of;
  for (size_t i = 0; i < sequence.size(); ++i) {
    InstrId id = sequence[i];
    if (i == 0 || leaders.count(id)) {
      BasicBlock b;
      b.id = ir.next_block_id++;
      blocks.push_back(std::move(b));
    }
    blocks.back().members.push_back(id);
    block_of[id] = blocks.back().id;
  }

  // fallthrough edges follow the structural sequence
  for (size_t i = 0; i < sequence.size(); ++i) {
    auto& in = ir.instr(sequence[i]);
    if (!has_fallthrough(in.payload.opcode)) {
      in.fallthrough.reset();
    } else if (i + 1 < sequence.size()) {
      in.fallthrough = sequence[i + 1];
    } else {
      in.fallthrough.reset();  // falls off the end; emitter has nothing to fix
    }
  }

  for (auto& b : blocks) {
    std::set<BlockId> succ;
    const auto& last = ir.instr(b.members.back());
    if (last.fallthrough) succ.insert(block_of.at(*last.fallthrough));
    for (InstrId t : last.branch_targets) succ.insert(block_of.at(t));
    b.successors.assign(succ.begin(), succ.end());
  }

  // stable rank assignment
  std::vector<size_t> order(blocks.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const auto pa = old_pos.at(blocks[a].members.front());
    const auto pb = old_pos.at(blocks[b].members.front());
    if (pa.rank != pb.rank) return pa.rank < pb.rank;
    return pa.index < pb.index;
  });
  for (uint32_t r = 0; r < order.size(); ++r) blocks[order[r]].layout_rank = r;

  ir.blocks = std::move(blocks);
  ir.invalidate_analyses();
}

// --------------------------------------------------------------- debug dump

inline std::string dump_ir(const ProgramIR& ir) {
  std::ostringstream out;
  out << "entry " << ir.entry << "\n";
  for (const auto& b : ir.blocks) {
    out << "block " << b.id << " rank " << b.layout_rank << "\n";
    for (InstrId m : b.members) {
      const auto& in = ir.instr(m);
      out << "  " << m << " " << opcode_info(in.payload.opcode).mnemonic;
      out << " a" << int(in.payload.reg_a) << " b" << int(in.payload.reg_b)
          << " c" << int(in.payload.reg_c) << " imm " << in.payload.imm;
      if (in.fallthrough) out << " ft " << *in.fallthrough;
      if (!in.branch_targets.empty()) {
        out << " ->";
        for (InstrId t : in.branch_targets) out << " " << t;
      }
      if (in.indirect) out << " indirect";
      if (in.global_ref)
        out << " gref obj" << in.global_ref->object << "+" << in.global_ref->offset;
      if (in.code_ref) out << " cref " << *in.code_ref;
      if (auto it = ir.pins.find(m); it != ir.pins.end()) out << " pin " << it->second;
      out << "\n";
    }
  }
  for (const auto& obj : ir.data_objects) {
    out << "object " << obj.id << (obj.kind == DataKind::JumpTable ? " jumptable" : " raw");
    if (obj.kind == DataKind::JumpTable) {
      for (InstrId e : obj.entries) out << " " << e;
    } else {
      out << " len " << obj.raw_words.size();
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace disa
