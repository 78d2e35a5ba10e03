#pragma once

// Lowers ProgramIR to a concrete ProgramImage. Blocks are placed in
// layout_rank order; pinned instructions land exactly at their required
// offsets with TRAP filler in the gaps (jumping into filler should be loudly
// wrong, so filler is never NOP). Severed fallthroughs get an explicit JMP.
// Every address-bearing immediate is recomputed here: direct branch targets,
// code refs, jump table words, data object addresses.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "disa/digest.hpp"
#include "disa/ir.hpp"

namespace disa {

class EmitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EmitOptions {
  // test hook: emit jump table words unpatched (raw instruction ids) to let
  // differential tests prove the oracle catches a broken emitter
  bool skip_jumptable_patch = false;
};

inline ProgramImage emit(const ProgramIR& ir, const EmitOptions& options = {}) {
  auto violations = validate(ir);
  if (!violations.empty())
    throw EmitError("emit: invalid IR: " + violations.front().message + " (id " +
                    std::to_string(violations.front().id) + ")");

  std::vector<const BasicBlock*> ranked;
  for (const auto& b : ir.blocks) ranked.push_back(&b);
  std::sort(ranked.begin(), ranked.end(),
            [](const BasicBlock* a, const BasicBlock* b) {
              return a->layout_rank < b->layout_rank;
            });

  std::map<InstrId, BlockId> block_of;
  for (const auto& b : ir.blocks)
    for (InstrId m : b.members) block_of[m] = b.id;

  // required start offset for blocks that contain pinned instructions
  std::map<BlockId, uint32_t> pinned_start;
  for (const auto& [id, required] : ir.pins) {
    const auto* blk = [&]() -> const BasicBlock* {
      for (const auto& b : ir.blocks)
        if (block_of.at(id) == b.id) return &b;
      return nullptr;
    }();
    size_t idx = 0;
    while (blk->members[idx] != id) ++idx;
    if (required < idx)
      throw EmitError("pin at offset " + std::to_string(required) +
                      " puts its block before offset 0");
    uint32_t start = required - static_cast<uint32_t>(idx);
    auto [it, inserted] = pinned_start.emplace(blk->id, start);
    if (!inserted && it->second != start)
      throw EmitError("conflicting pins within one block");
  }

  // one emitted record: an IR instruction, a trap filler, or a fixup jump
  struct Slot {
    enum Kind { Instr, Filler, Fixup } kind;
    InstrId id = 0;  // Instr: instruction id; Fixup: jump target id
  };
  std::vector<Slot> slots;
  std::map<InstrId, uint32_t> offset_of;

  for (size_t i = 0; i < ranked.size(); ++i) {
    const BasicBlock& b = *ranked[i];
    uint32_t cursor = static_cast<uint32_t>(slots.size());

    // previous block's fallthrough fixup
    if (i > 0) {
      const BasicBlock& prev = *ranked[i - 1];
      const auto& last = ir.instr(prev.members.back());
      if (last.fallthrough) {
        bool pad_ahead = false;
        if (auto it = pinned_start.find(b.id); it != pinned_start.end())
          pad_ahead = it->second > cursor;
        if (block_of.at(*last.fallthrough) != b.id || pad_ahead) {
          slots.push_back({Slot::Fixup, *last.fallthrough});
          ++cursor;
        }
      }
    }

    if (auto it = pinned_start.find(b.id); it != pinned_start.end()) {
      if (it->second < cursor)
        throw EmitError("pinned offset " + std::to_string(it->second) +
                        " unreachable, preceding blocks already reach " +
                        std::to_string(cursor));
      while (cursor < it->second) {
        slots.push_back({Slot::Filler, 0});
        ++cursor;
      }
    }
    for (InstrId m : b.members) {
      offset_of[m] = static_cast<uint32_t>(slots.size());
      slots.push_back({Slot::Instr, m});
    }
  }
  if (!ranked.empty()) {
    const auto& last = ir.instr(ranked.back()->members.back());
    if (last.fallthrough) slots.push_back({Slot::Fixup, *last.fallthrough});
  }

  // data object layout precedes immediate patching: addresses depend on it
  ProgramImage img;
  for (const auto& obj : ir.data_objects) {
    DataObject d;
    d.name_hash = obj.name_hash;
    d.kind = obj.kind;
    if (obj.kind == DataKind::Raw) {
      d.words = obj.raw_words;
    } else {
      for (InstrId e : obj.entries)
        d.words.push_back(options.skip_jumptable_patch
                              ? static_cast<int64_t>(e)
                              : static_cast<int64_t>(offset_of.at(e)));
    }
    img.data_objects.push_back(std::move(d));
  }
  auto bases = object_bases(img);
  std::map<ObjectId, uint64_t> base_of;
  for (size_t i = 0; i < ir.data_objects.size(); ++i)
    base_of[ir.data_objects[i].id] = bases[i];

  for (const auto& slot : slots) {
    switch (slot.kind) {
      case Slot::Filler:
        img.code.push_back(make_instr(Opcode::Trap));
        break;
      case Slot::Fixup:
        img.code.push_back(
            make_instr(Opcode::Jmp, 0, 0, 0, static_cast<int64_t>(offset_of.at(slot.id))));
        break;
      case Slot::Instr: {
        const auto& in = ir.instr(slot.id);
        Instruction rec = in.payload;
        if (is_direct_branch(rec.opcode))
          rec.imm = static_cast<int64_t>(offset_of.at(in.branch_targets.front()));
        else if (in.code_ref)
          rec.imm = static_cast<int64_t>(offset_of.at(*in.code_ref));
        else if (in.global_ref)
          rec.imm = static_cast<int64_t>(base_of.at(in.global_ref->object) +
                                         in.global_ref->offset);
        img.code.push_back(rec);
        break;
      }
    }
  }

  for (const auto& [id, required] : ir.pins)
    img.pin_table.push_back({offset_of.at(id), required});
  std::sort(img.pin_table.begin(), img.pin_table.end(),
            [](const PinEntry& a, const PinEntry& b) { return a.offset < b.offset; });

  img.entry = offset_of.at(ir.entry);
  return img;
}

inline Sha256Digest digest(const ProgramImage& img) { return sha256(encode_image(img)); }

}  // namespace disa
