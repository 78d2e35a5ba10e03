#pragma once

// Deep static analysis from image to IR: recursive-descent reachability from
// the entry point, all jump table entries and all pins; basic block formation
// at leaders; jump tables and data references turned symbolic. Unreachable
// records are carried along as raw data objects and never re-enter the code
// stream (pure TRAP filler runs are dropped; the emitter regenerates filler
// from pins).

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "disa/emitter.hpp"
#include "disa/interp.hpp"
#include "disa/ir.hpp"
#include "disa/isa.hpp"

namespace disa {

class LiftError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline ProgramIR lift(const ProgramImage& img) {
  const uint32_t n = static_cast<uint32_t>(img.code.size());
  if (img.entry >= n) throw LiftError("entry out of range");

  auto target_of = [&](uint32_t off) -> uint32_t {
    int64_t imm = img.code[off].imm;
    if (imm < 0 || static_cast<uint64_t>(imm) >= n)
      throw LiftError("branch target out of range at offset " + std::to_string(off));
    return static_cast<uint32_t>(imm);
  };

  std::vector<uint32_t> roots{img.entry};
  for (const auto& obj : img.data_objects)
    if (obj.kind == DataKind::JumpTable)
      for (int64_t w : obj.words) {
        if (w < 0 || static_cast<uint64_t>(w) >= n)
          throw LiftError("misaligned jump table entry " + std::to_string(w));
        roots.push_back(static_cast<uint32_t>(w));
      }
  for (const auto& pin : img.pin_table) roots.push_back(pin.offset);

  // recursive-descent reachability over offsets
  std::vector<bool> reachable(n, false);
  std::vector<uint32_t> work = roots;
  while (!work.empty()) {
    uint32_t off = work.back();
    work.pop_back();
    if (reachable[off]) continue;
    reachable[off] = true;
    const auto& in = img.code[off];
    if (is_direct_branch(in.opcode)) work.push_back(target_of(off));
    if (has_fallthrough(in.opcode)) {
      if (off + 1 >= n)
        continue;  // falls off the end; execution faults there, still liftable
      work.push_back(off + 1);
    }
  }

  // leaders: entry, roots, branch targets, records after block-enders,
  // starts of reachable runs
  std::vector<bool> leader(n, false);
  for (uint32_t r : roots) leader[r] = true;
  for (uint32_t off = 0; off < n; ++off) {
    if (!reachable[off]) continue;
    const auto& in = img.code[off];
    if (is_direct_branch(in.opcode)) leader[target_of(off)] = true;
    if (ends_block(in.opcode) && off + 1 < n && reachable[off + 1]) leader[off + 1] = true;
    if (off == 0 || !reachable[off - 1]) leader[off] = true;
  }

  ProgramIR ir;
  ir.next_instr_id = 1;  // ids deliberately offset from code offsets

  std::map<uint32_t, InstrId> id_at;
  for (uint32_t off = 0; off < n; ++off)
    if (reachable[off]) id_at[off] = ir.next_instr_id++;

  auto image_bases = object_bases(img);
  for (uint32_t off = 0; off < n; ++off) {
    if (!reachable[off]) continue;
    IRInstruction in;
    in.id = id_at[off];
    in.payload = img.code[off];
    in.original_offset = off;
    in.indirect = is_indirect(in.payload.opcode);
    if (has_fallthrough(in.payload.opcode) && off + 1 < n)
      in.fallthrough = id_at.at(off + 1);
    if (is_direct_branch(in.payload.opcode))
      in.branch_targets.push_back(id_at.at(target_of(off)));

    // symbolic data attribution for plain immediates
    auto form = opcode_info(in.payload.opcode).form;
    if (form == OperandForm::RaImm || form == OperandForm::RaRbImm ||
        form == OperandForm::Imm) {
      GlobalRef ref;
      switch (attribute_global(img, image_bases, in.payload.imm, &ref)) {
        case AttributionResult::Attributed:
          in.global_ref = GlobalRefSym{ref.object_index, ref.offset};
          break;
        case AttributionResult::Unattributable:
          in.ambiguous_global = true;
          break;
        case AttributionResult::NotGlobal:
          break;
      }
    }
    ir.instructions.emplace(in.id, std::move(in));
  }

  for (uint32_t off = 0; off < n; ++off) {
    if (!reachable[off]) continue;
    if (!leader[off] && off > 0 && reachable[off - 1] &&
        !has_fallthrough(img.code[off - 1].opcode))
      throw LiftError("internal: block boundary inconsistency");
    if (leader[off]) {
      BasicBlock b;
      b.id = ir.next_block_id++;
      ir.blocks.push_back(std::move(b));
    }
    ir.blocks.back().members.push_back(id_at.at(off));
  }

  // data objects keep table order; object ids are table indices
  for (size_t i = 0; i < img.data_objects.size(); ++i) {
    const auto& src = img.data_objects[i];
    IRDataObject obj;
    obj.id = ir.next_object_id++;
    obj.name_hash = src.name_hash;
    obj.kind = src.kind;
    if (src.kind == DataKind::Raw)
      obj.raw_words = src.words;
    else
      for (int64_t w : src.words) obj.entries.push_back(id_at.at(static_cast<uint32_t>(w)));
    ir.data_objects.push_back(std::move(obj));
  }

  // unreachable records survive as raw data, except pure TRAP filler
  uint32_t run_start = 0;
  bool in_run = false;
  auto flush_run = [&](uint32_t end) {
    bool all_trap = true;
    for (uint32_t o = run_start; o < end; ++o)
      if (img.code[o].opcode != Opcode::Trap) all_trap = false;
    if (all_trap) return;
    IRDataObject obj;
    obj.id = ir.next_object_id++;
    obj.name_hash = name_hash("unreachable@" + std::to_string(run_start));
    obj.kind = DataKind::Raw;
    for (uint32_t o = run_start; o < end; ++o) {
      std::vector<uint8_t> bytes;
      encode_instruction(bytes, img.code[o]);
      for (int w = 0; w < 2; ++w) {
        uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= static_cast<uint64_t>(bytes[w * 8 + k]) << (8 * k);
        obj.raw_words.push_back(static_cast<int64_t>(v));
      }
    }
    ir.data_objects.push_back(std::move(obj));
  };
  for (uint32_t off = 0; off < n; ++off) {
    if (!reachable[off] && !in_run) {
      in_run = true;
      run_start = off;
    } else if (reachable[off] && in_run) {
      in_run = false;
      flush_run(off);
    }
  }
  if (in_run) flush_run(n);

  for (const auto& pin : img.pin_table) ir.pins[id_at.at(pin.offset)] = pin.placement;
  ir.entry = id_at.at(img.entry);

  // identity layout; rebuild computes successors and fallthrough consistency
  for (uint32_t i = 0; i < ir.blocks.size(); ++i) ir.blocks[i].layout_rank = i;
  rebuild_blocks(ir);
  return ir;
}

// Differential identity check: lift, emit with untouched layout, run both
// images on every input vector, report what diverged.
struct RoundtripDivergence {
  size_t input_index = 0;
  ExecutionResult original;
  ExecutionResult relifted;
};

struct RoundtripReport {
  std::vector<RoundtripDivergence> divergences;
  bool ok() const { return divergences.empty(); }
};

inline RoundtripReport roundtrip_check(const ProgramImage& img,
                                       const std::vector<std::vector<int64_t>>& inputs,
                                       uint64_t step_limit = kDefaultStepLimit,
                                       const EmitOptions& emit_options = {}) {
  RoundtripReport report;
  auto relifted = emit(lift(img), emit_options);
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto a = execute(img, inputs[i], step_limit);
    auto b = execute(relifted, inputs[i], step_limit);
    if (!same_behavior(a, b)) report.divergences.push_back({i, a, b});
  }
  return report;
}

}  // namespace disa
