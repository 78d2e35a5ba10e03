#pragma once

// Renders a ProgramImage back to .dasm text. Offsets become synthetic labels
// (L<offset>), data objects get synthetic names (g<i> / jt<i>), immediates
// that attribute to a data object are printed symbolically. Reassembling the
// output yields a semantically identical image (object names hash differently
// but nothing observes names).

#include <set>
#include <sstream>
#include <string>

#include "disa/isa.hpp"

namespace disa {

inline std::string disassemble(const ProgramImage& img) {
  std::set<uint32_t> label_offsets;
  label_offsets.insert(img.entry);
  for (const auto& in : img.code)
    if (is_direct_branch(in.opcode) && in.imm >= 0 &&
        static_cast<uint64_t>(in.imm) < img.code.size())
      label_offsets.insert(static_cast<uint32_t>(in.imm));
  for (const auto& obj : img.data_objects)
    if (obj.kind == DataKind::JumpTable)
      for (int64_t w : obj.words)
        if (w >= 0 && static_cast<uint64_t>(w) < img.code.size())
          label_offsets.insert(static_cast<uint32_t>(w));
  for (const auto& pin : img.pin_table) label_offsets.insert(pin.offset);

  auto label = [](uint32_t off) { return "L" + std::to_string(off); };
  auto bases = object_bases(img);
  auto obj_name = [&](size_t i) {
    return (img.data_objects[i].kind == DataKind::JumpTable ? "jt" : "g") + std::to_string(i);
  };
  auto render_imm = [&](int64_t imm) -> std::string {
    GlobalRef ref;
    if (attribute_global(img, bases, imm, &ref) == AttributionResult::Attributed) {
      std::string s = obj_name(ref.object_index);
      if (ref.offset != 0) s += "+" + std::to_string(ref.offset);
      return s;
    }
    return std::to_string(imm);
  };

  std::ostringstream out;
  out << ".entry " << label(img.entry) << "\n";
  for (size_t i = 0; i < img.data_objects.size(); ++i) {
    const auto& obj = img.data_objects[i];
    if (obj.kind == DataKind::Raw) {
      out << ".global " << obj_name(i) << ", " << obj.words.size();
      for (int64_t w : obj.words) out << ", " << w;
      out << "\n";
    } else {
      out << ".jumptable " << obj_name(i) << ":";
      for (int64_t w : obj.words) out << " " << label(static_cast<uint32_t>(w));
      out << "\n";
    }
  }
  for (const auto& pin : img.pin_table)
    out << ".pin " << label(pin.offset) << " " << pin.placement << "\n";

  for (uint32_t off = 0; off < img.code.size(); ++off) {
    if (label_offsets.count(off)) out << label(off) << ":\n";
    const auto& in = img.code[off];
    const auto& info = opcode_info(in.opcode);
    auto reg = [](uint8_t r) { return r == kSp ? std::string("sp") : "r" + std::to_string(r); };
    out << "  " << info.mnemonic;
    switch (info.form) {
      case OperandForm::None: break;
      case OperandForm::Ra: out << " " << reg(in.reg_a); break;
      case OperandForm::RaRb: out << " " << reg(in.reg_a) << ", " << reg(in.reg_b); break;
      case OperandForm::RaRbRc:
        out << " " << reg(in.reg_a) << ", " << reg(in.reg_b) << ", " << reg(in.reg_c);
        break;
      case OperandForm::RaImm:
        out << " " << reg(in.reg_a) << ", " << render_imm(in.imm);
        break;
      case OperandForm::RaRbImm:
        out << " " << reg(in.reg_a) << ", " << reg(in.reg_b) << ", " << render_imm(in.imm);
        break;
      case OperandForm::Imm: out << " " << render_imm(in.imm); break;
      case OperandForm::Target: out << " " << label(static_cast<uint32_t>(in.imm)); break;
      case OperandForm::RaRbTarget:
        out << " " << reg(in.reg_a) << ", " << reg(in.reg_b) << ", "
            << label(static_cast<uint32_t>(in.imm));
        break;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace disa
