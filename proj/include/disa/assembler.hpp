#pragma once

// Assembler for the .dasm text format.
//
//   ; comment                     runs to end of line
//   label:        [instr]        labels bind to the next instruction
//   .entry LABEL                  default entry is offset 0
//   .global NAME, LEN [, w...]    raw data object, LEN words, zero-filled
//   .jumptable NAME: L1 L2 ...    jump table object, entries are labels
//   .pin LABEL OFFSET             instruction must sit at OFFSET; the
//                                 assembler pads with TRAP records to get
//                                 there, re-emission must honor it too
//
// Operands: registers r0..r7 and sp; immediates are decimal or 0x hex
// literals, or a data object name with optional +k/-k word offset (resolved
// to the object's absolute address). Branch targets are labels or literal
// instruction offsets.

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "disa/isa.hpp"

namespace disa {

class AsmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct PendingInstr {
  size_t line;
  Instruction instr;
  std::string target_label;          // direct branch target to resolve
  std::string imm_symbol;            // data object reference in imm
  int64_t imm_symbol_offset = 0;
};

struct ObjectDecl {
  std::string name;
  DataKind kind;
  std::vector<int64_t> init_words;          // raw objects
  std::vector<std::string> entry_labels;    // jump tables
  size_t line;
};

struct PinDecl {
  std::string label;
  uint32_t placement;
  size_t line;
};

inline std::vector<std::string> split_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::optional<int64_t> parse_int(std::string_view tok, bool* overflow = nullptr) {
  if (tok.empty()) return std::nullopt;
  bool neg = false;
  size_t i = 0;
  if (tok[0] == '+' || tok[0] == '-') {
    neg = tok[0] == '-';
    i = 1;
  }
  int base = 10;
  if (tok.size() > i + 1 && tok[i] == '0' && (tok[i + 1] == 'x' || tok[i + 1] == 'X')) {
    base = 16;
    i += 2;
  }
  if (i >= tok.size()) return std::nullopt;
  uint64_t mag = 0;
  auto [p, ec] = std::from_chars(tok.data() + i, tok.data() + tok.size(), mag, base);
  if (p != tok.data() + tok.size()) return std::nullopt;
  if (ec == std::errc::result_out_of_range) {
    if (overflow) *overflow = true;
    return std::nullopt;
  }
  // magnitude must fit a signed 64-bit immediate
  if (!neg && mag > static_cast<uint64_t>(INT64_MAX)) {
    if (overflow) *overflow = true;
    return std::nullopt;
  }
  if (neg && mag > static_cast<uint64_t>(INT64_MAX) + 1) {
    if (overflow) *overflow = true;
    return std::nullopt;
  }
  return neg ? -static_cast<int64_t>(mag) : static_cast<int64_t>(mag);
}

inline std::optional<uint8_t> parse_register(std::string_view tok) {
  if (tok == "sp") return kSp;
  if (tok.size() == 2 && tok[0] == 'r' && tok[1] >= '0' && tok[1] <= '7')
    return static_cast<uint8_t>(tok[1] - '0');
  return std::nullopt;
}

inline bool valid_symbol(std::string_view s) {
  if (s.empty() || (!isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_')) return false;
  for (char c : s)
    if (!isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  return true;
}

}  // namespace detail

inline ProgramImage assemble(const std::string& source) {
  using namespace detail;

  std::vector<PendingInstr> instrs;
  std::map<std::string, size_t> labels;  // name -> instruction ordinal
  std::vector<ObjectDecl> objects;
  std::map<std::string, size_t> object_index;
  std::vector<PinDecl> pins;
  std::optional<std::string> entry_label;

  auto fail = [](size_t line, const std::string& msg) -> void {
    std::ostringstream os;
    os << "line " << line << ": " << msg;
    throw AsmError(os.str());
  };

  std::istringstream src(source);
  std::string raw;
  size_t line_no = 0;
  while (std::getline(src, raw)) {
    ++line_no;
    if (auto sc = raw.find(';'); sc != std::string::npos) raw.erase(sc);
    std::string_view line(raw);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
      line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t'))
      line.remove_prefix(1);
    if (line.empty()) continue;

    // labels, possibly several, possibly followed by an instruction
    while (true) {
      size_t colon = line.find(':');
      size_t space = line.find_first_of(" \t");
      if (colon == std::string::npos || (space != std::string::npos && space < colon)) break;
      std::string name(line.substr(0, colon));
      if (!valid_symbol(name)) fail(line_no, "malformed label '" + name + "'");
      if (labels.count(name)) fail(line_no, "duplicate label '" + name + "'");
      labels[name] = instrs.size();
      line.remove_prefix(colon + 1);
      while (!line.empty() && (line.front() == ' ' || line.front() == '\t'))
        line.remove_prefix(1);
      if (line.empty()) break;
    }
    if (line.empty()) continue;

    if (line[0] == '.') {
      size_t space = line.find_first_of(" \t");
      std::string dir(line.substr(0, space == std::string::npos ? line.size() : space));
      std::string rest(space == std::string::npos ? "" : line.substr(space + 1));
      if (dir == ".entry") {
        auto toks = split_tokens(rest);
        if (toks.size() != 1 || !valid_symbol(toks[0]))
          fail(line_no, "malformed .entry directive");
        if (entry_label) fail(line_no, "duplicate .entry directive");
        entry_label = toks[0];
      } else if (dir == ".global") {
        auto toks = split_tokens(rest);
        if (toks.size() < 2 || !valid_symbol(toks[0]))
          fail(line_no, "malformed .global directive");
        ObjectDecl obj{toks[0], DataKind::Raw, {}, {}, line_no};
        bool overflow = false;
        auto len = parse_int(toks[1], &overflow);
        if (!len || *len < 0) fail(line_no, overflow ? "immediate overflow" : "malformed .global length");
        for (size_t i = 2; i < toks.size(); ++i) {
          overflow = false;
          auto v = parse_int(toks[i], &overflow);
          if (!v) fail(line_no, overflow ? "immediate overflow" : "malformed .global initializer");
          obj.init_words.push_back(*v);
        }
        if (obj.init_words.size() > static_cast<uint64_t>(*len))
          fail(line_no, ".global has more initializers than its length");
        obj.init_words.resize(static_cast<size_t>(*len), 0);
        if (object_index.count(obj.name)) fail(line_no, "duplicate data object '" + obj.name + "'");
        object_index[obj.name] = objects.size();
        objects.push_back(std::move(obj));
      } else if (dir == ".jumptable") {
        // .jumptable NAME: L1 L2 ...
        size_t colon = rest.find(':');
        if (colon == std::string::npos) fail(line_no, "malformed .jumptable directive");
        auto name_toks = split_tokens(std::string_view(rest).substr(0, colon));
        auto entry_toks = split_tokens(std::string_view(rest).substr(colon + 1));
        if (name_toks.size() != 1 || !valid_symbol(name_toks[0]) || entry_toks.empty())
          fail(line_no, "malformed .jumptable directive");
        ObjectDecl obj{name_toks[0], DataKind::JumpTable, {}, {}, line_no};
        for (auto& t : entry_toks) {
          if (!valid_symbol(t)) fail(line_no, "malformed .jumptable entry '" + t + "'");
          obj.entry_labels.push_back(t);
        }
        if (object_index.count(obj.name)) fail(line_no, "duplicate data object '" + obj.name + "'");
        object_index[obj.name] = objects.size();
        objects.push_back(std::move(obj));
      } else if (dir == ".pin") {
        auto toks = split_tokens(rest);
        if (toks.size() != 2 || !valid_symbol(toks[0]))
          fail(line_no, "malformed .pin directive");
        auto off = parse_int(toks[1]);
        if (!off || *off < 0 || *off > UINT32_MAX) fail(line_no, "malformed .pin offset");
        pins.push_back({toks[0], static_cast<uint32_t>(*off), line_no});
      } else {
        fail(line_no, "unknown directive '" + dir + "'");
      }
      continue;
    }

    // instruction
    size_t space = line.find_first_of(" \t");
    std::string mnemonic(line.substr(0, space == std::string::npos ? line.size() : space));
    auto op = opcode_from_mnemonic(mnemonic);
    if (!op) fail(line_no, "unknown mnemonic '" + mnemonic + "'");
    auto operands = split_tokens(space == std::string::npos ? std::string_view{} : line.substr(space + 1));

    PendingInstr pi{line_no, Instruction{*op, 0, 0, 0, 0}, "", "", 0};
    auto need = [&](size_t n) {
      if (operands.size() != n)
        fail(line_no, mnemonic + " expects " + std::to_string(n) + " operand(s)");
    };
    auto reg = [&](size_t i) -> uint8_t {
      auto r = parse_register(operands[i]);
      if (!r) fail(line_no, "bad register '" + operands[i] + "'");
      return *r;
    };
    // immediate: literal, or data object name with optional +/- word offset
    auto imm = [&](size_t i) {
      const std::string& tok = operands[i];
      bool overflow = false;
      if (auto v = parse_int(tok, &overflow)) {
        pi.instr.imm = *v;
        return;
      }
      if (overflow) fail(line_no, "immediate overflow");
      size_t split = tok.find_first_of("+-", 1);
      std::string sym = tok.substr(0, split);
      if (!valid_symbol(sym)) fail(line_no, "malformed immediate '" + tok + "'");
      int64_t off = 0;
      if (split != std::string::npos) {
        overflow = false;
        auto v = parse_int(std::string_view(tok).substr(split), &overflow);
        if (!v) fail(line_no, overflow ? "immediate overflow" : "malformed immediate '" + tok + "'");
        off = *v;
      }
      pi.imm_symbol = sym;
      pi.imm_symbol_offset = off;
    };
    auto target = [&](size_t i) {
      const std::string& tok = operands[i];
      if (auto v = parse_int(tok)) {
        pi.instr.imm = *v;
        return;
      }
      if (!valid_symbol(tok)) fail(line_no, "malformed branch target '" + tok + "'");
      pi.target_label = tok;
    };

    switch (opcode_info(*op).form) {
      case OperandForm::None: need(0); break;
      case OperandForm::Ra: need(1); pi.instr.reg_a = reg(0); break;
      case OperandForm::RaRb: need(2); pi.instr.reg_a = reg(0); pi.instr.reg_b = reg(1); break;
      case OperandForm::RaRbRc:
        need(3);
        pi.instr.reg_a = reg(0); pi.instr.reg_b = reg(1); pi.instr.reg_c = reg(2);
        break;
      case OperandForm::RaImm: need(2); pi.instr.reg_a = reg(0); imm(1); break;
      case OperandForm::RaRbImm:
        need(3);
        pi.instr.reg_a = reg(0); pi.instr.reg_b = reg(1); imm(2);
        break;
      case OperandForm::Imm: need(1); imm(0); break;
      case OperandForm::Target: need(1); target(0); break;
      case OperandForm::RaRbTarget:
        need(3);
        pi.instr.reg_a = reg(0); pi.instr.reg_b = reg(1); target(2);
        break;
    }
    instrs.push_back(std::move(pi));
  }

  if (instrs.empty()) throw AsmError("no instructions");

  // place instructions: pins force TRAP filler
  std::map<size_t, uint32_t> pinned_ordinal;  // ordinal -> required offset
  for (const auto& pin : pins) {
    auto it = labels.find(pin.label);
    if (it == labels.end()) fail(pin.line, "undefined label '" + pin.label + "'");
    if (it->second >= instrs.size()) fail(pin.line, "label '" + pin.label + "' has no instruction");
    if (pinned_ordinal.count(it->second)) fail(pin.line, "instruction pinned twice");
    pinned_ordinal[it->second] = pin.placement;
  }

  std::vector<uint32_t> final_offset(instrs.size());
  std::vector<Instruction> code;
  for (size_t i = 0; i < instrs.size(); ++i) {
    if (auto it = pinned_ordinal.find(i); it != pinned_ordinal.end()) {
      if (code.size() > it->second)
        fail(instrs[i].line, "pin at offset " + std::to_string(it->second) +
                                 " unreachable, code already at " + std::to_string(code.size()));
      while (code.size() < it->second) code.push_back(make_instr(Opcode::Trap));
    }
    final_offset[i] = static_cast<uint32_t>(code.size());
    code.push_back(instrs[i].instr);
  }

  // data object layout, then symbol resolution
  ProgramImage img;
  img.code = std::move(code);
  for (const auto& obj : objects) {
    DataObject d;
    d.name_hash = name_hash(obj.name);
    d.kind = obj.kind;
    if (obj.kind == DataKind::Raw) {
      d.words = obj.init_words;
    } else {
      for (const auto& lab : obj.entry_labels) {
        auto it = labels.find(lab);
        if (it == labels.end()) fail(obj.line, "undefined label '" + lab + "'");
        if (it->second >= instrs.size()) fail(obj.line, "label '" + lab + "' has no instruction");
        d.words.push_back(final_offset[it->second]);
      }
    }
    img.data_objects.push_back(std::move(d));
  }

  auto bases = object_bases(img);
  for (size_t i = 0; i < instrs.size(); ++i) {
    auto& pi = instrs[i];
    auto& out = img.code[final_offset[i]];
    if (!pi.target_label.empty()) {
      auto it = labels.find(pi.target_label);
      if (it == labels.end()) fail(pi.line, "undefined label '" + pi.target_label + "'");
      if (it->second >= instrs.size()) fail(pi.line, "label '" + pi.target_label + "' has no instruction");
      out.imm = final_offset[it->second];
    } else if (!pi.imm_symbol.empty()) {
      auto it = object_index.find(pi.imm_symbol);
      if (it == object_index.end()) fail(pi.line, "undefined symbol '" + pi.imm_symbol + "'");
      out.imm = static_cast<int64_t>(bases[it->second]) + pi.imm_symbol_offset;
    }
  }

  for (const auto& [ordinal, placement] : pinned_ordinal)
    img.pin_table.push_back({final_offset[ordinal], placement});

  if (entry_label) {
    auto it = labels.find(*entry_label);
    if (it == labels.end()) throw AsmError("undefined label '" + *entry_label + "'");
    if (it->second >= instrs.size()) throw AsmError("entry label has no instruction");
    img.entry = final_offset[it->second];
  } else {
    img.entry = 0;
  }
  return img;
}

}  // namespace disa
