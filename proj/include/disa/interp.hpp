#pragma once

// Reference interpreter for DISA images. Deterministic: the result is a pure
// function of (image, input, step_limit), which is what makes differential
// testing of rewritten images possible. Faults are ordinary results, not
// errors.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "disa/isa.hpp"

namespace disa {

enum class TerminationKind : uint8_t { Halt, Trap, StepLimit, Fault };

enum class FaultKind : uint8_t {
  None = 0,
  BadTarget,       // JMPI/CALLI/RET to an offset outside the code section
  InputExhausted,  // IN with no words left
  BadAlloc,        // ALLOC with a negative size
  PcOutOfRange,    // fell off the end of code or direct branch out of range
};

struct Termination {
  TerminationKind kind = TerminationKind::Halt;
  FaultKind fault = FaultKind::None;

  bool operator==(const Termination&) const = default;
};

inline std::string to_string(const Termination& t) {
  switch (t.kind) {
    case TerminationKind::Halt: return "halt";
    case TerminationKind::Trap: return "trap";
    case TerminationKind::StepLimit: return "step_limit";
    case TerminationKind::Fault:
      switch (t.fault) {
        case FaultKind::BadTarget: return "fault(bad_target)";
        case FaultKind::InputExhausted: return "fault(input_exhausted)";
        case FaultKind::BadAlloc: return "fault(bad_alloc)";
        case FaultKind::PcOutOfRange: return "fault(pc_out_of_range)";
        default: return "fault(?)";
      }
  }
  return "?";
}

struct ExecutionResult {
  std::vector<int64_t> output;
  uint64_t steps = 0;
  Termination termination;

  bool operator==(const ExecutionResult&) const = default;
};

// Outputs and termination must agree for two images to count as equivalent;
// step counts are allowed to differ (transforms insert instructions).
inline bool same_behavior(const ExecutionResult& a, const ExecutionResult& b) {
  return a.output == b.output && a.termination == b.termination;
}

constexpr uint64_t kDefaultStepLimit = 1'000'000;

inline ExecutionResult execute(const ProgramImage& img,
                               const std::vector<int64_t>& input,
                               uint64_t step_limit = kDefaultStepLimit) {
  ExecutionResult res;
  std::unordered_map<uint64_t, int64_t> mem;
  auto bases = object_bases(img);
  for (size_t i = 0; i < img.data_objects.size(); ++i) {
    const auto& obj = img.data_objects[i];
    for (size_t w = 0; w < obj.words.size(); ++w)
      if (obj.words[w] != 0) mem[bases[i] + w] = obj.words[w];
  }

  int64_t regs[9] = {};
  regs[kSp] = static_cast<int64_t>(kStackTop);
  uint64_t heap_next = kHeapBase;
  uint64_t pc = img.entry;
  size_t input_pos = 0;
  const uint64_t code_size = img.code.size();

  auto load = [&](uint64_t addr) -> int64_t {
    auto it = mem.find(addr);
    return it == mem.end() ? 0 : it->second;
  };
  auto finish = [&](TerminationKind k, FaultKind f = FaultKind::None) {
    res.termination = {k, f};
    return res;
  };

  for (;;) {
    if (res.steps >= step_limit) return finish(TerminationKind::StepLimit);
    if (pc >= code_size) return finish(TerminationKind::Fault, FaultKind::PcOutOfRange);
    const Instruction& in = img.code[pc];
    ++res.steps;
    uint64_t next_pc = pc + 1;
    auto ra = [&]() -> int64_t& { return regs[in.reg_a]; };
    auto rb = [&]() -> int64_t { return regs[in.reg_b]; };
    auto rc = [&]() -> int64_t { return regs[in.reg_c]; };
    auto u = [](int64_t v) { return static_cast<uint64_t>(v); };

    switch (in.opcode) {
      case Opcode::Movi: ra() = in.imm; break;
      case Opcode::Mov: ra() = rb(); break;
      case Opcode::Add: ra() = static_cast<int64_t>(u(rb()) + u(rc())); break;
      case Opcode::Sub: ra() = static_cast<int64_t>(u(rb()) - u(rc())); break;
      case Opcode::Mul: ra() = static_cast<int64_t>(u(rb()) * u(rc())); break;
      case Opcode::Load: ra() = load(u(rb()) + u(in.imm)); break;
      case Opcode::Store: mem[u(rb()) + u(in.imm)] = regs[in.reg_a]; break;
      case Opcode::Push:
        mem[u(regs[kSp]) - 1] = regs[in.reg_a];
        regs[kSp] -= 1;
        break;
      case Opcode::Pop:
        ra() = load(u(regs[kSp]));
        regs[kSp] += 1;
        break;
      case Opcode::Enter: {
        // saved caller sp sits at the new sp; locals at sp+1 .. sp+imm
        int64_t saved = regs[kSp];
        regs[kSp] = static_cast<int64_t>(u(saved) - 1 - u(in.imm));
        mem[u(regs[kSp])] = saved;
        break;
      }
      case Opcode::Leave: regs[kSp] = load(u(regs[kSp])); break;
      case Opcode::Alloc: {
        int64_t size = rb();
        if (size < 0) return finish(TerminationKind::Fault, FaultKind::BadAlloc);
        ra() = static_cast<int64_t>(heap_next);
        heap_next += static_cast<uint64_t>(size);
        break;
      }
      case Opcode::Jmp: next_pc = u(in.imm); break;
      case Opcode::Beq:
        if (regs[in.reg_a] == rb()) next_pc = u(in.imm);
        break;
      case Opcode::Blt:
        if (regs[in.reg_a] < rb()) next_pc = u(in.imm);
        break;
      case Opcode::Jmpi: {
        uint64_t target = u(regs[in.reg_a]);
        if (target >= code_size) return finish(TerminationKind::Fault, FaultKind::BadTarget);
        next_pc = target;
        break;
      }
      case Opcode::Call:
        mem[u(regs[kSp]) - 1] = static_cast<int64_t>(pc + 1);
        regs[kSp] -= 1;
        next_pc = u(in.imm);
        break;
      case Opcode::Calli: {
        uint64_t target = u(regs[in.reg_a]);
        if (target >= code_size) return finish(TerminationKind::Fault, FaultKind::BadTarget);
        mem[u(regs[kSp]) - 1] = static_cast<int64_t>(pc + 1);
        regs[kSp] -= 1;
        next_pc = target;
        break;
      }
      case Opcode::Ret: {
        uint64_t target = u(load(u(regs[kSp])));
        regs[kSp] += 1;
        if (target >= code_size) return finish(TerminationKind::Fault, FaultKind::BadTarget);
        next_pc = target;
        break;
      }
      case Opcode::In:
        if (input_pos >= input.size())
          return finish(TerminationKind::Fault, FaultKind::InputExhausted);
        ra() = input[input_pos++];
        break;
      case Opcode::Out: res.output.push_back(regs[in.reg_a]); break;
      case Opcode::Halt: return finish(TerminationKind::Halt);
      case Opcode::Trap: return finish(TerminationKind::Trap);
    }
    pc = next_pc;
  }
}

}  // namespace disa
