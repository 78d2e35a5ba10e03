#pragma once

// The miniature deterministic ISA: 23 opcodes, nine registers (r0..r7 plus
// sp), fixed 16-byte instruction records, and a self-describing binary image
// format ("DISA"). Code offsets are counted in instruction units everywhere:
// branch immediates, jump table entries, the image entry point, pins.
//
// Memory is word addressed (one signed 64-bit word per address) and split
// into three disjoint regions:
//   globals  at GLOBAL_BASE, one slab per data object in table order
//   stack    descending from STACK_TOP (sp starts at STACK_TOP)
//   heap     ascending from HEAP_BASE, grown by ALLOC

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace disa {

constexpr uint64_t kGlobalBase = 0x1000'0000;
constexpr uint64_t kStackTop = 0x2000'0000;
constexpr uint64_t kHeapBase = 0x3000'0000;

constexpr uint8_t kSp = 8;  // register index of the stack pointer
constexpr uint8_t kNumGprs = 8;

enum class Opcode : uint8_t {
  Movi = 0,
  Mov = 1,
  Add = 2,
  Sub = 3,
  Mul = 4,
  Load = 5,
  Store = 6,
  Push = 7,
  Pop = 8,
  Enter = 9,
  Leave = 10,
  Alloc = 11,
  Jmp = 12,
  Beq = 13,
  Blt = 14,
  Jmpi = 15,
  Call = 16,
  Calli = 17,
  Ret = 18,
  In = 19,
  Out = 20,
  Halt = 21,
  Trap = 22,
};
constexpr uint8_t kOpcodeCount = 23;

// Which fields an opcode uses; unused fields must be zero (canonical form).
enum class OperandForm {
  None,        // LEAVE RET HALT TRAP
  Ra,          // PUSH POP JMPI CALLI IN OUT
  RaRb,        // MOV ALLOC
  RaRbRc,      // ADD SUB MUL
  RaImm,       // MOVI
  RaRbImm,     // LOAD STORE
  Imm,         // ENTER
  Target,      // JMP CALL       (imm = code offset)
  RaRbTarget,  // BEQ BLT        (imm = code offset)
};

struct OpcodeInfo {
  const char* mnemonic;
  OperandForm form;
};

inline const OpcodeInfo& opcode_info(Opcode op) {
  static const OpcodeInfo table[kOpcodeCount] = {
      {"movi", OperandForm::RaImm},    {"mov", OperandForm::RaRb},
      {"add", OperandForm::RaRbRc},    {"sub", OperandForm::RaRbRc},
      {"mul", OperandForm::RaRbRc},    {"load", OperandForm::RaRbImm},
      {"store", OperandForm::RaRbImm}, {"push", OperandForm::Ra},
      {"pop", OperandForm::Ra},        {"enter", OperandForm::Imm},
      {"leave", OperandForm::None},    {"alloc", OperandForm::RaRb},
      {"jmp", OperandForm::Target},    {"beq", OperandForm::RaRbTarget},
      {"blt", OperandForm::RaRbTarget},{"jmpi", OperandForm::Ra},
      {"call", OperandForm::Target},   {"calli", OperandForm::Ra},
      {"ret", OperandForm::None},      {"in", OperandForm::Ra},
      {"out", OperandForm::Ra},        {"halt", OperandForm::None},
      {"trap", OperandForm::None},
  };
  return table[static_cast<uint8_t>(op)];
}

inline std::optional<Opcode> opcode_from_mnemonic(std::string_view m) {
  for (uint8_t i = 0; i < kOpcodeCount; ++i) {
    auto op = static_cast<Opcode>(i);
    if (opcode_info(op).mnemonic == m) return op;
  }
  return std::nullopt;
}

struct Instruction {
  Opcode opcode = Opcode::Halt;
  uint8_t reg_a = 0;
  uint8_t reg_b = 0;
  uint8_t reg_c = 0;
  int64_t imm = 0;

  bool operator==(const Instruction&) const = default;
};

inline Instruction make_instr(Opcode op, uint8_t a = 0, uint8_t b = 0,
                              uint8_t c = 0, int64_t imm = 0) {
  return Instruction{op, a, b, c, imm};
}

// true for opcodes whose imm is a code offset patched by the emitter
inline bool is_direct_branch(Opcode op) {
  return op == Opcode::Jmp || op == Opcode::Beq || op == Opcode::Blt ||
         op == Opcode::Call;
}

// instructions after which control cannot simply continue to the next record
// without the CFG knowing about it; these end basic blocks
inline bool ends_block(Opcode op) {
  switch (op) {
    case Opcode::Jmp:
    case Opcode::Beq:
    case Opcode::Blt:
    case Opcode::Jmpi:
    case Opcode::Call:
    case Opcode::Calli:
    case Opcode::Ret:
    case Opcode::Halt:
    case Opcode::Trap:
      return true;
    default:
      return false;
  }
}

// whether execution can continue at the physically next record
inline bool has_fallthrough(Opcode op) {
  switch (op) {
    case Opcode::Jmp:
    case Opcode::Jmpi:
    case Opcode::Ret:
    case Opcode::Halt:
    case Opcode::Trap:
      return false;
    default:
      return true;
  }
}

inline bool is_indirect(Opcode op) {
  return op == Opcode::Jmpi || op == Opcode::Calli;
}

// Register read/write sets as bitmasks over r0..r7 (sp excluded; it is
// implicit in the stack ops and never participates in liveness).
inline uint8_t regs_read(const Instruction& in) {
  auto bit = [](uint8_t r) -> uint8_t { return r < kNumGprs ? uint8_t(1u << r) : 0; };
  switch (in.opcode) {
    case Opcode::Mov:
    case Opcode::Load:
    case Opcode::Alloc:
      return bit(in.reg_b);
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
      return bit(in.reg_b) | bit(in.reg_c);
    case Opcode::Store:
      return bit(in.reg_a) | bit(in.reg_b);
    case Opcode::Push:
    case Opcode::Out:
    case Opcode::Jmpi:
    case Opcode::Calli:
      return bit(in.reg_a);
    case Opcode::Beq:
    case Opcode::Blt:
      return bit(in.reg_a) | bit(in.reg_b);
    default:
      return 0;
  }
}

inline uint8_t regs_written(const Instruction& in) {
  auto bit = [](uint8_t r) -> uint8_t { return r < kNumGprs ? uint8_t(1u << r) : 0; };
  switch (in.opcode) {
    case Opcode::Movi:
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::Load:
    case Opcode::Pop:
    case Opcode::Alloc:
    case Opcode::In:
      return bit(in.reg_a);
    default:
      return 0;
  }
}

enum class DataKind : uint8_t { Raw = 0, JumpTable = 1 };

struct DataObject {
  uint64_t name_hash = 0;
  DataKind kind = DataKind::Raw;
  std::vector<int64_t> words;

  bool operator==(const DataObject&) const = default;
};

struct PinEntry {
  uint32_t offset = 0;     // where the pinned instruction sits in this image
  uint32_t placement = 0;  // offset any re-emission must honor

  bool operator==(const PinEntry&) const = default;
};

struct ProgramImage {
  uint32_t entry = 0;
  std::vector<Instruction> code;
  std::vector<DataObject> data_objects;
  std::vector<PinEntry> pin_table;

  bool operator==(const ProgramImage&) const = default;
};

// FNV-1a 64, used for data object name hashes
inline uint64_t name_hash(std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}
inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}
inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t len) : data_(data), len_(len) {}

  uint8_t u8(const char* what) {
    need(1, what);
    return data_[pos_++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  bool done() const { return pos_ == len_; }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n, const char* what) {
    if (pos_ + n > len_) throw DecodeError(std::string("truncated ") + what);
  }
  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

}  // namespace detail

inline void encode_instruction(std::vector<uint8_t>& out, const Instruction& in) {
  out.push_back(static_cast<uint8_t>(in.opcode));
  out.push_back(in.reg_a);
  out.push_back(in.reg_b);
  out.push_back(in.reg_c);
  detail::put_u32(out, 0);  // pad
  detail::put_u64(out, static_cast<uint64_t>(in.imm));
}

// Strict decode: enforces canonical form so decode(encode(x)) == x at the
// byte level and every instruction has exactly one encoding.
inline Instruction decode_instruction(detail::ByteReader& r) {
  Instruction in;
  uint8_t op = r.u8("record");
  if (op >= kOpcodeCount) throw DecodeError("unknown opcode byte " + std::to_string(op));
  in.opcode = static_cast<Opcode>(op);
  in.reg_a = r.u8("record");
  in.reg_b = r.u8("record");
  in.reg_c = r.u8("record");
  uint32_t pad = r.u32("record");
  in.imm = static_cast<int64_t>(r.u64("record"));
  if (pad != 0) throw DecodeError("nonzero pad in instruction record");

  auto form = opcode_info(in.opcode).form;
  auto check_reg = [&](uint8_t reg) {
    if (reg > kSp) throw DecodeError("register index out of range");
  };
  bool use_a = false, use_b = false, use_c = false, use_imm = false;
  switch (form) {
    case OperandForm::None: break;
    case OperandForm::Ra: use_a = true; break;
    case OperandForm::RaRb: use_a = use_b = true; break;
    case OperandForm::RaRbRc: use_a = use_b = use_c = true; break;
    case OperandForm::RaImm: use_a = use_imm = true; break;
    case OperandForm::RaRbImm: use_a = use_b = use_imm = true; break;
    case OperandForm::Imm: use_imm = true; break;
    case OperandForm::Target: use_imm = true; break;
    case OperandForm::RaRbTarget: use_a = use_b = use_imm = true; break;
  }
  if (use_a) check_reg(in.reg_a); else if (in.reg_a != 0) throw DecodeError("noncanonical reg_a");
  if (use_b) check_reg(in.reg_b); else if (in.reg_b != 0) throw DecodeError("noncanonical reg_b");
  if (use_c) check_reg(in.reg_c); else if (in.reg_c != 0) throw DecodeError("noncanonical reg_c");
  if (!use_imm && in.imm != 0) throw DecodeError("noncanonical imm");
  return in;
}

inline std::vector<uint8_t> encode_image(const ProgramImage& img) {
  std::vector<uint8_t> out;
  out.push_back('D');
  out.push_back('I');
  out.push_back('S');
  out.push_back('A');
  detail::put_u16(out, 1);
  detail::put_u32(out, img.entry);
  detail::put_u32(out, static_cast<uint32_t>(img.code.size()));
  detail::put_u32(out, static_cast<uint32_t>(img.data_objects.size()));
  detail::put_u32(out, static_cast<uint32_t>(img.pin_table.size()));
  for (const auto& in : img.code) encode_instruction(out, in);
  for (const auto& obj : img.data_objects) {
    detail::put_u64(out, obj.name_hash);
    out.push_back(static_cast<uint8_t>(obj.kind));
    detail::put_u32(out, static_cast<uint32_t>(obj.words.size()));
    for (int64_t w : obj.words) detail::put_u64(out, static_cast<uint64_t>(w));
  }
  for (const auto& pin : img.pin_table) {
    detail::put_u32(out, pin.offset);
    detail::put_u32(out, pin.placement);
  }
  return out;
}

inline ProgramImage decode_image(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8("header"));
  if (std::string_view(magic, 4) != "DISA") throw DecodeError("bad magic");
  uint16_t version = r.u16("header");
  if (version != 1) throw DecodeError("unsupported version " + std::to_string(version));
  ProgramImage img;
  img.entry = r.u32("header");
  uint32_t code_count = r.u32("header");
  uint32_t data_count = r.u32("header");
  uint32_t pin_count = r.u32("header");
  img.code.reserve(code_count);
  for (uint32_t i = 0; i < code_count; ++i) img.code.push_back(decode_instruction(r));
  for (uint32_t i = 0; i < data_count; ++i) {
    DataObject obj;
    obj.name_hash = r.u64("data object");
    uint8_t kind = r.u8("data object");
    if (kind > 1) throw DecodeError("unknown data object kind");
    obj.kind = static_cast<DataKind>(kind);
    uint32_t len = r.u32("data object");
    obj.words.reserve(len);
    for (uint32_t w = 0; w < len; ++w)
      obj.words.push_back(static_cast<int64_t>(r.u64("data payload")));
    img.data_objects.push_back(std::move(obj));
  }
  for (uint32_t i = 0; i < pin_count; ++i) {
    PinEntry pin;
    pin.offset = r.u32("pin table");
    pin.placement = r.u32("pin table");
    img.pin_table.push_back(pin);
  }
  if (!r.done()) throw DecodeError("trailing bytes after image");
  if (img.entry >= img.code.size()) throw DecodeError("entry out of range");
  uint32_t prev_pin = 0;
  bool first = true;
  for (const auto& pin : img.pin_table) {
    if (!first && pin.offset <= prev_pin) throw DecodeError("pin table offsets not increasing");
    prev_pin = pin.offset;
    first = false;
    if (pin.offset >= img.code.size()) throw DecodeError("pin offset out of range");
  }
  return img;
}

// Base address of each data object, in table order.
inline std::vector<uint64_t> object_bases(const ProgramImage& img) {
  std::vector<uint64_t> bases;
  bases.reserve(img.data_objects.size());
  uint64_t at = kGlobalBase;
  for (const auto& obj : img.data_objects) {
    bases.push_back(at);
    at += obj.words.size();
  }
  return bases;
}

// Attribution of an immediate to a data object. Values outside the global
// region are plain constants; values inside it must land within exactly one
// object or the immediate cannot be relocated.
struct GlobalRef {
  uint32_t object_index = 0;
  uint64_t offset = 0;  // word offset inside the object

  bool operator==(const GlobalRef&) const = default;
};

enum class AttributionResult { NotGlobal, Attributed, Unattributable };

inline AttributionResult attribute_global(const ProgramImage& img,
                                          const std::vector<uint64_t>& bases,
                                          int64_t imm, GlobalRef* out) {
  uint64_t v = static_cast<uint64_t>(imm);
  if (v < kGlobalBase || v >= kStackTop) return AttributionResult::NotGlobal;
  for (size_t i = 0; i < img.data_objects.size(); ++i) {
    uint64_t len = img.data_objects[i].words.size();
    if (v >= bases[i] && v < bases[i] + len) {
      if (out) *out = GlobalRef{static_cast<uint32_t>(i), v - bases[i]};
      return AttributionResult::Attributed;
    }
  }
  return AttributionResult::Unattributable;
}

}  // namespace disa
