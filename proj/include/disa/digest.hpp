#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace disa {

using Sha256Digest = std::array<uint8_t, 32>;

inline Sha256Digest sha256(const uint8_t* data, size_t len) {
  Sha256Digest out{};
  unsigned int out_len = 0;
  if (!EVP_Digest(data, len, out.data(), &out_len, EVP_sha256(), nullptr) ||
      out_len != out.size()) {
    throw std::runtime_error("sha256 failed");
  }
  return out;
}

inline Sha256Digest sha256(const std::vector<uint8_t>& data) {
  return sha256(data.data(), data.size());
}

inline std::string to_hex(const uint8_t* data, size_t len) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(len * 2);
  for (size_t i = 0; i < len; ++i) {
    s.push_back(digits[data[i] >> 4]);
    s.push_back(digits[data[i] & 0xf]);
  }
  return s;
}

inline std::string to_hex(const Sha256Digest& d) { return to_hex(d.data(), d.size()); }

}  // namespace disa
