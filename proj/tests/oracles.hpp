#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

// Bit-at-a-time CRC-16, poly 0x1021, init 0xFFFF, no reflection, no xorout.
inline std::uint16_t crc16_bitwise(const std::uint8_t* data, std::size_t n) {
  std::uint16_t crc = 0xFFFF;
  for (std::size_t i = 0; i < n; ++i) {
    for (int b = 7; b >= 0; --b) {
      bool in = (data[i] >> b) & 1;
      bool top = crc & 0x8000;
      crc = static_cast<std::uint16_t>(crc << 1);
      if (in != top) crc ^= 0x1021;
    }
  }
  return crc;
}

inline std::uint16_t crc16_bitwise(const std::vector<std::uint8_t>& v) {
  return crc16_bitwise(v.data(), v.size());
}

inline std::vector<std::uint8_t> random_bytes(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

}  // namespace oracle
