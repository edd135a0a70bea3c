#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace cipdev {

// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
// Used for both CIP card images and reader link frames.
std::uint16_t compute_crc16(std::span<const std::uint8_t> data);
std::uint16_t compute_crc16(std::string_view data);

}  // namespace cipdev
