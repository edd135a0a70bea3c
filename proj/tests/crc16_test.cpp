#include <gtest/gtest.h>

#include <random>

#include "cipdev/crc16.hpp"
#include "oracles.hpp"

using cipdev::compute_crc16;

TEST(Crc16, OracleAgreesOnCheckValue) {
  const std::string check = "123456789";
  EXPECT_EQ(oracle::crc16_bitwise(reinterpret_cast<const std::uint8_t*>(check.data()), check.size()), 0x29B1);
}

TEST(Crc16, KnownVectors) {
  EXPECT_EQ(compute_crc16(std::string_view("")), 0xFFFF);
  EXPECT_EQ(compute_crc16(std::string_view("123456789")), 0x29B1);
  const std::uint8_t zero = 0;
  EXPECT_EQ(compute_crc16(std::span<const std::uint8_t>(&zero, 1)), 0xE1F0);
}

TEST(Crc16, MatchesBitwiseOracleOnRandomInputs) {
  std::mt19937_64 rng(0xC1D);
  for (int i = 0; i < 10000; ++i) {
    auto data = oracle::random_bytes(rng, rng() % 600);
    ASSERT_EQ(compute_crc16(std::span<const std::uint8_t>(data)), oracle::crc16_bitwise(data)) << "len " << data.size();
  }
}

TEST(Crc16, AppendingCrcBigEndianYieldsZeroResidue) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto data = oracle::random_bytes(rng, 1 + rng() % 100);
    auto crc = compute_crc16(std::span<const std::uint8_t>(data));
    data.push_back(static_cast<std::uint8_t>(crc >> 8));
    data.push_back(static_cast<std::uint8_t>(crc));
    EXPECT_EQ(compute_crc16(std::span<const std::uint8_t>(data)), 0);
  }
}
