#pragma once

// Hand-rolled generators for property tests.

#include <random>
#include <string>
#include <vector>

#include "cipdev/cip.hpp"

namespace gen {

inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Appends one code point as UTF-8, mixing ASCII, 2-, 3- and 4-byte forms.
inline void append_code_point(std::mt19937_64& rng, std::string& out) {
  std::uint32_t cp;
  switch (uniform(rng, 0, 7)) {
    case 0: cp = static_cast<std::uint32_t>(uniform(rng, 0xA0, 0x7FF)); break;
    case 1: cp = static_cast<std::uint32_t>(uniform(rng, 0x800, 0xD7FF)); break;
    case 2: cp = static_cast<std::uint32_t>(uniform(rng, 0x10000, 0x10FFFF)); break;
    default: cp = static_cast<std::uint32_t>(uniform(rng, 0x20, 0x7E)); break;
  }
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Valid UTF-8 of between min_len and max_len bytes.
inline std::string utf8(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  const std::size_t target = uniform(rng, min_len, max_len);
  std::string s;
  while (s.size() < target) {
    std::string next = s;
    append_code_point(rng, next);
    if (next.size() > max_len) {
      s += 'x';  // pad with ASCII when a multibyte char won't fit
      continue;
    }
    s = std::move(next);
  }
  return s;
}

inline std::string ascii(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  std::string s(uniform(rng, min_len, max_len), ' ');
  for (auto& c : s) c = static_cast<char>(uniform(rng, 0x21, 0x7E));
  return s;
}

inline cipdev::BloodGroup blood_group(std::mt19937_64& rng) {
  static const cipdev::BloodGroup all[] = {cipdev::BloodGroup::O, cipdev::BloodGroup::A, cipdev::BloodGroup::B,
                                           cipdev::BloodGroup::AB, cipdev::BloodGroup::Unknown};
  return all[uniform(rng, 0, 4)];
}

inline cipdev::Rh rh(std::mt19937_64& rng) {
  static const cipdev::Rh all[] = {cipdev::Rh::Negative, cipdev::Rh::Positive, cipdev::Rh::Unknown};
  return all[uniform(rng, 0, 2)];
}

// A card satisfying every field bound and the 512-byte budget. Lists are
// trimmed from the back until the image fits.
inline cipdev::CipCard card(std::mt19937_64& rng) {
  cipdev::CipCard c;
  c.serial = 1 + rng() % 0xFFFFFFFFFFFFFFFEull;
  c.blood_group = blood_group(rng);
  c.rh = rh(rng);
  c.hiv_positive = rng() & 1;
  c.transmittable_disease = rng() & 1;
  c.chronic_disease = rng() & 1;
  c.language = {static_cast<char>('a' + uniform(rng, 0, 25)), static_cast<char>('a' + uniform(rng, 0, 25))};
  c.server_uri = "http://" + ascii(rng, 1, 40) + "/";
  if (uniform(rng, 0, 9) == 0) c.server_uri = utf8(rng, 1, 128);
  for (std::size_t i = uniform(rng, 0, 16); i > 0; --i) c.allergies.push_back(utf8(rng, 1, 32));
  for (std::size_t i = uniform(rng, 0, 16); i > 0; --i) c.conditions.push_back(utf8(rng, 1, 32));
  c.last_modified = rng();
  c.modifier_id = ascii(rng, 0, 32);
  auto size = [](const cipdev::CipCard& k) {
    std::size_t n = 28 + 1 + k.server_uri.size() + 1 + k.modifier_id.size();
    for (auto& a : k.allergies) n += 1 + a.size();
    for (auto& a : k.conditions) n += 1 + a.size();
    return n;
  };
  while (size(c) > cipdev::kCipMaxImage) {
    auto& longer = c.allergies.size() >= c.conditions.size() ? c.allergies : c.conditions;
    longer.pop_back();
  }
  return c;
}

}  // namespace gen
