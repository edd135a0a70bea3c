#pragma once

// CIP (personal health information card) record and its version-1 binary image.
//
// Image layout, all integers big-endian, strings prefixed by one length byte:
//   magic "CI" | version | serial u64 | flags | blood_group | rh | language[2]
//   | uri | allergy count + entries | condition count + entries
//   | last_modified u64 | modifier | CRC-16 over everything before it

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cipdev/bytes.hpp"

namespace cipdev {

enum class BloodGroup : std::uint8_t { O = 0, A = 1, B = 2, AB = 3, Unknown = 0xFF };
enum class Rh : std::uint8_t { Negative = 0, Positive = 1, Unknown = 0xFF };

inline constexpr std::uint8_t kCipVersion = 1;
inline constexpr std::size_t kCipMaxImage = 512;
inline constexpr std::size_t kCipMaxUri = 128;
inline constexpr std::size_t kCipMaxListEntries = 16;
inline constexpr std::size_t kCipMaxEntryLen = 32;
inline constexpr std::size_t kCipMaxModifier = 32;

struct CipCard {
  std::uint64_t serial = 0;
  std::uint8_t version = kCipVersion;
  BloodGroup blood_group = BloodGroup::Unknown;
  Rh rh = Rh::Unknown;
  bool hiv_positive = false;
  bool transmittable_disease = false;
  bool chronic_disease = false;
  std::string language = "en";
  std::string server_uri;
  std::vector<std::string> allergies;
  std::vector<std::string> conditions;
  std::uint64_t last_modified = 0;
  std::string modifier_id;

  bool operator==(const CipCard&) const = default;
};

// Every field optional. serial/version exist only so a patch that names them
// can be rejected with ImmutableField.
struct CipPatch {
  std::optional<std::uint64_t> serial;
  std::optional<std::uint8_t> version;
  std::optional<BloodGroup> blood_group;
  std::optional<Rh> rh;
  std::optional<bool> hiv_positive;
  std::optional<bool> transmittable_disease;
  std::optional<bool> chronic_disease;
  std::optional<std::string> language;
  std::optional<std::string> server_uri;
  std::optional<std::vector<std::string>> allergies;
  std::optional<std::vector<std::string>> conditions;
};

enum class CipErrorCode {
  BadMagic,
  UnsupportedVersion,
  CrcMismatch,
  Truncated,
  InvariantViolation,
  ImmutableField,
};

const char* to_string(CipErrorCode code);

class CipError : public std::runtime_error {
 public:
  CipError(CipErrorCode code, std::string field = {});

  CipErrorCode code() const { return code_; }
  // Offending field for InvariantViolation / ImmutableField, empty otherwise.
  const std::string& field() const { return field_; }

 private:
  CipErrorCode code_;
  std::string field_;
};

// Throws CipError(InvariantViolation, field) naming the first violated bound.
void validate_cip(const CipCard& card);

Bytes encode_cip(const CipCard& card);
CipCard decode_cip(ByteView image);

CipCard apply_update(const CipCard& card, const CipPatch& patch, const std::string& modifier,
                     std::uint64_t now);

// Total image length implied by a (possibly partial) image prefix.
struct CipImageLength {
  enum class State { Known, NeedMore, Invalid } state;
  std::size_t bytes = 0;  // total length when Known, minimum prefix wanted when NeedMore
};
CipImageLength cip_image_length(ByteView prefix);

const char* to_string(BloodGroup g);
const char* to_string(Rh rh);
BloodGroup blood_group_from_string(const std::string& s);
Rh rh_from_string(const std::string& s);

void to_json(nlohmann::json& j, const CipCard& card);
void from_json(const nlohmann::json& j, CipCard& card);
void from_json(const nlohmann::json& j, CipPatch& patch);

}  // namespace cipdev
