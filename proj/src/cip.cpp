#include "cipdev/cip.hpp"

#include "cipdev/crc16.hpp"

namespace cipdev {
namespace {

constexpr std::uint8_t kMagic0 = 0x43;
constexpr std::uint8_t kMagic1 = 0x49;
constexpr std::uint8_t kFlagHiv = 0x01;
constexpr std::uint8_t kFlagTransmittable = 0x02;
constexpr std::uint8_t kFlagChronic = 0x04;
constexpr std::size_t kHeaderLen = 16;  // magic..language

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates, out of range.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

void check_text(const std::string& value, std::size_t min_len, std::size_t max_len,
                const char* field) {
  if (value.size() < min_len || value.size() > max_len || !valid_utf8(value)) {
    throw CipError(CipErrorCode::InvariantViolation, field);
  }
}

void check_list(const std::vector<std::string>& list, const char* field) {
  if (list.size() > kCipMaxListEntries) throw CipError(CipErrorCode::InvariantViolation, field);
  for (const auto& entry : list) check_text(entry, 1, kCipMaxEntryLen, field);
}

bool valid_blood_group(std::uint8_t v) { return v <= 3 || v == 0xFF; }
bool valid_rh(std::uint8_t v) { return v <= 1 || v == 0xFF; }

void put_string(Bytes& out, const std::string& s) {
  out.push_back(static_cast<std::uint8_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(ByteView data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint64_t u64() {
    need(8);
    auto v = get_u64_be(data_.subspan(pos_, 8));
    pos_ += 8;
    return v;
  }
  std::string str() {
    auto len = u8();
    need(len);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CipError(CipErrorCode::Truncated);
  }

  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* to_string(CipErrorCode code) {
  switch (code) {
    case CipErrorCode::BadMagic: return "BadMagic";
    case CipErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case CipErrorCode::CrcMismatch: return "CrcMismatch";
    case CipErrorCode::Truncated: return "Truncated";
    case CipErrorCode::InvariantViolation: return "InvariantViolation";
    case CipErrorCode::ImmutableField: return "ImmutableField";
  }
  return "Unknown";
}

CipError::CipError(CipErrorCode code, std::string field)
    : std::runtime_error(field.empty() ? std::string(to_string(code))
                                       : std::string(to_string(code)) + "(" + field + ")"),
      code_(code),
      field_(std::move(field)) {}

void validate_cip(const CipCard& card) {
  if (card.serial == 0) throw CipError(CipErrorCode::InvariantViolation, "serial");
  if (card.version != kCipVersion) throw CipError(CipErrorCode::InvariantViolation, "version");
  if (!valid_blood_group(static_cast<std::uint8_t>(card.blood_group))) {
    throw CipError(CipErrorCode::InvariantViolation, "blood_group");
  }
  if (!valid_rh(static_cast<std::uint8_t>(card.rh))) {
    throw CipError(CipErrorCode::InvariantViolation, "rh");
  }
  if (card.language.size() != 2 || card.language[0] < 'a' || card.language[0] > 'z' ||
      card.language[1] < 'a' || card.language[1] > 'z') {
    throw CipError(CipErrorCode::InvariantViolation, "language");
  }
  check_text(card.server_uri, 1, kCipMaxUri, "server_uri");
  check_list(card.allergies, "allergies");
  check_list(card.conditions, "conditions");
  if (card.modifier_id.size() > kCipMaxModifier) {
    throw CipError(CipErrorCode::InvariantViolation, "modifier_id");
  }
  for (char c : card.modifier_id) {
    if (static_cast<unsigned char>(c) >= 0x80) {
      throw CipError(CipErrorCode::InvariantViolation, "modifier_id");
    }
  }
}

Bytes encode_cip(const CipCard& card) {
  validate_cip(card);

  Bytes out;
  out.reserve(kCipMaxImage);
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(card.version);
  put_u64_be(out, card.serial);
  std::uint8_t flags = 0;
  if (card.hiv_positive) flags |= kFlagHiv;
  if (card.transmittable_disease) flags |= kFlagTransmittable;
  if (card.chronic_disease) flags |= kFlagChronic;
  out.push_back(flags);
  out.push_back(static_cast<std::uint8_t>(card.blood_group));
  out.push_back(static_cast<std::uint8_t>(card.rh));
  out.push_back(static_cast<std::uint8_t>(card.language[0]));
  out.push_back(static_cast<std::uint8_t>(card.language[1]));
  put_string(out, card.server_uri);
  out.push_back(static_cast<std::uint8_t>(card.allergies.size()));
  for (const auto& a : card.allergies) put_string(out, a);
  out.push_back(static_cast<std::uint8_t>(card.conditions.size()));
  for (const auto& c : card.conditions) put_string(out, c);
  put_u64_be(out, card.last_modified);
  put_string(out, card.modifier_id);

  // Field bounds alone allow 1246 bytes; tag memory is the binding limit.
  if (out.size() + 2 > kCipMaxImage) {
    throw CipError(CipErrorCode::InvariantViolation, "encoded_size");
  }
  put_u16_be(out, compute_crc16(out));
  return out;
}

CipCard decode_cip(ByteView image) {
  if (image.size() < 2) throw CipError(CipErrorCode::Truncated);
  if (image[0] != kMagic0 || image[1] != kMagic1) throw CipError(CipErrorCode::BadMagic);
  if (image.size() < 3) throw CipError(CipErrorCode::Truncated);
  if (image[2] != kCipVersion) throw CipError(CipErrorCode::UnsupportedVersion);

  Reader r(image);
  CipCard card;
  r.u8();
  r.u8();
  card.version = r.u8();
  card.serial = r.u64();
  const std::uint8_t flags = r.u8();
  const std::uint8_t blood = r.u8();
  const std::uint8_t rh = r.u8();
  card.language.assign(1, static_cast<char>(r.u8()));
  card.language.push_back(static_cast<char>(r.u8()));
  card.server_uri = r.str();
  for (auto* list : {&card.allergies, &card.conditions}) {
    const std::uint8_t count = r.u8();
    for (std::uint8_t i = 0; i < count; ++i) list->push_back(r.str());
  }
  card.last_modified = r.u64();
  card.modifier_id = r.str();

  const std::size_t body = r.pos();
  if (image.size() < body + 2) throw CipError(CipErrorCode::Truncated);
  if (image.size() > body + 2) throw CipError(CipErrorCode::InvariantViolation, "image_length");
  if (get_u16_be(image.subspan(body, 2)) != compute_crc16(image.first(body))) {
    throw CipError(CipErrorCode::CrcMismatch);
  }

  if (flags & ~(kFlagHiv | kFlagTransmittable | kFlagChronic)) {
    throw CipError(CipErrorCode::InvariantViolation, "flags");
  }
  card.hiv_positive = flags & kFlagHiv;
  card.transmittable_disease = flags & kFlagTransmittable;
  card.chronic_disease = flags & kFlagChronic;
  if (!valid_blood_group(blood)) throw CipError(CipErrorCode::InvariantViolation, "blood_group");
  if (!valid_rh(rh)) throw CipError(CipErrorCode::InvariantViolation, "rh");
  card.blood_group = static_cast<BloodGroup>(blood);
  card.rh = static_cast<Rh>(rh);
  validate_cip(card);
  if (body + 2 > kCipMaxImage) throw CipError(CipErrorCode::InvariantViolation, "encoded_size");
  return card;
}

CipCard apply_update(const CipCard& card, const CipPatch& patch, const std::string& modifier,
                     std::uint64_t now) {
  if (patch.serial) throw CipError(CipErrorCode::ImmutableField, "serial");
  if (patch.version) throw CipError(CipErrorCode::ImmutableField, "version");

  CipCard out = card;
  if (patch.blood_group) out.blood_group = *patch.blood_group;
  if (patch.rh) out.rh = *patch.rh;
  if (patch.hiv_positive) out.hiv_positive = *patch.hiv_positive;
  if (patch.transmittable_disease) out.transmittable_disease = *patch.transmittable_disease;
  if (patch.chronic_disease) out.chronic_disease = *patch.chronic_disease;
  if (patch.language) out.language = *patch.language;
  if (patch.server_uri) out.server_uri = *patch.server_uri;
  if (patch.allergies) out.allergies = *patch.allergies;
  if (patch.conditions) out.conditions = *patch.conditions;
  out.last_modified = now;
  out.modifier_id = modifier;

  // Run the encoder so the size budget is checked too.
  encode_cip(out);
  return out;
}

CipImageLength cip_image_length(ByteView prefix) {
  using State = CipImageLength::State;
  if (prefix.size() < 3) return {State::NeedMore, 3};
  if (prefix[0] != kMagic0 || prefix[1] != kMagic1 || prefix[2] != kCipVersion) {
    return {State::Invalid, 0};
  }
  std::size_t pos = kHeaderLen;
  auto skip_string = [&](std::size_t& p) -> bool {
    if (p >= prefix.size()) return false;
    p += 1 + prefix[p];
    return true;
  };
  // uri
  if (!skip_string(pos)) return {State::NeedMore, pos + 1};
  for (int list = 0; list < 2; ++list) {
    if (pos >= prefix.size()) return {State::NeedMore, pos + 1};
    const std::uint8_t count = prefix[pos++];
    for (std::uint8_t i = 0; i < count; ++i) {
      if (!skip_string(pos)) return {State::NeedMore, pos + 1};
    }
  }
  pos += 8;  // last_modified
  if (!skip_string(pos)) return {State::NeedMore, pos + 1};
  pos += 2;
  if (pos > kCipMaxImage) return {State::Invalid, 0};
  return {State::Known, pos};
}

const char* to_string(BloodGroup g) {
  switch (g) {
    case BloodGroup::O: return "O";
    case BloodGroup::A: return "A";
    case BloodGroup::B: return "B";
    case BloodGroup::AB: return "AB";
    case BloodGroup::Unknown: return "Unknown";
  }
  return "Unknown";
}

const char* to_string(Rh rh) {
  switch (rh) {
    case Rh::Negative: return "Negative";
    case Rh::Positive: return "Positive";
    case Rh::Unknown: return "Unknown";
  }
  return "Unknown";
}

BloodGroup blood_group_from_string(const std::string& s) {
  if (s == "O") return BloodGroup::O;
  if (s == "A") return BloodGroup::A;
  if (s == "B") return BloodGroup::B;
  if (s == "AB") return BloodGroup::AB;
  if (s == "Unknown") return BloodGroup::Unknown;
  throw CipError(CipErrorCode::InvariantViolation, "blood_group");
}

Rh rh_from_string(const std::string& s) {
  if (s == "Negative") return Rh::Negative;
  if (s == "Positive") return Rh::Positive;
  if (s == "Unknown") return Rh::Unknown;
  throw CipError(CipErrorCode::InvariantViolation, "rh");
}

void to_json(nlohmann::json& j, const CipCard& card) {
  j = nlohmann::json{
      {"serial", card.serial},
      {"version", card.version},
      {"blood_group", to_string(card.blood_group)},
      {"rh", to_string(card.rh)},
      {"hiv_positive", card.hiv_positive},
      {"transmittable_disease", card.transmittable_disease},
      {"chronic_disease", card.chronic_disease},
      {"language", card.language},
      {"server_uri", card.server_uri},
      {"allergies", card.allergies},
      {"conditions", card.conditions},
      {"last_modified", card.last_modified},
      {"modifier_id", card.modifier_id},
  };
}

void from_json(const nlohmann::json& j, CipCard& card) {
  card = CipCard{};
  card.serial = j.at("serial").get<std::uint64_t>();
  card.version = j.value("version", kCipVersion);
  card.blood_group = blood_group_from_string(j.value("blood_group", std::string("Unknown")));
  card.rh = rh_from_string(j.value("rh", std::string("Unknown")));
  card.hiv_positive = j.value("hiv_positive", false);
  card.transmittable_disease = j.value("transmittable_disease", false);
  card.chronic_disease = j.value("chronic_disease", false);
  card.language = j.value("language", std::string("en"));
  card.server_uri = j.at("server_uri").get<std::string>();
  card.allergies = j.value("allergies", std::vector<std::string>{});
  card.conditions = j.value("conditions", std::vector<std::string>{});
  card.last_modified = j.value("last_modified", std::uint64_t{0});
  card.modifier_id = j.value("modifier_id", std::string());
}

void from_json(const nlohmann::json& j, CipPatch& patch) {
  patch = CipPatch{};
  if (j.contains("serial")) patch.serial = j["serial"].get<std::uint64_t>();
  if (j.contains("version")) patch.version = j["version"].get<std::uint8_t>();
  if (j.contains("blood_group")) patch.blood_group = blood_group_from_string(j["blood_group"]);
  if (j.contains("rh")) patch.rh = rh_from_string(j["rh"]);
  if (j.contains("hiv_positive")) patch.hiv_positive = j["hiv_positive"].get<bool>();
  if (j.contains("transmittable_disease")) {
    patch.transmittable_disease = j["transmittable_disease"].get<bool>();
  }
  if (j.contains("chronic_disease")) patch.chronic_disease = j["chronic_disease"].get<bool>();
  if (j.contains("language")) patch.language = j["language"].get<std::string>();
  if (j.contains("server_uri")) patch.server_uri = j["server_uri"].get<std::string>();
  if (j.contains("allergies")) patch.allergies = j["allergies"].get<std::vector<std::string>>();
  if (j.contains("conditions")) patch.conditions = j["conditions"].get<std::vector<std::string>>();
}

}  // namespace cipdev
