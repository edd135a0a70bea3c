#include "cipdev/auth.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <stdexcept>

#include "cipdev/bytes.hpp"

namespace cipdev::auth {
namespace {

Bytes from_hex(const std::string& hex) {
  if (hex.size() % 2) throw std::invalid_argument("odd-length hex");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument("bad hex digit");
  };
  Bytes out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(nibble(hex[i]) << 4 | nibble(hex[i + 1])));
  }
  return out;
}

Bytes random_bytes(std::size_t n) {
  Bytes out(n);
  if (RAND_bytes(out.data(), static_cast<int>(n)) != 1) throw std::runtime_error("RAND_bytes failed");
  return out;
}

Bytes sha256(const Bytes& data) {
  Bytes digest(EVP_MAX_MD_SIZE);
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("EVP_Digest failed");
  }
  digest.resize(len);
  return digest;
}

// Sessions are keyed by this so map lookups don't compare secrets directly.
std::string token_key(const std::string& token) { return to_hex(sha256(Bytes(token.begin(), token.end()))); }

// Used for unknown users so login timing doesn't reveal membership.
const User& dummy_user() {
  static const User user = make_user("", random_token(), Role::Viewer);
  return user;
}

}  // namespace

const char* to_string(Role role) {
  switch (role) {
    case Role::Physician: return "physician";
    case Role::Viewer: return "viewer";
    case Role::Admin: return "admin";
  }
  return "viewer";
}

std::optional<Role> role_from_string(const std::string& s) {
  if (s == "physician") return Role::Physician;
  if (s == "viewer") return Role::Viewer;
  if (s == "admin") return Role::Admin;
  return std::nullopt;
}

std::string hash_password(const std::string& salt_hex, const std::string& password) {
  Bytes data = from_hex(salt_hex);
  data.insert(data.end(), password.begin(), password.end());
  return to_hex(sha256(data));
}

std::string random_token() { return to_hex(random_bytes(16)); }

User make_user(const std::string& name, const std::string& password, Role role) {
  User u;
  u.name = name;
  u.role = role;
  u.salt = to_hex(random_bytes(16));
  u.password_sha256 = hash_password(u.salt, password);
  return u;
}

nlohmann::json user_to_json(const User& user) {
  return {{"user", user.name},
          {"role", to_string(user.role)},
          {"salt", user.salt},
          {"password_sha256", user.password_sha256}};
}

UserTable::UserTable(std::vector<User> users) {
  for (auto& u : users) users_[u.name] = std::move(u);
}

UserTable UserTable::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("users: expected an array");
  std::vector<User> users;
  for (const auto& entry : j) {
    User u;
    u.name = entry.at("user").get<std::string>();
    auto role = role_from_string(entry.value("role", std::string("physician")));
    if (!role) throw std::invalid_argument("users: unknown role for " + u.name);
    u.role = *role;
    u.salt = entry.at("salt").get<std::string>();
    u.password_sha256 = entry.at("password_sha256").get<std::string>();
    from_hex(u.salt);
    if (from_hex(u.password_sha256).size() != 32) {
      throw std::invalid_argument("users: password_sha256 must be 32 bytes for " + u.name);
    }
    users.push_back(std::move(u));
  }
  return UserTable(std::move(users));
}

std::optional<User> UserTable::verify(const std::string& name, const std::string& password) const {
  auto it = users_.find(name);
  const User& candidate = it == users_.end() ? dummy_user() : it->second;
  const Bytes expected = from_hex(candidate.password_sha256);
  const Bytes actual = from_hex(hash_password(candidate.salt, password));
  const bool match = expected.size() == actual.size() &&
                     CRYPTO_memcmp(expected.data(), actual.data(), expected.size()) == 0;
  if (!match || it == users_.end()) return std::nullopt;
  return candidate;
}

AuthToken SessionStore::issue(const std::string& principal, Role role, std::int64_t now,
                              std::int64_t ttl) {
  AuthToken t{random_token(), principal, role, now + ttl};
  std::lock_guard lk(mu_);
  sessions_[token_key(t.token)] = t;
  return t;
}

std::optional<AuthToken> SessionStore::validate(const std::string& token, std::int64_t now) {
  if (token.empty()) return std::nullopt;
  std::lock_guard lk(mu_);
  auto it = sessions_.find(token_key(token));
  if (it == sessions_.end()) return std::nullopt;
  if (it->second.expiry <= now) {
    sessions_.erase(it);
    return std::nullopt;
  }
  return it->second;
}

std::size_t SessionStore::size() const {
  std::lock_guard lk(mu_);
  return sessions_.size();
}

std::string bearer_token(const std::string& header) {
  constexpr std::string_view kPrefix = "Bearer ";
  if (header.size() <= kPrefix.size() || header.compare(0, kPrefix.size(), kPrefix) != 0) return {};
  return header.substr(kPrefix.size());
}

}  // namespace cipdev::auth
