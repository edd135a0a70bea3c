#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cipdev::auth {

enum class Role { Physician, Viewer, Admin };

const char* to_string(Role role);
std::optional<Role> role_from_string(const std::string& s);

// hex(SHA-256(salt bytes || password))
std::string hash_password(const std::string& salt_hex, const std::string& password);

// 128 bits from the OpenSSL CSPRNG, hex encoded.
std::string random_token();

struct User {
  std::string name;
  Role role = Role::Physician;
  std::string salt;             // hex
  std::string password_sha256;  // hex
};

User make_user(const std::string& name, const std::string& password, Role role);
nlohmann::json user_to_json(const User& user);

class UserTable {
 public:
  UserTable() = default;
  explicit UserTable(std::vector<User> users);
  // [{"user", "role", "salt", "password_sha256"}, ...]
  static UserTable from_json(const nlohmann::json& j);

  // Same work whether or not the user exists; comparison is constant time.
  std::optional<User> verify(const std::string& name, const std::string& password) const;
  std::size_t size() const { return users_.size(); }

 private:
  std::map<std::string, User> users_;
};

struct AuthToken {
  std::string token;
  std::string principal;
  Role role = Role::Physician;
  std::int64_t expiry = 0;
};

inline constexpr std::int64_t kSessionTtl = 3600;

// In-memory bearer sessions.
class SessionStore {
 public:
  AuthToken issue(const std::string& principal, Role role, std::int64_t now,
                  std::int64_t ttl = kSessionTtl);
  // Expired sessions are dropped on lookup.
  std::optional<AuthToken> validate(const std::string& token, std::int64_t now);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, AuthToken> sessions_;  // keyed by SHA-256 of the token
};

// "Bearer <token>" -> token; empty when absent or malformed.
std::string bearer_token(const std::string& authorization_header);

}  // namespace cipdev::auth
