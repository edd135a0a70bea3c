#include <gtest/gtest.h>

#include <set>

#include "cipdev/auth.hpp"

using namespace cipdev::auth;

TEST(Auth, HashMatchesPublishedSha256Vectors) {
  // Empty salt reduces to plain SHA-256.
  EXPECT_EQ(hash_password("", "abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(hash_password("", ""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  // Salt bytes come first: hex "61" is "a", so this is SHA-256("abc").
  EXPECT_EQ(hash_password("61", "bc"), hash_password("", "abc"));
}

TEST(Auth, VerifyUsers) {
  auto table = UserTable::from_json({user_to_json(make_user("dr.pop", "secret", Role::Physician)),
                                     user_to_json(make_user("nurse", "pw", Role::Viewer))});
  auto u = table.verify("dr.pop", "secret");
  ASSERT_TRUE(u);
  EXPECT_EQ(u->role, Role::Physician);
  EXPECT_FALSE(table.verify("dr.pop", "Secret"));
  EXPECT_FALSE(table.verify("ghost", "secret"));
  EXPECT_EQ(table.verify("nurse", "pw")->role, Role::Viewer);
}

TEST(Auth, SaltsDiffer) {
  auto a = make_user("x", "same", Role::Admin);
  auto b = make_user("y", "same", Role::Admin);
  EXPECT_NE(a.salt, b.salt);
  EXPECT_NE(a.password_sha256, b.password_sha256);
}

TEST(Auth, TokensAre128BitAndUnique) {
  std::set<std::string> seen;
  for (int i = 0; i < 1000; ++i) {
    auto t = random_token();
    EXPECT_EQ(t.size(), 32u);
    EXPECT_TRUE(seen.insert(t).second);
  }
}

TEST(Auth, SessionsExpire) {
  SessionStore s;
  auto t = s.issue("dr", Role::Physician, 1000);
  EXPECT_GT(t.expiry, 1000);
  EXPECT_EQ(t.expiry, 1000 + kSessionTtl);
  EXPECT_TRUE(s.validate(t.token, 1000 + kSessionTtl - 1));
  EXPECT_FALSE(s.validate(t.token, 1000 + kSessionTtl));
  EXPECT_FALSE(s.validate(t.token, 1001));  // dropped on the failed lookup
  EXPECT_FALSE(s.validate("", 1000));
  EXPECT_FALSE(s.validate("deadbeef", 1000));
}

TEST(Auth, BearerHeader) {
  EXPECT_EQ(bearer_token("Bearer abc"), "abc");
  EXPECT_EQ(bearer_token("bearer abc"), "");
  EXPECT_EQ(bearer_token("Basic abc"), "");
  EXPECT_EQ(bearer_token(""), "");
}

TEST(Auth, BadUserTable) {
  EXPECT_THROW(UserTable::from_json(nlohmann::json::parse(R"([{"user": "x"}])")), std::exception);
  EXPECT_THROW(UserTable::from_json(
                   nlohmann::json::parse(R"([{"user":"x","role":"god","salt":"00","password_sha256":"00"}])")),
               std::exception);
}
