#include <doctest.h>

#include <set>

#include "cardiotel/auth.h"
#include "cardiotel/error.h"
#include "support.h"

using namespace cardiotel;
using namespace cardiotel::gateway;

using testsupport::code_of;

TEST_CASE("email shape") {
    CHECK(valid_email("a@b"));
    CHECK(valid_email("clinician@example.com"));
    CHECK_FALSE(valid_email("no-at-sign"));
    CHECK_FALSE(valid_email("@example.com"));
    CHECK_FALSE(valid_email("a@"));
    CHECK_FALSE(valid_email("a@b@c"));
}

TEST_CASE("password digests are salted argon2id strings") {
    const auto d1 = hash_password("correct horse", HashStrength::Minimal);
    const auto d2 = hash_password("correct horse", HashStrength::Minimal);
    CHECK(d1 != d2);
    CHECK(d1.rfind("$argon2id$", 0) == 0);
    CHECK(d1.find("correct horse") == std::string::npos);
    CHECK(verify_password(d1, "correct horse"));
    CHECK(verify_password(d2, "correct horse"));
    CHECK_FALSE(verify_password(d1, "correct horsE"));
    CHECK_FALSE(verify_password("garbage", "x"));

    CHECK(hash_strength_from_string("min") == HashStrength::Minimal);
    CHECK(hash_strength_from_string("interactive") == HashStrength::Interactive);
    CHECK(code_of([] { hash_strength_from_string("weak"); }) == ErrorCode::config);
}

TEST_CASE("registration rules") {
    testsupport::TempDir dir;
    UserDirectory users(dir.path() / "users.json", HashStrength::Minimal);
    const auto id = users.register_user("Ana", "ana@example.com", "555", "password1", "password1", 10);
    CHECK_FALSE(id.empty());

    CHECK(code_of([&] { users.register_user("", "b@x", "1", "password1", "password1", 0); }) == ErrorCode::validation);
    CHECK(code_of([&] { users.register_user("B", "bx", "1", "password1", "password1", 0); }) == ErrorCode::validation);
    CHECK(code_of([&] { users.register_user("B", "b@x", "1", "password1", "password2", 0); }) ==
          ErrorCode::validation);
    CHECK(code_of([&] { users.register_user("B", "b@x", "1", "short", "short", 0); }) == ErrorCode::validation);
    CHECK(code_of([&] { users.register_user("B", "ana@example.com", "1", "password1", "password1", 0); }) ==
          ErrorCode::conflict);

    const auto rec = users.find(id);
    REQUIRE(rec);
    CHECK(rec->name == "Ana");
    CHECK(rec->created_ts == 10);
    CHECK(rec->password_digest != "password1");

    CHECK(users.verify("ana@example.com", "password1") == id);
    CHECK_FALSE(users.verify("ana@example.com", "password2"));
    CHECK_FALSE(users.verify("nobody@example.com", "password1"));

    const auto stored = testsupport::read_file(dir.path() / "users.json");
    CHECK(stored.find("password1") == std::string::npos);
}

TEST_CASE("users persist across instances") {
    testsupport::TempDir dir;
    std::string id;
    {
        UserDirectory users(dir.path() / "users.json", HashStrength::Minimal);
        id = users.register_user("Ana", "ana@example.com", "555", "password1", "password1", 0);
    }
    UserDirectory reopened(dir.path() / "users.json", HashStrength::Minimal);
    CHECK(reopened.verify("ana@example.com", "password1") == id);
    const auto second = reopened.register_user("Bo", "bo@example.com", "1", "password2", "password2", 0);
    CHECK(second != id);
}

TEST_CASE("session tokens expire") {
    SessionTable sessions;
    const auto s = sessions.issue("u1", 1000, 500);
    CHECK(s.expiry_ts == 1500);
    CHECK(s.token.size() == 32);
    CHECK(sessions.user_for(s.token, 1499) == "u1");
    CHECK_FALSE(sessions.user_for(s.token, 1500));
    CHECK_FALSE(sessions.user_for(s.token, 1000));
    CHECK_FALSE(sessions.user_for("nope", 0));

    std::set<std::string> seen;
    for (int i = 0; i < 200; ++i) seen.insert(random_token());
    CHECK(seen.size() == 200);
}

TEST_CASE("device tokens are stored as digests and reloaded on miss") {
    testsupport::TempDir dir;
    const auto file = dir.path() / "tokens.json";
    DeviceTokens a(file);
    const auto t1 = a.provision("dev1");
    CHECK(a.device_for(t1) == "dev1");
    CHECK_FALSE(a.device_for(t1 + "x"));
    CHECK(testsupport::read_file(file).find(t1) == std::string::npos);
    CHECK(code_of([&] { a.provision("bad id"); }) == ErrorCode::validation);

    // Provisioned elsewhere after `a` loaded the file.
    DeviceTokens b(file);
    const auto t2 = b.provision("dev2");
    CHECK(a.device_for(t2) == "dev2");
    CHECK(a.device_for(t1) == "dev1");

    // Re-provisioning issues a new token alongside the old one.
    const auto t3 = b.provision("dev1");
    CHECK(t3 != t1);
    CHECK(DeviceTokens(file).device_for(t3) == "dev1");
}
