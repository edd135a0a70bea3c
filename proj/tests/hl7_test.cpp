#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <random>
#include <set>

#include "cipdev/hl7.hpp"
#include "cipdev/net.hpp"
#include "stub_peer.hpp"

using namespace cipdev;
using namespace cipdev::hl7;

namespace {

Hl7ErrorCode hl7_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Hl7Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Hl7Error";
  return Hl7ErrorCode::InvalidField;
}

CipCard card42() {
  CipCard c;
  c.serial = 42;
  c.server_uri = "http://127.0.0.1:4504/";
  return c;
}

vitals::BiometricResult hr_result() {
  vitals::BiometricResult r;
  r.serial = 42;
  r.kind = vitals::Kind::HR;
  r.window_start = 1700000000;
  r.window_end = 1700000009;
  r.count = 10;
  r.min = 70;
  r.max = 74;
  r.mean = 72;
  return r;
}

std::string random_field(std::mt19937_64& rng) {
  static const std::string alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789 .,:;-_+=*/()[]{}<>?!@#$%'\"\n\t";
  std::string s(rng() % 12, ' ');
  for (auto& c : s) c = alphabet[rng() % alphabet.size()];
  return s;
}

Hl7Message random_message(std::mt19937_64& rng) {
  Hl7Message m;
  Segment msh = {"MSH", "^~\\&"};
  for (int i = 0; i < 10; ++i) msh.push_back(random_field(rng));
  msh[9] = "CID" + std::to_string(rng() % 100000);  // MSH-10 nonempty
  m.segments.push_back(msh);
  const char* ids[] = {"PID", "OBR", "OBX", "NTE", "ZZZ"};
  for (auto n = rng() % 6; n > 0; --n) {
    Segment s = {ids[rng() % 5]};
    for (auto f = 1 + rng() % 15; f > 0; --f) s.push_back(random_field(rng));
    m.segments.push_back(s);
  }
  return m;
}

RetryPolicy fast_policy() {
  RetryPolicy p;
  p.attempts = 3;
  p.backoff_ms = {20, 40, 80};
  p.ack_timeout_ms = 150;
  p.connect_timeout_ms = 150;
  return p;
}

}  // namespace

TEST(Hl7, OruForKnownResult) {
  auto msg = build_oru(card42(), hr_result(), "1001", 1700000100);
  EXPECT_EQ(msg.message_type(), "ORU^R01");
  EXPECT_EQ(msg.control_id(), "1001");
  const auto* msh = msg.find("MSH");
  ASSERT_NE(msh, nullptr);
  EXPECT_EQ((*msh)[2], "CIPDEV");
  EXPECT_EQ((*msh)[4], "SIMOPAC");
  EXPECT_EQ((*msh)[11], "2.5");
  const auto* pid = msg.find("PID");
  ASSERT_NE(pid, nullptr);
  EXPECT_EQ((*pid)[3], "42");
  auto obx = msg.find_all("OBX");
  ASSERT_EQ(obx.size(), 3u);
  const char* stats[] = {"HR^min", "HR^max", "HR^mean"};
  const char* values[] = {"70.00", "74.00", "72.00"};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ((*obx[i])[3], stats[i]);
    EXPECT_EQ((*obx[i])[5], values[i]);
    EXPECT_EQ((*obx[i])[6], "bpm");
  }
  auto text = encode_hl7(msg);
  EXPECT_EQ(text.rfind("MSH|^~\\&|", 0), 0u);
  EXPECT_NE(text.find("\rPID|1||42\r"), std::string::npos);
  EXPECT_EQ(parse_hl7(text), msg);
}

TEST(Hl7, OruRejectsForeignResult) {
  auto r = hr_result();
  r.serial = 43;
  EXPECT_EQ(hl7_error([&] { build_oru(card42(), r, "1", 0); }), Hl7ErrorCode::SerialMismatch);
}

TEST(Hl7, EncodeParseInverse) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    auto m = random_message(rng);
    auto text = encode_hl7(m);
    ASSERT_EQ(parse_hl7(text), m) << i;
    ASSERT_EQ(encode_hl7(parse_hl7(text)), text);
  }
}

TEST(Hl7, DelimitersInFieldsRejected) {
  // Builders refuse every delimiter in the values they embed.
  for (std::string bad : {"a|b", "a^b", "a~b", "a\\b", "a&b", "a\rb", ""}) {
    EXPECT_EQ(hl7_error([&] { build_oru(card42(), hr_result(), bad, 0); }), Hl7ErrorCode::InvalidField) << bad;
    EXPECT_EQ(hl7_error([&] { build_ack(AckCode::AA, bad, "2", 0); }), Hl7ErrorCode::InvalidField) << bad;
  }
  // The encoder refuses anything that would break segment structure.
  auto m = build_ack(AckCode::AA, "1", "2", 0);
  for (std::string bad : {"a|b", "a\rb"}) {
    auto copy = m;
    copy.segments[1][2] = bad;
    EXPECT_EQ(hl7_error([&] { encode_hl7(copy); }), Hl7ErrorCode::InvalidField) << bad;
  }
  EXPECT_FALSE(is_plain_field("x|y"));
  EXPECT_TRUE(is_plain_field("HR 72.00"));
}

TEST(Hl7, ParseIsStrict) {
  EXPECT_EQ(hl7_error([] { parse_hl7("PID|1||42\r"); }), Hl7ErrorCode::MissingMsh);
  EXPECT_EQ(hl7_error([] { parse_hl7(""); }), Hl7ErrorCode::MissingMsh);
  EXPECT_EQ(hl7_error([] { parse_hl7("MSH|^~\\&|A\r\rPID|1\r"); }), Hl7ErrorCode::EmptySegment);
  auto ack = encode_hl7(build_ack(AckCode::AA, "42", "7", 0));
  EXPECT_EQ(ack.rfind("MSH|^~\\&|", 0), 0u);
  auto parsed = parse_hl7(ack);
  EXPECT_EQ(parsed.message_type(), "ACK");
  EXPECT_EQ(parse_ack(parsed).control_id, "42");
}

TEST(Hl7, MllpFraming) {
  EXPECT_EQ(mllp_wrap("M"), (Bytes{0x0B, 0x4D, 0x1C, 0x0D}));
  std::mt19937_64 rng(13);
  for (int i = 0; i < 500; ++i) {
    auto text = encode_hl7(random_message(rng));
    ASSERT_EQ(mllp_unwrap(mllp_wrap(text)), text);
  }
  Bytes no_cr = {0x0B, 0x4D, 0x1C};
  EXPECT_EQ(hl7_error([&] { mllp_unwrap(no_cr); }), Hl7ErrorCode::Incomplete);
  Bytes no_start = {0x4D, 0x1C, 0x0D};
  EXPECT_EQ(hl7_error([&] { mllp_unwrap(no_start); }), Hl7ErrorCode::BadFraming);
}

TEST(Hl7, MllpReaderSplitsStream) {
  std::mt19937_64 rng(14);
  std::vector<std::string> texts;
  Bytes stream;
  for (int i = 0; i < 20; ++i) {
    texts.push_back(encode_hl7(random_message(rng)));
    auto w = mllp_wrap(texts.back());
    stream.insert(stream.end(), w.begin(), w.end());
  }
  MllpReader reader;
  std::vector<std::string> got;
  for (std::size_t pos = 0; pos < stream.size();) {
    auto n = std::min<std::size_t>(stream.size() - pos, 1 + rng() % 50);
    reader.feed(ByteView(stream).subspan(pos, n));
    pos += n;
    while (auto t = reader.next()) got.push_back(*t);
  }
  EXPECT_EQ(got, texts);
}

TEST(Hl7, ControlIdsUniqueAndIncreasing) {
  std::set<std::string> seen;
  unsigned long long prev = 0;
  for (int i = 0; i < 10000; ++i) {
    auto id = next_control_id();
    EXPECT_TRUE(seen.insert(id).second);
    auto v = std::stoull(id);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Hl7, ObxValuesWithinHalfCent) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> val(-1000, 1000);
  for (int i = 0; i < 10000; ++i) {
    double v = val(rng);
    auto s = format_value(v);
    auto dot = s.find('.');
    ASSERT_NE(dot, std::string::npos);
    ASSERT_LE(s.size() - dot - 1, 2u) << s;
    ASSERT_LE(std::abs(std::stod(s) - v), 0.005 + 1e-9) << v << " -> " << s;
  }
}

TEST(Hl7, TimestampsRoundtrip) {
  EXPECT_EQ(format_ts(0), "19700101000000");
  EXPECT_EQ(format_ts(1700000000), "20231114221320");
  std::mt19937_64 rng(16);
  for (int i = 0; i < 1000; ++i) {
    auto t = static_cast<std::int64_t>(rng() % 4102444800ull);
    ASSERT_EQ(parse_ts(format_ts(t)), t);
  }
}

TEST(Hl7Delivery, AcceptAndNegativeAck) {
  StubPeer aa([](const Hl7Message& m) { return encode_hl7(build_ack(AckCode::AA, m.control_id(), "9", 0)); });
  auto msg = build_oru(card42(), hr_result(), next_control_id(), 0);
  int attempts = 0;
  auto st = send_and_await_ack(aa.endpoint(), msg, fast_policy(), &attempts);
  EXPECT_EQ(st.code, AckCode::AA);
  EXPECT_EQ(st.control_id, msg.control_id());
  EXPECT_EQ(attempts, 1);

  StubPeer ae([](const Hl7Message& m) { return encode_hl7(build_ack(AckCode::AE, m.control_id(), "9", 0)); });
  st = send_and_await_ack(ae.endpoint(), msg, fast_policy(), &attempts);
  EXPECT_EQ(st.code, AckCode::AE);
  EXPECT_EQ(attempts, 1);
  EXPECT_EQ(ae.received, 1);
}

TEST(Hl7Delivery, SilentPeerTimesOutAfterThreeAttempts) {
  StubPeer silent([](const Hl7Message&) { return std::string(); });
  auto msg = build_oru(card42(), hr_result(), next_control_id(), 0);
  int attempts = 0;
  auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(hl7_error([&] { send_and_await_ack(silent.endpoint(), msg, fast_policy(), &attempts); }),
            Hl7ErrorCode::Timeout);
  auto elapsed = std::chrono::steady_clock::now() - t0;
  EXPECT_EQ(attempts, 3);
  EXPECT_EQ(silent.received, 3);
  // 3 ack timeouts plus the two backoffs between attempts.
  EXPECT_GE(elapsed, std::chrono::milliseconds(3 * 150 + 20 + 40));
}

TEST(Hl7Delivery, NoListenerTimesOut) {
  std::uint16_t port;
  {
    auto l = net::TcpListener::bind("127.0.0.1", 0);
    port = l.port();
  }
  auto msg = build_oru(card42(), hr_result(), next_control_id(), 0);
  int attempts = 0;
  EXPECT_EQ(hl7_error([&] { send_and_await_ack({"127.0.0.1", port}, msg, fast_policy(), &attempts); }),
            Hl7ErrorCode::Timeout);
  EXPECT_EQ(attempts, 3);
}

TEST(Hl7Delivery, WrongControlIdIsAnError) {
  StubPeer liar([](const Hl7Message&) { return encode_hl7(build_ack(AckCode::AA, "nope", "9", 0)); });
  auto msg = build_oru(card42(), hr_result(), next_control_id(), 0);
  EXPECT_EQ(hl7_error([&] { send_and_await_ack(liar.endpoint(), msg, fast_policy()); }),
            Hl7ErrorCode::ControlIdMismatch);
}
