#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cipdev/vitals.hpp"

using namespace cipdev::vitals;

namespace {

VitalsErrorCode vitals_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const VitalsError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no VitalsError";
  return VitalsErrorCode::ParseError;
}

VitalSample sample(Kind kind, double value, std::int64_t ts = 0) {
  return VitalSample{"dev", kind, value, ts, unit_of(kind)};
}

}  // namespace

TEST(Vitals, ParseExamples) {
  auto s = parse_vital_line("VITAL ecg1 HR 72 bpm 1700000000");
  EXPECT_EQ(s.device_id, "ecg1");
  EXPECT_EQ(s.kind, Kind::HR);
  EXPECT_EQ(s.value, 72);
  EXPECT_EQ(s.unit, "bpm");
  EXPECT_EQ(s.timestamp, 1700000000);
  EXPECT_EQ(vitals_error([] { parse_vital_line("VITAL t1 XYZ 1 u 0"); }), VitalsErrorCode::UnknownVitalType);
  EXPECT_EQ(vitals_error([] { parse_vital_line("VITAL t1 TEMP"); }), VitalsErrorCode::ParseError);
  EXPECT_EQ(vitals_error([] { parse_vital_line("VITAL t1 TEMP nan C 0"); }), VitalsErrorCode::NonFiniteValue);
  EXPECT_EQ(vitals_error([] { parse_vital_line("VITAL t1 TEMP inf C 0"); }), VitalsErrorCode::NonFiniteValue);
  EXPECT_EQ(vitals_error([] { parse_vital_line("VITAL t1 TEMP 3x C 0"); }), VitalsErrorCode::ParseError);
  EXPECT_EQ(vitals_error([] { parse_vital_line("VITAL t1 TEMP 37 C -1"); }), VitalsErrorCode::ParseError);
  EXPECT_EQ(vitals_error([] { parse_vital_line("VITAL t1 TEMP 37 C 1 extra"); }), VitalsErrorCode::ParseError);
  EXPECT_EQ(vitals_error([] { parse_vital_line("SAMPLE t1 TEMP 37 C 1"); }), VitalsErrorCode::ParseError);
}

TEST(Vitals, ParseFormatParseIdentity) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> val(-500, 500);
  for (int i = 0; i < 2000; ++i) {
    VitalSample s;
    s.device_id = "d" + std::to_string(rng() % 1000);
    s.kind = kAllKinds[rng() % 4];
    s.value = (i % 3 == 0) ? std::round(val(rng)) : val(rng);
    s.timestamp = static_cast<std::int64_t>(rng() >> 2);
    s.unit = unit_of(s.kind);
    auto line = format_vital_line(s);
    auto back = parse_vital_line(line);
    ASSERT_EQ(back, s) << line;
    ASSERT_EQ(format_vital_line(back), line);
  }
}

TEST(Vitals, DefaultExamples) {
  auto t = Thresholds::defaults();
  EXPECT_EQ(evaluate(sample(Kind::TEMP, 36.8), t), Classification::Normal);
  EXPECT_EQ(evaluate(sample(Kind::TEMP, 39.2), t), Classification::AbnormalHigh);
  EXPECT_EQ(evaluate(sample(Kind::HR, 30), t), Classification::AbnormalLow);
}

TEST(Vitals, BoundsAreNormalForEveryKind) {
  auto t = Thresholds::defaults();
  for (auto kind : kAllKinds) {
    auto band = *t.get(kind);
    EXPECT_EQ(evaluate(sample(kind, band.low), t), Classification::Normal) << to_string(kind);
    EXPECT_EQ(evaluate(sample(kind, band.high), t), Classification::Normal) << to_string(kind);
    EXPECT_EQ(evaluate(sample(kind, std::nextafter(band.low, -1e9)), t), Classification::AbnormalLow);
    EXPECT_EQ(evaluate(sample(kind, std::nextafter(band.high, 1e9)), t), Classification::AbnormalHigh);
  }
}

TEST(Vitals, EvaluateIsExhaustiveAndExclusive) {
  auto t = Thresholds::defaults();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> val(-1000, 1000);
  for (int i = 0; i < 10000; ++i) {
    auto kind = kAllKinds[rng() % 4];
    auto v = val(rng);
    auto band = *t.get(kind);
    auto c = evaluate(sample(kind, v), t);
    int matches = (band.low <= v && v <= band.high) + (v < band.low) + (v > band.high);
    ASSERT_EQ(matches, 1);
    if (v < band.low) ASSERT_EQ(c, Classification::AbnormalLow);
    else if (v > band.high) ASSERT_EQ(c, Classification::AbnormalHigh);
    else ASSERT_EQ(c, Classification::Normal);
  }
}

TEST(Vitals, ThresholdConfig) {
  auto t = Thresholds::from_json(nlohmann::json::parse(R"({"HR": {"low": 50, "high": 120}})"));
  EXPECT_EQ(t.get(Kind::HR)->low, 50);
  EXPECT_EQ(t.get(Kind::TEMP)->high, 38.0);
  EXPECT_EQ(vitals_error([] { Thresholds::from_json(nlohmann::json::parse(R"({"HR": {"low": 5, "high": 5}})")); }),
            VitalsErrorCode::InvalidThresholds);
  EXPECT_EQ(vitals_error([] { Thresholds::from_json(nlohmann::json::parse(R"({"BP": {"low": 1, "high": 5}})")); }),
            VitalsErrorCode::UnknownVitalType);
  t.clear(Kind::SYS);
  EXPECT_EQ(vitals_error([&] { evaluate(sample(Kind::SYS, 100), t); }), VitalsErrorCode::MissingThreshold);
}

TEST(Vitals, SummarizeExamples) {
  auto r = summarize(42, {sample(Kind::HR, 72, 5)});
  EXPECT_EQ(r.count, 1u);
  EXPECT_EQ(r.min, 72);
  EXPECT_EQ(r.max, 72);
  EXPECT_EQ(r.mean, 72);
  EXPECT_EQ(r.serial, 42u);
  r = summarize(42, {sample(Kind::HR, 70, 9), sample(Kind::HR, 74, 3)});
  EXPECT_EQ(r.min, 70);
  EXPECT_EQ(r.max, 74);
  EXPECT_EQ(r.mean, 72);
  EXPECT_EQ(r.window_start, 3);
  EXPECT_EQ(r.window_end, 9);
  EXPECT_EQ(vitals_error([] { summarize(1, {}); }), VitalsErrorCode::EmptyWindow);
  EXPECT_EQ(vitals_error([] { summarize(1, {sample(Kind::HR, 1), sample(Kind::TEMP, 1)}); }),
            VitalsErrorCode::MixedKinds);
}

TEST(Vitals, SummarizeMeanBoundedAndOrderFree) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> val(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    std::vector<VitalSample> xs;
    auto n = 1 + rng() % 30;
    double same = val(rng);
    for (std::size_t k = 0; k < n; ++k) {
      // Some windows are constant, where rounding most easily escapes [min, max].
      xs.push_back(sample(Kind::SYS, i % 5 == 0 ? same : val(rng), static_cast<std::int64_t>(rng() % 100000)));
    }
    auto r = summarize(1, xs);
    ASSERT_LE(r.min, r.mean);
    ASSERT_LE(r.mean, r.max);
    ASSERT_EQ(r.count, n);
    for (int p = 0; p < 5; ++p) {
      std::shuffle(xs.begin(), xs.end(), rng);
      ASSERT_EQ(summarize(1, xs), r);
    }
  }
}

TEST(Vitals, WindowClosesAfterTenSamplesAcrossKinds) {
  WindowAccumulator w(10);
  for (int i = 0; i < 9; ++i) EXPECT_TRUE(w.add(42, sample(Kind::HR, 70 + i, i)).empty());
  auto results = w.add(42, sample(Kind::TEMP, 39.2, 9));
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(results[0].kind, Kind::HR);
  EXPECT_EQ(results[0].count, 9u);
  EXPECT_EQ(results[1].kind, Kind::TEMP);
  EXPECT_EQ(results[1].count, 1u);
  EXPECT_EQ(w.pending(), 0u);

  // Tumbling: the next window starts empty.
  for (int i = 0; i < 9; ++i) EXPECT_TRUE(w.add(42, sample(Kind::HR, 80, 10 + i)).empty());
  EXPECT_EQ(w.add(42, sample(Kind::HR, 80, 19)).size(), 1u);
}

TEST(Vitals, WindowRestartsOnNewPatient) {
  WindowAccumulator w(3);
  w.add(1, sample(Kind::HR, 70));
  w.add(1, sample(Kind::HR, 70));
  EXPECT_TRUE(w.add(2, sample(Kind::HR, 70)).empty());
  EXPECT_EQ(w.pending(), 1u);
  EXPECT_EQ(*w.serial(), 2u);
}

TEST(Vitals, JsonRoundtrip) {
  auto s = sample(Kind::DIA, 71.5, 12);
  nlohmann::json j = s;
  EXPECT_EQ(j.get<VitalSample>(), s);
  auto r = summarize(7, {s});
  nlohmann::json jr = r;
  EXPECT_EQ(jr.get<BiometricResult>(), r);
}
