#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "nbiot/phy.hpp"

using namespace nbiot;
namespace fs = std::filesystem;

namespace {

const PhyAssets& assets() {
  static const PhyAssets a = PhyAssets::load("");
  return a;
}

}  // namespace

TEST(Sinr, EqualSignalAndNoiseIsZeroDb) {
  EXPECT_DOUBLE_EQ(sinr_per_subcarrier({1.0, 2.0}, {}, 2.0), 1.0);
}

TEST(Sinr, InterfererAndNoise) {
  const Contribution i[] = {{1.0, 0.5}};
  EXPECT_DOUBLE_EQ(sinr_per_subcarrier({1.0, 1.0}, i, 0.5), 1.0);
}

TEST(Sinr, ZeroGainInterferersReduceToSnr) {
  std::vector<Contribution> i(18, {0.0, 1.0});
  EXPECT_EQ(sinr_per_subcarrier({3e-12, 0.1}, i, 1e-14), 3e-12 * 0.1 / 1e-14);
}

TEST(Sinr, NonPositiveNoiseRejected) {
  EXPECT_THROW(sinr_per_subcarrier({1, 1}, {}, 0.0), std::invalid_argument);
}

TEST(Eesm, UniformInputIsIdentity) {
  for (double eta : {0.5, 2.0, 17.0})
    for (double c : {1e-3, 1.0, 250.0}) EXPECT_NEAR(eesm(SinrVector(std::vector<double>(12, c)), eta), c, 1e-12 * c);
}

TEST(Eesm, TwoValueExample) {
  EXPECT_NEAR(eesm(SinrVector({4.0, 1.0}), 2.0), -2.0 * std::log((std::exp(-2.0) + std::exp(-0.5)) / 2.0), 1e-12);
  EXPECT_NEAR(eesm(SinrVector({4.0, 1.0}), 2.0), 1.9835, 5e-5);
}

TEST(Eesm, SingleSubcarrierPassthrough) { EXPECT_EQ(eesm(SinrVector({0.37}), 2.0), 0.37); }

TEST(Eesm, LargeValuesDoNotUnderflow) {
  EXPECT_NEAR(eesm(SinrVector({5000.0, 5000.0}), 2.0), 5000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(eesm(SinrVector({1e6, 2e6}), 0.01)));
}

TEST(Eesm, InvalidInput) {
  EXPECT_THROW(SinrVector(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(SinrVector({1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(eesm(SinrVector({1.0}), 0.0), std::invalid_argument);
}

TEST(Eesm, RandomPropertySuite) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> len(1, 24);
  std::uniform_real_distribution<double> db(-15.0, 30.0);
  int violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (double& x : v) x = std::pow(10.0, db(rng) / 10.0);
    const double eff = eesm(SinrVector(v), 2.0);
    const double lo = *std::min_element(v.begin(), v.end());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (eff < lo * (1 - 1e-12) || eff > mean * (1 + 1e-12)) ++violations;
    auto shuffled = v;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (std::abs(eesm(SinrVector(shuffled), 2.0) - eff) > 1e-9 * eff) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(Assets, BundledAssetsLoadAndValidate) {
  const auto& a = assets();
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.max_mcs(Direction::Downlink), 13);
  EXPECT_EQ(a.max_mcs(Direction::Uplink), 10);
  for (int k = 1; k <= kMaxUlMcs; ++k) EXPECT_LT(a.ul_cqi_threshold_db[k - 1], a.ul_cqi_threshold_db[k]);
}

TEST(Assets, ThresholdFilesAgreeWithCurves) {
  PhyAssets derived = assets();
  derived.derive_cqi_thresholds();
  for (int k = 1; k <= kMaxCqi; ++k) EXPECT_NEAR(derived.cqi_threshold_db[k], assets().cqi_threshold_db[k], 0.01);
  for (int k = 1; k <= kMaxUlMcs; ++k)
    EXPECT_NEAR(derived.ul_cqi_threshold_db[k], assets().ul_cqi_threshold_db[k], 0.01);
}

TEST(Assets, ThresholdIsTenPercentBler) {
  for (int k = 1; k <= kMaxCqi; ++k)
    EXPECT_NEAR(bler_lookup(assets(), k, 1, assets().cqi_threshold_db[k]), 0.1, 0.002) << k;
  for (int k = 1; k <= kMaxUlMcs; ++k)
    EXPECT_NEAR(bler_lookup(assets(), k, 1, assets().ul_cqi_threshold_db[k], Direction::Uplink), 0.1, 0.002) << k;
}

TEST(Assets, UplinkNeedsMoreSnrThanDownlinkForSameMcs) {
  // A single-tone RU carries the same block in fewer resource elements.
  for (int m = 1; m <= kMaxUlMcs; ++m) EXPECT_GT(assets().ul_cqi_threshold_db[m], assets().cqi_threshold_db[m]);
}

class AssetDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("nbiot_assets_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    for (const char* f : {"bler_curves.csv", "tbs_table.csv"})
      fs::copy_file(fs::path(PhyAssets::default_dir()) / f, dir_ / f);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(AssetDir, MissingUplinkFilesFallBackToDownlinkCurves) {
  const auto a = PhyAssets::load(dir_.string());
  for (int m = 0; m <= kMaxUlMcs; ++m) {
    ASSERT_EQ(a.ul_bler_curves[m].size(), a.bler_curves[m].size());
    EXPECT_EQ(a.ul_cqi_threshold_db[m], a.cqi_threshold_db[m]);
  }
  EXPECT_TRUE(a.ul_bler_curves[kMaxUlMcs + 1].empty());
}

TEST_F(AssetDir, MissingThresholdFileIsDerived) {
  const auto a = PhyAssets::load(dir_.string());
  for (int k = 1; k <= kMaxCqi; ++k) EXPECT_NEAR(a.cqi_threshold_db[k], assets().cqi_threshold_db[k], 0.01);
}

TEST_F(AssetDir, MalformedFilesRejected) {
  std::ofstream(dir_ / "cqi_thresholds.csv") << "cqi,snr_db\n1,-3\n2,-4\n";
  EXPECT_THROW(PhyAssets::load(dir_.string()), std::runtime_error);
  std::ofstream(dir_ / "cqi_thresholds.csv") << "wrong,header\n";
  EXPECT_THROW(PhyAssets::load(dir_.string()), std::runtime_error);
  fs::remove(dir_ / "cqi_thresholds.csv");
  std::ofstream(dir_ / "tbs_table.csv") << "mcs,n_sf,bits\n0,1,16\n";
  EXPECT_THROW(PhyAssets::load(dir_.string()), std::runtime_error);
}

TEST(Assets, MissingDirectoryThrows) { EXPECT_THROW(PhyAssets::load("/nonexistent/assets"), std::runtime_error); }

TEST(Bler, ClampsAtCurveEnds) {
  const auto& c = assets().bler_curves[5];
  EXPECT_EQ(bler_lookup(assets(), 5, 1, c.front().snr_db - 10.0), 1.0);
  EXPECT_EQ(bler_lookup(assets(), 5, 1, -1e300), 1.0);
  EXPECT_EQ(bler_lookup(assets(), 5, 1, c.back().snr_db + 10.0), c.back().bler);
}

TEST(Bler, RepetitionIsThreeDbOffset) {
  for (double x : {-8.0, -3.3, 0.0, 2.5})
    EXPECT_NEAR(bler_lookup(assets(), 4, 2, x), bler_lookup(assets(), 4, 1, x + 10.0 * std::log10(2.0)), 1e-12);
  EXPECT_NEAR(bler_lookup(assets(), 4, 8, -6.0), bler_lookup(assets(), 4, 1, -6.0 + 9.0309), 1e-4);
}

TEST(Bler, InterpolatesInLogDomainBetweenPoints) {
  const auto& c = assets().bler_curves[7];
  std::size_t i = 0;
  while (!(c[i].bler < 0.9 && c[i + 1].bler > 1e-4)) ++i;
  const double mid = 0.5 * (c[i].snr_db + c[i + 1].snr_db);
  EXPECT_NEAR(bler_lookup(assets(), 7, 1, mid), std::sqrt(c[i].bler * c[i + 1].bler), 1e-12);
  EXPECT_EQ(bler_lookup(assets(), 7, 1, c[i].snr_db), c[i].bler);
}

TEST(Bler, MonotoneInSnrAndMcs) {
  for (int m = 0; m <= kMaxCqi; ++m)
    for (double x = -15; x < 15; x += 0.25) EXPECT_GE(bler_lookup(assets(), m, 1, x), bler_lookup(assets(), m, 1, x + 0.25));
  for (int m = 1; m <= kMaxCqi; ++m) EXPECT_LE(bler_lookup(assets(), m - 1, 1, 1.0), bler_lookup(assets(), m, 1, 1.0));
}

TEST(Bler, RangeErrors) {
  EXPECT_THROW(bler_lookup(assets(), 14, 1, 0.0), std::out_of_range);
  EXPECT_THROW(bler_lookup(assets(), -1, 1, 0.0), std::out_of_range);
  EXPECT_THROW(bler_lookup(assets(), 11, 1, 0.0, Direction::Uplink), std::out_of_range);
  EXPECT_THROW(bler_lookup(assets(), 3, 0, 0.0), std::invalid_argument);
}

TEST(CoinToss, ZeroAndOne) {
  Engine rng(1);
  for (int i = 0; i < 10000; ++i) {
    EXPECT_EQ(decode_coin_toss(0.0, rng), DecodeOutcome::Success);
    EXPECT_EQ(decode_coin_toss(1.0, rng), DecodeOutcome::Failure);
  }
}

TEST(CoinToss, TenPercentCalibration) {
  Engine rng(12345);
  int failures = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) failures += decode_coin_toss(0.1, rng) == DecodeOutcome::Failure;
  EXPECT_NEAR(failures / double(n), 0.1, 0.005);
}

TEST(Cqi, FloorCeilingAndInclusiveBoundary) {
  const auto& a = assets();
  EXPECT_EQ(sinr_to_cqi(a, -std::numeric_limits<double>::infinity()), 0);
  EXPECT_EQ(sinr_to_cqi(a, a.cqi_threshold_db[13]), 13);
  EXPECT_EQ(sinr_to_cqi(a, 100.0), 13);
  for (int k = 1; k <= 13; ++k) {
    EXPECT_EQ(sinr_to_cqi(a, a.cqi_threshold_db[k]), k);
    EXPECT_EQ(sinr_to_cqi(a, std::nextafter(a.cqi_threshold_db[k], -1e9)), k - 1);
  }
}

TEST(Cqi, UplinkCappedAtSingleToneMaximum) {
  const auto& a = assets();
  EXPECT_EQ(sinr_to_cqi(a, 100.0, Direction::Uplink), kMaxUlMcs);
  for (int k = 1; k <= kMaxUlMcs; ++k) EXPECT_EQ(sinr_to_cqi(a, a.ul_cqi_threshold_db[k], Direction::Uplink), k);
}

TEST(Tbs, SingleSubframeColumnMatchesStandard) {
  // I_TBS 0..13 at N_SF = 1, 3GPP TS 36.213 Table 16.4.1.5.1-1.
  constexpr std::array<int, 14> column{16, 24, 32, 40, 56, 72, 88, 104, 120, 136, 144, 176, 208, 224};
  for (int m = 0; m < 14; ++m) EXPECT_EQ(tbs_lookup(assets(), m, 1), column[m]);
}

TEST(Tbs, RowZeroMatchesStandard) {
  // N_SF = 1, 2, 3, 4, 5, 6, 8, 10.
  constexpr std::array<std::pair<int, int>, 8> row{{{1, 16}, {2, 32}, {3, 56}, {4, 88}, {5, 120}, {6, 152}, {8, 208}, {10, 256}}};
  for (auto [n, bits] : row) EXPECT_EQ(tbs_lookup(assets(), 0, n), bits);
}

TEST(Tbs, MonotoneAndBounded) {
  for (int m = 0; m < 14; ++m)
    for (int n = 1; n < 10; ++n) EXPECT_LE(tbs_lookup(assets(), m, n), tbs_lookup(assets(), m, n + 1));
  EXPECT_THROW(tbs_lookup(assets(), 14, 1), std::out_of_range);
  EXPECT_THROW(tbs_lookup(assets(), 0, 0), std::out_of_range);
  EXPECT_THROW(tbs_lookup(assets(), 0, 11), std::out_of_range);
}
