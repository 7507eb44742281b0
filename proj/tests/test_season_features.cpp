#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cropcast/grid_io.hpp"
#include "cropcast/season_features.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cropcast;
using testing_support::TempDir;

namespace {

TimeSeriesStack stack_of(Parameter p, int cadence, int start, const GridGeometry& g, const std::vector<std::vector<double>>& frames) {
  TimeSeriesStack st{p, cadence, start, 2020, {}};
  for (const auto& v : frames) {
    GridRaster r(g, 0.0);
    r.values = v;
    st.frames.push_back(r);
  }
  return st;
}

}  // namespace

TEST(AlignCadence, SameCadenceKeepsFrames) {
  const GridGeometry g{0, 0, 1, 1, 2};
  const auto st = stack_of(Parameter::NDVI, 16, 1, g, {{1, 2}, {3, 4}, {5, 6}});
  const auto out = align_cadence(st, 16);
  ASSERT_EQ(out.frames.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out.frames[k], st.frames[k]);
}

TEST(AlignCadence, MidpointOfTwoFrames) {
  const GridGeometry g{0, 0, 1, 1, 1};
  const auto out = align_cadence(stack_of(Parameter::NDVI, 16, 1, g, {{0}, {10}}), 8);
  ASSERT_GE(out.frames.size(), 3u);
  EXPECT_EQ(out.day_of_frame(1), 9);
  EXPECT_DOUBLE_EQ(out.frames[1].values[0], 5.0);
  EXPECT_EQ(out.frames[2].values[0], 10.0);
}

TEST(AlignCadence, RandomStackMatchesPointwiseInterpolation) {
  Rng rng(31);
  const GridGeometry g{0, 0, 1, 3, 3};
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> frames(5, std::vector<double>(9));
    for (auto& f : frames) {
      for (auto& v : f) v = rng.uniform() < 0.1 ? kDefaultNodata : rng.uniform(0, 100);
    }
    const int cadence = 5 + static_cast<int>(rng.index(20));
    const int start = 1 + static_cast<int>(rng.index(30));
    const auto st = stack_of(Parameter::RAIN, cadence, start, g, frames);
    const auto out = align_cadence(st, 4);
    const int last_day = start + 4 * cadence;
    ASSERT_EQ(out.frames.size(), static_cast<std::size_t>((last_day + cadence - 1 - start) / 4 + 1));
    for (std::size_t k = 0; k < out.frames.size(); ++k) {
      const double day = start + 4.0 * static_cast<double>(k);
      for (std::size_t i = 0; i < 9; ++i) {
        double want;
        if (day >= last_day) {
          want = frames[4][i];
        } else {
          const double pos = (day - start) / cadence;
          const auto a = static_cast<std::size_t>(std::floor(pos));
          const double w = pos - static_cast<double>(a);
          if (w == 0.0) {
            want = frames[a][i];
          } else if (frames[a][i] == kDefaultNodata || frames[a + 1][i] == kDefaultNodata) {
            want = kDefaultNodata;
          } else {
            want = frames[a][i] + (frames[a + 1][i] - frames[a][i]) * w;
          }
        }
        EXPECT_NEAR(out.frames[k].values[i], want, 1e-9) << "frame " << k << " cell " << i;
      }
    }
  }
}

TEST(Onset, ConstantSeriesHasNone) {
  const std::vector<double> v(10, 0.4);
  std::vector<int> d(10);
  for (int i = 0; i < 10; ++i) d[i] = 1 + 16 * i;
  EXPECT_FALSE(detect_greenness_onset(v, d).has_value());
}

TEST(Onset, StepSeries) {
  const std::vector<double> v = {0.1, 0.1, 0.6, 0.6};
  const std::vector<int> d = {1, 17, 33, 49};
  EXPECT_EQ(detect_greenness_onset(v, d), 33);
}

TEST(Onset, DoubleLogisticMatchesScanAndShiftInvariance) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const double lo = rng.uniform(0.05, 0.3), amp = rng.uniform(0.02, 0.6);
    const double up = rng.uniform(60, 200), down = up + rng.uniform(60, 150);
    const double k1 = rng.uniform(0.03, 0.2), k2 = rng.uniform(0.03, 0.2);
    std::vector<double> v;
    std::vector<int> d;
    for (int day = 1; day <= 365; day += 16) {
      d.push_back(day);
      v.push_back(lo + amp * (1 / (1 + std::exp(-k1 * (day - up))) - 1 / (1 + std::exp(-k2 * (day - down)))) +
                  rng.uniform(-0.005, 0.005));
    }
    EXPECT_EQ(detect_greenness_onset(v, d), oracles::onset_scan(v, d));
    auto shifted = v;
    for (auto& x : shifted) x += 0.25;
    EXPECT_EQ(detect_greenness_onset(shifted, d), detect_greenness_onset(v, d));
  }
}

TEST(Onset, InputErrors) {
  const std::vector<double> v = {0.1, 0.2, 0.3};
  const std::vector<int> d = {1, 17};
  try {
    detect_greenness_onset(v, d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::LengthMismatch);
  }
}

TEST(ResolveWindow, OnsetInsideSeasonMovesStart) {
  const CropCalendarEntry cal{"A", "Maize", {145, 175}, {175, 272}, {273, 318}};
  EXPECT_EQ(resolve_window(cal, std::nullopt).start_day, 145);
  EXPECT_EQ(resolve_window(cal, 113).start_day, 145);
  const auto w = resolve_window(cal, 161);
  EXPECT_EQ(w.start_day, 161);
  EXPECT_EQ(w.end_day, 273);
  EXPECT_EQ(w.source, WindowSource::detected_onset);
  EXPECT_EQ(resolve_window(cal, 300).start_day, 145);
}

TEST(Features, SinglePixelConstantStacks) {
  const GridGeometry g{0, 0, 1, 2, 2};
  StackSet stacks;
  double c = 1.5;
  for (auto p : kInputParameters) {
    std::vector<std::vector<double>> frames(6, std::vector<double>(4, c));
    stacks[p] = stack_of(p, 16, 1, g, frames);
    c += 1.0;
  }
  const CropMask mask{g, {0, 0, 1, 0}};
  const SeasonWindow w{17, 65, WindowSource::calendar};  // frames at 17, 33, 49, 65
  const auto ds = build_feature_vectors(stacks, nullptr, mask, w, default_aggregates());
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.pixel_index[0], (PixelIndex{1, 0}));
  c = 1.5;
  for (std::size_t p = 0; p < 4; ++p, c += 1.0) {
    EXPECT_DOUBLE_EQ(ds.X(0, 3 * p + 0), c);
    EXPECT_DOUBLE_EQ(ds.X(0, 3 * p + 1), c);
    EXPECT_DOUBLE_EQ(ds.X(0, 3 * p + 2), 4 * c);
  }
  EXPECT_EQ(ds.feature_names.front(), "NDVI_mean");
  EXPECT_EQ(ds.feature_names.back(), "ET_sum");
  EXPECT_EQ(build_feature_vectors(stacks, nullptr, {g, {0, 0, 0, 0}}, w, default_aggregates()).size(), 0u);
}

TEST(Features, FourByFourSceneMatchesHandLoop) {
  Rng rng(12);
  const GridGeometry g{5, 5, 0.1, 4, 4};
  StackSet stacks;
  std::map<Parameter, std::vector<std::vector<double>>> raw;
  for (auto p : kInputParameters) {
    auto& frames = raw[p];
    frames.assign(8, std::vector<double>(16));
    for (auto& f : frames) {
      for (auto& v : f) v = rng.uniform() < 0.05 ? kDefaultNodata : rng.uniform(0, 50);
    }
    stacks[p] = stack_of(p, 16, 1, g, frames);
  }
  GridRaster prod(g, 0.0);
  for (auto& v : prod.values) v = rng.uniform() < 0.1 ? prod.nodata : rng.uniform(0, 100);
  CropMask mask{g, std::vector<std::uint8_t>(16)};
  for (auto& m : mask.cells) m = rng.uniform() < 0.8;
  const SeasonWindow w{30, 100, WindowSource::calendar};  // frames 2..6 (days 33..97)
  const std::vector<Aggregate> aggs = {Aggregate::mean, Aggregate::max, Aggregate::sum, Aggregate::min, Aggregate::stddev};
  const auto ds = build_feature_vectors(stacks, &prod, mask, w, aggs);

  std::size_t row = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    if (!mask.cells[i] || prod.values[i] == prod.nodata) continue;
    std::vector<double> expect;
    bool ok = true;
    for (auto p : kInputParameters) {
      std::vector<double> vals;
      for (int k = 2; k <= 6; ++k) vals.push_back(raw[p][k][i]);
      if (std::count(vals.begin(), vals.end(), kDefaultNodata)) ok = false;
      double s = 0, mx = -1e300, mn = 1e300;
      for (double v : vals) s += v, mx = std::max(mx, v), mn = std::min(mn, v);
      const double mean = s / 5;
      double ss = 0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      expect.insert(expect.end(), {mean, mx, s, mn, std::sqrt(ss / 5)});
    }
    if (!ok) continue;
    ASSERT_LT(row, ds.size());
    EXPECT_EQ(ds.pixel_index[row], (PixelIndex{i / 4, i % 4}));
    EXPECT_EQ(ds.y[row], prod.values[i]);
    for (std::size_t j = 0; j < expect.size(); ++j) EXPECT_NEAR(ds.X(row, j), expect[j], 1e-9);
    ++row;
  }
  EXPECT_EQ(row, ds.size());
}

TEST(Features, FrameInsertionOrderIrrelevantAfterSorting) {
  TempDir dir("features");
  Rng rng(15);
  const GridGeometry g{0, 0, 1, 3, 3};
  StackSet stacks;
  for (auto p : kInputParameters) {
    std::vector<std::vector<double>> frames(10, std::vector<double>(9));
    for (auto& f : frames) {
      for (auto& v : f) v = rng.uniform(0, 1);
    }
    stacks[p] = stack_of(p, 16, 1, g, frames);
  }
  const CropMask mask{g, std::vector<std::uint8_t>(9, 1)};
  const SeasonWindow w{20, 120, WindowSource::calendar};
  const auto base = build_feature_vectors(stacks, nullptr, mask, w, default_aggregates());
  // Write frames in reverse, read back (directory listing sorts by day).
  for (auto& [p, st] : stacks) {
    for (std::size_t k = st.frames.size(); k-- > 0;) {
      write_grid(st.frames[k], dir / (frame_stem(p, st.year, st.day_of_frame(k)) + ".grdh"));
    }
  }
  StackSet reread;
  for (auto p : kInputParameters) reread[p] = read_stack(dir.path(), p, 2020);
  const auto again = build_feature_vectors(reread, nullptr, mask, w, default_aggregates());
  ASSERT_EQ(again.size(), base.size());
  for (std::size_t i = 0; i < base.X.data.size(); ++i) {
    EXPECT_NEAR(again.X.data[i], base.X.data[i], 1e-6 * std::max(1.0, std::abs(base.X.data[i])));
  }
}

TEST(Features, EmptyWindowAndGridMismatch) {
  const GridGeometry g{0, 0, 1, 1, 1};
  StackSet stacks;
  for (auto p : kInputParameters) stacks[p] = stack_of(p, 16, 1, g, {{1}, {2}});
  const CropMask mask{g, {1}};
  try {
    build_feature_vectors(stacks, nullptr, mask, {200, 220, WindowSource::calendar}, default_aggregates());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyWindow);
  }
  try {
    build_feature_vectors(stacks, nullptr, {{0, 0, 2, 1, 1}, {1}}, {1, 20, WindowSource::calendar}, default_aggregates());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::GridMismatch);
  }
}

TEST(Features, DatasetCsvRoundTrip) {
  TempDir dir("ds");
  FeatureDataset ds;
  ds.feature_names = {"a", "b"};
  ds.X = Matrix::from_rows({{0.1, 2.5}, {1e-7, -3.0}});
  ds.y = {10.0, 20.5};
  ds.pixel_index = {{0, 1}, {3, 2}};
  write_dataset(ds, (dir / "d.csv").string());
  const auto back = read_dataset((dir / "d.csv").string());
  EXPECT_EQ(back.feature_names, ds.feature_names);
  EXPECT_EQ(back.X, ds.X);
  EXPECT_EQ(back.y, ds.y);
  EXPECT_EQ(back.pixel_index, ds.pixel_index);
  EXPECT_EQ(csv::read_file((dir / "d.csv").string()).substr(0, 11), "a,b,y,row,c");

  ds.y.clear();
  write_dataset(ds, (dir / "p.csv").string());
  EXPECT_TRUE(read_dataset((dir / "p.csv").string()).y.empty());
}
