#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "jigsaw/changemap.hpp"
#include "jigsaw/synthetic.hpp"
#include "test_util.hpp"

using namespace jigsaw;

namespace {

JigsawConfig tiny_config(std::size_t bands) {
  JigsawConfig c;
  c.input_bands = bands;
  c.conv_channels = {2, 2, 2, 2};
  c.dense_widths = {4, 4};
  c.fusion_width = 8;
  c.seed = 21;
  return c;
}

ClassMap map_from(std::size_t w, std::size_t h, std::vector<std::uint8_t> labels) {
  ClassMap m(w, h);
  m.labels = std::move(labels);
  return m;
}

// Hectare value on a report.txt row for `name`.
double text_row(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(name, 0) == 0) {
      const auto pos = line.find_last_of(' ');
      return std::stod(line.substr(pos + 1));
    }
  }
  ADD_FAILURE() << "no row " << name;
  return NAN;
}

}  // namespace

TEST(ClassifyImage, ConstantRasterGivesConstantMap) {
  const auto m = build<float>(tiny_config(3));
  Raster r(23, 19, 3);
  for (std::size_t b = 0; b < 3; ++b) {
    for (auto& v : r.plane(b)) v = 0.1f * static_cast<float>(b + 1);
  }
  const auto map = classify_image(m, r);
  ASSERT_EQ(map.width, 23u);
  ASSERT_EQ(map.height, 19u);
  for (auto v : map.labels) EXPECT_EQ(v, map.labels[0]);
  EXPECT_GE(map.labels[0], 1);
  EXPECT_LE(map.labels[0], 7);
}

TEST(ClassifyImage, MatchesPerPixelPrediction) {
  const auto m = build<float>(tiny_config(2));
  Rng rng(4);
  Raster r(20, 20, 2);
  for (auto& v : r.values) v = static_cast<float>(rng.uniform());
  const auto map = classify_image(m, r);
  for (std::size_t y = 0; y < 20; ++y) {
    for (std::size_t x = 0; x < 20; ++x) {
      const auto tile = extract_tile(r, {static_cast<std::int64_t>(x), static_cast<std::int64_t>(y)});
      ASSERT_EQ(map.at(y, x), predict(m, tile)) << x << "," << y;
    }
  }
  EXPECT_EQ(classify_image(m, r, 3), map);
  EXPECT_EQ(classify_image(m, r, 64), map);
}

TEST(ClassifyImage, BandMismatch) {
  const auto m = build<float>(tiny_config(3));
  EXPECT_JIGSAW_ERROR(classify_image(m, Raster(4, 4, 2)), ErrorCode::BandMismatch);
}

TEST(ChangeMask, NoChangeAndFullFlip) {
  const auto before = map_from(2, 2, {2, 3, 4, 1});
  EXPECT_EQ(change_mask(before, before).count(), 0u);
  const auto after = map_from(2, 2, {1, 1, 1, 1});
  EXPECT_EQ(change_mask(before, after).labels, (std::vector<std::uint8_t>{1, 1, 1, 0}));
}

TEST(ChangeMask, TruthTable) {
  // before tailings or not x after tailings or not
  const auto before = map_from(3, 3, {1, 1, 2, 2, 6, 1, 7, 3, 5});
  const auto after = map_from(3, 3, {1, 2, 1, 2, 1, 4, 1, 3, 1});
  EXPECT_EQ(change_mask(before, after).labels, (std::vector<std::uint8_t>{0, 0, 1, 0, 1, 0, 1, 0, 1}));
  // Other target classes work the same way.
  EXPECT_EQ(change_mask(before, after, 2).labels, (std::vector<std::uint8_t>{0, 1, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(ChangeMask, Errors) {
  EXPECT_JIGSAW_ERROR(change_mask(ClassMap(2, 2, 1), ClassMap(2, 3, 1)), ErrorCode::DimensionMismatch);
  EXPECT_JIGSAW_ERROR(change_mask(ClassMap(2, 2, 1), ClassMap(2, 2, 1), 8), ErrorCode::LabelOutOfRange);
  EXPECT_JIGSAW_ERROR(impact_report(ClassMap(2, 2, 1), ChangeMask(3, 2)), ErrorCode::DimensionMismatch);
}

TEST(ImpactReport, HandExample) {
  const auto before = map_from(3, 1, {2, 2, 4});
  const auto after = map_from(3, 1, {1, 1, 1});
  const auto mask = change_mask(before, after);
  const auto r = impact_report(before, mask);
  EXPECT_DOUBLE_EQ(r.area(2), 0.02);
  EXPECT_DOUBLE_EQ(r.area(4), 0.01);
  EXPECT_DOUBLE_EQ(r.total_hectares, 0.03);
  EXPECT_EQ(r.area(1), 0.0);
  EXPECT_EQ(r.total_pixels, 3u);
  const auto text = impact_to_text(r, ClassScheme::standard());
  EXPECT_EQ(text_row(text, "Forest"), 0.02);
  EXPECT_EQ(text_row(text, "River"), 0.01);
  EXPECT_EQ(text_row(text, "Total"), 0.03);
  EXPECT_EQ(text_row(text, "Mine & tailings"), 0.0);
}

TEST(ImpactReport, EmptyMaskAndPixelSize) {
  const auto before = map_from(2, 2, {2, 3, 4, 5});
  const auto r = impact_report(before, ChangeMask(2, 2));
  EXPECT_EQ(r.total_hectares, 0.0);
  for (std::uint8_t c = 1; c <= kNumClasses; ++c) EXPECT_EQ(r.area(c), 0.0);

  ClassMap coarse(2, 1, 3, 20.0);
  ChangeMask all(2, 1, 1);
  EXPECT_DOUBLE_EQ(impact_report(coarse, all).area(3), 0.08);
}

TEST(ImpactReport, TargetClassRowIsZero) {
  Rng rng(3);
  ClassMap before(40, 30), after(40, 30);
  for (auto& v : before.labels) v = static_cast<std::uint8_t>(1 + rng.below(7));
  for (auto& v : after.labels) v = static_cast<std::uint8_t>(1 + rng.below(7));
  const auto mask = change_mask(before, after);
  const auto r = impact_report(before, mask);
  EXPECT_EQ(r.area(1), 0.0);
  // brute-force per-class count of flagged pixels
  double total = 0.0;
  for (std::uint8_t c = 1; c <= kNumClasses; ++c) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < before.labels.size(); ++i) n += before.labels[i] == c && after.labels[i] == 1 && c != 1;
    EXPECT_DOUBLE_EQ(r.area(c), static_cast<double>(n) * 0.01);
    total += r.area(c);
  }
  EXPECT_NEAR(r.total_hectares, total, 1e-9);
  const auto counts = transition_counts(before, after);
  for (std::uint8_t c = 2; c <= kNumClasses; ++c) EXPECT_EQ(counts[c - 1][0], r.pixels[c - 1]);
}

TEST(TransitionCounts, SkipsUnlabeled) {
  const auto before = map_from(2, 2, {0, 2, 2, 3});
  const auto after = map_from(2, 2, {1, 1, 0, 3});
  const auto t = transition_counts(before, after);
  std::uint64_t sum = 0;
  for (const auto& row : t) {
    for (auto v : row) sum += v;
  }
  EXPECT_EQ(sum, 2u);
  EXPECT_EQ(t[1][0], 1u);
  EXPECT_EQ(t[2][2], 1u);
}

TEST(WriteChangeOutputs, EmptyMaskRendersBeforeMap) {
  test::TempDir dir;
  const auto before = map_from(3, 2, {2, 3, 4, 5, 6, 7});
  const ChangeMask mask(3, 2);
  const auto paths = write_change_outputs(mask, impact_report(before, mask), before, before, dir.path());
  render_map(before, ClassScheme::standard(), dir / "plain.ppm");
  EXPECT_EQ(test::read_bytes(paths.rendered), test::read_bytes(dir / "plain.ppm"));
  EXPECT_EQ(load_change_mask(paths.mask_header), mask);
}

TEST(WriteChangeOutputs, FilesAgree) {
  test::TempDir dir;
  Rng rng(8);
  ClassMap before(30, 20), after(30, 20);
  for (auto& v : before.labels) v = static_cast<std::uint8_t>(1 + rng.below(7));
  for (auto& v : after.labels) v = static_cast<std::uint8_t>(1 + rng.below(7));
  const auto mask = change_mask(before, after);
  const auto report = impact_report(before, mask);
  const auto paths = write_change_outputs(mask, report, before, after, dir / "nested" / "out");
  EXPECT_EQ(load_change_mask(paths.mask_header), mask);

  const auto text = test::read_bytes(paths.impact_text);
  double sum = 0.0;
  const auto scheme = ClassScheme::standard();
  for (const auto& e : scheme.entries()) {
    EXPECT_NEAR(text_row(text, e.name), report.area(e.id), 0.005);
    sum += text_row(text, e.name);
  }
  EXPECT_NEAR(text_row(text, "Total"), sum, 0.005);
  EXPECT_NEAR(text_row(text, "Total"), report.total_hectares, 0.005);

  const auto csv_text = test::read_bytes(paths.impact_csv);
  EXPECT_EQ(csv_text.rfind("class_id,class_name,hectares\n", 0), 0u);

  // Flagged pixels are red, everything else keeps its class color.
  const auto ppm = test::read_bytes(paths.rendered);
  const auto header = detail::ppm_header(30, 20);
  ASSERT_EQ(ppm.size(), header.size() + 30 * 20 * 3);
  for (std::size_t i = 0; i < 600; ++i) {
    const auto c = mask.labels[i] ? scheme.color(1) : scheme.color(before.labels[i]);
    const auto* px = reinterpret_cast<const unsigned char*>(ppm.data() + header.size() + 3 * i);
    ASSERT_EQ(px[0], c.r);
    ASSERT_EQ(px[1], c.g);
    ASSERT_EQ(px[2], c.b);
  }
}

TEST(WriteChangeOutputs, SyntheticBlobArea) {
  SyntheticOptions opts;
  opts.width = 64;
  opts.height = 64;
  opts.seed = 5;
  const auto scene = make_synthetic_scene(opts);
  std::vector<Coord> blob;
  const auto after_truth = flip_blob(scene.truth, 137, kMineTailings, 9, &blob);
  ASSERT_EQ(blob.size(), 137u);
  ClassMap before(64, 64), after(64, 64);
  before.labels = scene.truth.labels;
  after.labels = after_truth.labels;
  const auto mask = change_mask(before, after);
  EXPECT_EQ(mask.count(), 137u);
  const auto r = impact_report(before, mask);
  EXPECT_NEAR(r.total_hectares, 1.37, 1e-9);
  EXPECT_EQ(r.area(kMineTailings), 0.0);
  std::array<std::size_t, kNumClasses> expected{};
  for (const auto& p : blob) ++expected[scene.truth.at(p.y, p.x) - 1];
  for (std::uint8_t c = 1; c <= kNumClasses; ++c) EXPECT_NEAR(r.area(c), expected[c - 1] * 0.01, 1e-12);

  test::TempDir dir;
  const auto paths = write_change_outputs(mask, r, before, after, dir.path());
  EXPECT_EQ(text_row(test::read_bytes(paths.impact_text), "Total"), 1.37);
}
