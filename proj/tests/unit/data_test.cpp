#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "kdda/data.hpp"

namespace kdda {
namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "kdda_data_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

TEST(TwoMoons, SizeAndBalance) {
  TwoMoonsParams p;
  p.n = 100;
  const DomainDataset d = gen_two_moons(p);
  EXPECT_EQ(d.size(), 100u);
  EXPECT_EQ(d.dim(), 2u);
  const auto y = d.labels();
  EXPECT_EQ(std::count(y.begin(), y.end(), 0), 50);
  EXPECT_EQ(d.class_count(), 2u);
}

TEST(TwoMoons, IdentityTransform) {
  TwoMoonsParams p;
  p.seed = 4;
  TwoMoonsParams q = p;
  q.domain_id = "target";
  const DomainDataset a = gen_two_moons(p);
  const DomainDataset b = gen_two_moons(q);
  ASSERT_EQ(a.features().size(), b.features().size());
  for (std::size_t i = 0; i < a.features().size(); ++i) EXPECT_EQ(a.features()[i], b.features()[i]);
}

TEST(TwoMoons, HalfTurnRotation) {
  TwoMoonsParams p;
  p.seed = 8;
  TwoMoonsParams q = p;
  q.rotation_deg = 180.0;
  const DomainDataset a = gen_two_moons(p);
  const DomainDataset b = gen_two_moons(q);
  const double cx = p.rotation_center[0], cy = p.rotation_center[1];
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b.row(i)[0], 2 * cx - a.row(i)[0], 1e-12);
    EXPECT_NEAR(b.row(i)[1], 2 * cy - a.row(i)[1], 1e-12);
  }
}

TEST(TwoMoons, QuarterTurnAndTranslation) {
  TwoMoonsParams p;
  p.noise_sigma = 0.0;
  p.rotation_center = {0.0, 0.0};
  TwoMoonsParams q = p;
  q.rotation_deg = 90.0;
  q.translation = {1.0, -2.0};
  const DomainDataset a = gen_two_moons(p);
  const DomainDataset b = gen_two_moons(q);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b.row(i)[0], -a.row(i)[1] + 1.0, 1e-12);
    EXPECT_NEAR(b.row(i)[1], a.row(i)[0] - 2.0, 1e-12);
  }
}

TEST(TwoMoons, NoiselessGeometry) {
  TwoMoonsParams p;
  p.n = 10;
  p.noise_sigma = 0.0;
  p.rotation_center = {0.0, 0.0};
  const DomainDataset d = gen_two_moons(p);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.row(i)[0], y = d.row(i)[1];
    if (d.labels()[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
    } else {
      EXPECT_NEAR((1 - x) * (1 - x) + (0.5 - y) * (0.5 - y), 1.0, 1e-12);
    }
  }
}

TEST(TwoMoons, LabelFlips) {
  TwoMoonsParams p;
  p.n = 200;
  p.label_flip_frac = 0.1;
  TwoMoonsParams clean = p;
  clean.label_flip_frac = 0.0;
  const DomainDataset a = gen_two_moons(p);
  const DomainDataset b = gen_two_moons(clean);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < a.size(); ++i) flips += a.labels()[i] != b.labels()[i];
  EXPECT_EQ(flips, 20u);
}

TEST(Blobs, Counts) {
  BlobsParams p;
  p.n = 10;
  p.centers = {{0, 0}, {5, 5}, {-5, 5}};
  const DomainDataset d = gen_blobs(p);
  EXPECT_EQ(d.size(), 10u);
  const auto y = d.labels();
  EXPECT_EQ(std::count(y.begin(), y.end(), 0), 4);
  EXPECT_EQ(std::count(y.begin(), y.end(), 2), 3);
  p.centers.clear();
  EXPECT_THROW(gen_blobs(p), ConfigError);
}

TEST(Dataset, LabelStripping) {
  const DomainDataset d = gen_two_moons(TwoMoonsParams{});
  const DomainDataset u = d.without_labels();
  EXPECT_FALSE(u.labeled());
  EXPECT_THROW(u.labels(), ConfigError);
  EXPECT_EQ(u.class_count(), 0u);
  for (std::size_t i = 0; i < d.features().size(); ++i) EXPECT_EQ(d.features()[i], u.features()[i]);
  const FeatureView view(u);
  EXPECT_EQ(view.size(), d.size());
}

TEST(Dataset, InvalidConstruction) {
  EXPECT_THROW(DomainDataset(2, 2, {1, 2, 3}, std::nullopt, "x"), ShapeError);
  EXPECT_THROW(DomainDataset(2, 1, {1, 2}, std::vector<int>{0, -1}, "x"), ConfigError);
  EXPECT_THROW(DomainDataset(0, 1, {}, std::nullopt, "x"), ConfigError);
}

TEST(Csv, RoundTrip) {
  TwoMoonsParams p;
  p.n = 30;
  const DomainDataset d = gen_two_moons(p);
  const auto path = temp_path("roundtrip.csv");
  save_csv(d, path);
  const DomainDataset e = load_csv(path);
  EXPECT_EQ(e.domain_id(), "source");
  ASSERT_EQ(e.size(), d.size());
  for (std::size_t i = 0; i < d.features().size(); ++i) EXPECT_EQ(d.features()[i], e.features()[i]);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.labels()[i], e.labels()[i]);
}

TEST(Csv, UnlabeledAndDomainFilter) {
  const auto path = temp_path("mixed.csv");
  write_file(path, "f0,f1,domain\n1,2,a\n3,4,b\n5,6,a\n");
  const DomainDataset a = load_csv(path, CsvSchema{"a", std::nullopt});
  EXPECT_FALSE(a.labeled());
  EXPECT_EQ(a.size(), 2u);
  EXPECT_EQ(a.row(1)[0], 5.0);
  EXPECT_THROW(load_csv(path), ConfigError);
}

TEST(Csv, Errors) {
  const auto empty = temp_path("empty.csv");
  write_file(empty, "");
  EXPECT_THROW(load_csv(empty), ConfigError);

  const auto bad = temp_path("bad.csv");
  write_file(bad, "f0,label,domain\n1,0,s\nx,1,s\n");
  try {
    load_csv(bad);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }

  const auto range = temp_path("range.csv");
  write_file(range, "f0,label,domain\n1,0,s\n2,3,s\n");
  EXPECT_THROW(load_csv(range, CsvSchema{std::nullopt, 2}), ConfigError);
  EXPECT_THROW(load_csv(temp_path("nope.csv")), ConfigError);
}

TEST(Merge, ConcatenatesRows) {
  TwoMoonsParams p;
  p.n = 10;
  const DomainDataset a = gen_two_moons(p);
  p.seed = 1;
  const DomainDataset b = gen_two_moons(p);
  const std::vector<DomainDataset> parts = {a, b};
  const DomainDataset m = merge_datasets(parts, "both");
  EXPECT_EQ(m.size(), 20u);
  EXPECT_EQ(m.domain_id(), "both");
  EXPECT_EQ(m.row(10)[0], b.row(0)[0]);
  const std::vector<DomainDataset> mixed = {a, b.without_labels()};
  EXPECT_THROW(merge_datasets(mixed, "x"), ConfigError);
}

TEST(Split, DisjointAndSeeded) {
  TwoMoonsParams p;
  p.n = 50;
  const DomainDataset d = gen_two_moons(p);
  const Split s = split_dataset(d, 0.2, 3);
  EXPECT_EQ(s.eval.size(), 10u);
  EXPECT_EQ(s.train.size(), 40u);
  const Split t = split_dataset(d, 0.2, 3);
  for (std::size_t i = 0; i < s.eval.features().size(); ++i) {
    EXPECT_EQ(s.eval.features()[i], t.eval.features()[i]);
  }
  std::set<std::pair<double, double>> seen;
  for (const DomainDataset* part : {&s.train, &s.eval}) {
    for (std::size_t i = 0; i < part->size(); ++i) seen.insert({part->row(i)[0], part->row(i)[1]});
  }
  EXPECT_EQ(seen.size(), 50u);
}

TEST(Batches, SizesAndDeterminism) {
  const DomainDataset d(10, 1, std::vector<double>(10, 0.0), std::nullopt, "t");
  const BatchPlan plan{3, 9, 0};
  const auto b = batches(d, plan);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_EQ(b[0].indices.size(), 3u);
  EXPECT_EQ(b[3].indices.size(), 1u);
  EXPECT_TRUE(b[0].labels.empty());
  const auto again = batches(d, plan);
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(b[i].indices, again[i].indices);
    all.insert(all.end(), b[i].indices.begin(), b[i].indices.end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  EXPECT_NE(epoch_permutation(10, 9, 0, 0, 0), epoch_permutation(10, 9, 0, 1, 0));
}

TEST(Batches, PairedCycling) {
  const std::vector<std::size_t> sizes = {10, 4};
  const auto steps = paired_batch_indices(sizes, BatchPlan{3, 1, 0});
  ASSERT_EQ(steps.size(), 4u);
  std::vector<std::size_t> src, tgt;
  for (const StepIndices& s : steps) {
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].size(), s[1].size());
    src.insert(src.end(), s[0].begin(), s[0].end());
    tgt.insert(tgt.end(), s[1].begin(), s[1].end());
  }
  EXPECT_EQ(src.size(), 10u);
  EXPECT_EQ(tgt.size(), 10u);  // 2.5 passes over 4 samples
  std::sort(src.begin(), src.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(src[i], i);
  std::vector<int> count(4, 0);
  for (std::size_t i : tgt) ++count[i];
  for (int c : count) {
    EXPECT_GE(c, 2);
    EXPECT_LE(c, 3);
  }
  // Each full cycle is a permutation.
  std::vector<std::size_t> first(tgt.begin(), tgt.begin() + 4);
  std::sort(first.begin(), first.end());
  EXPECT_EQ(first, (std::vector<std::size_t>{0, 1, 2, 3}));
}

}  // namespace
}  // namespace kdda
