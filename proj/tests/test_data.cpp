#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "dlf/data.hpp"
#include "dlf/meta.hpp"
#include "oracles.hpp"

using namespace dlf;

namespace {

std::string bytes(std::initializer_list<int> v) {
  std::string s;
  for (int b : v) s.push_back(char(b));
  return s;
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() /
             ("dlf_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
              ::testing::UnitTest::GetInstance()->current_test_info()->name());
  std::filesystem::create_directories(dir);
  return dir;
}

/// Dataset whose single feature encodes the row index.
Dataset indexed(std::size_t n) {
  Dataset ds;
  ds.n_classes = 2;
  ds.inputs = Tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    ds.inputs(i, 0) = double(i);
    ds.labels.push_back(i % 2);
  }
  return ds;
}

std::vector<std::size_t> ids(const Dataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(std::size_t(ds.inputs(i, 0)));
  return out;
}

}  // namespace

TEST(Idx, LabelFile) {
  EXPECT_EQ(idx::parse_labels(bytes({0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1})), (Labels{7, 2, 1}));
}

TEST(Idx, ImageFile) {
  const Tensor t = idx::parse_images(bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 0, 255}));
  EXPECT_EQ(t.shape, (Shape{1, 4}));
  EXPECT_EQ(t.data, (std::vector<double>{0.0, 1.0, 0.0, 1.0}));
}

TEST(Idx, BadMagic) {
  try {
    idx::parse_labels(bytes({0, 0, 8, 2, 0, 0, 0, 1, 5}));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
    EXPECT_EQ(e.offset(), 0u);
  }
  EXPECT_THROW(idx::parse_images(bytes({0, 0, 8, 1, 0, 0, 0, 0})), ParseError);
}

TEST(Idx, Truncation) {
  try {
    idx::parse_labels(bytes({0, 0, 8, 1, 0, 0, 0, 3, 7, 2}));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
    EXPECT_EQ(e.offset(), 10u);
  }
  EXPECT_THROW(idx::parse_images(bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 9})), ParseError);
  EXPECT_THROW(idx::parse_labels(bytes({0, 0, 8})), ParseError);
}

TEST(Idx, CountMismatchBetweenFiles) {
  const auto dir = temp_dir();
  idx::write_file(dir / "img", bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9}));
  idx::write_file(dir / "lbl", bytes({0, 0, 8, 1, 0, 0, 0, 2, 1, 2}));
  EXPECT_THROW(load_mnist_idx(dir / "img", dir / "lbl"), ParseError);
}

TEST(Idx, WriteThenReadRoundTrips) {
  for (const char* ext : {"", ".gz"}) {
    const auto dir = temp_dir();
    Dataset ds;
    ds.n_classes = 10;
    ds.inputs = Tensor({7, 12});
    std::mt19937_64 rng(3);
    for (double& v : ds.inputs.data) v = double(rng() % 256) / 255.0;
    for (int i = 0; i < 7; ++i) ds.labels.push_back(rng() % 10);
    const std::string img = (dir / "img").string() + ext, lbl = (dir / "lbl").string() + ext;
    write_mnist_idx(ds, img, lbl, 3, 4);
    const Dataset back = load_mnist_idx(img, lbl);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.inputs, ds.inputs);
  }
}

TEST(Blobs, DeterministicForASeed) {
  const auto a = synth_blobs(60, 3, 4, 2.0, {}, 9);
  const auto b = synth_blobs(60, 3, 4, 2.0, {}, 9);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  for (double v : a.inputs.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Blobs, ExactRoundedCounts) {
  const auto ds = synth_blobs(100, 2, 2, 1.0, {0.5, 0.5}, 1);
  EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 0u), 50);
  const auto im = synth_blobs(101, 2, 2, 1.0, {0.8, 0.2}, 1);
  EXPECT_EQ(std::count(im.labels.begin(), im.labels.end(), 0u), 81);
  EXPECT_EQ(std::count(im.labels.begin(), im.labels.end(), 1u), 20);
}

TEST(Blobs, Errors) {
  EXPECT_THROW(synth_blobs(2, 3, 2, 1.0, {}, 1), Error);
  EXPECT_THROW(synth_blobs(10, 2, 2, 1.0, {0.5, 0.6}, 1), Error);
}

TEST(Blobs, ZeroSeparationIsUnlearnable) {
  MetaConfig cfg;
  cfg.T = 300;
  cfg.batch_size = 16;
  cfg.eta = EtaSchedule::constant(0.5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = synth_blobs(600, 2, 2, 0.0, {0.5, 0.5}, 100 + seed);
    const auto sp = split(ds, 400, 200, 0, seed);
    cfg.student_seed = seed;
    cfg.schedule_seed = seed + 7;
    const auto run = run_student(nullptr, sp.train, sp.dev, cfg, LossSpec::cross_entropy());
    const double acc = accuracy(predict(probs_at(run.student, run.student.omega, sp.dev.inputs)), sp.dev.labels);
    EXPECT_LT(acc, 0.6) << "seed " << seed;
  }
}

TEST(Split, WholeSetToTrain) {
  const auto ds = indexed(20);
  const auto sp = split(ds, 20, 0, 0, 4);
  EXPECT_TRUE(sp.dev.empty());
  EXPECT_TRUE(sp.test.empty());
  auto got = ids(sp.train);
  std::sort(got.begin(), got.end());
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(got[i], i);
}

TEST(Split, DisjointAndCovering) {
  const auto sp = split(indexed(30), 10, 7, 5, 11);
  std::set<std::size_t> all;
  for (const auto* part : {&sp.train, &sp.dev, &sp.test})
    for (auto i : ids(*part)) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 22u);
  EXPECT_THROW(split(indexed(5), 3, 2, 1, 0), Error);
}

TEST(Schedule, EachIndexTwiceOverTwoEpochs) {
  const auto sched = make_schedule(10, 5, 4, 3);
  ASSERT_EQ(sched.batches.size(), 5u);
  std::map<std::size_t, int> count;
  for (const auto& b : sched.batches) {
    EXPECT_EQ(b.size(), 4u);
    for (auto i : b) ++count[i];
  }
  ASSERT_EQ(count.size(), 10u);
  for (auto [i, c] : count) EXPECT_EQ(c, 2) << "index " << i;
  EXPECT_EQ(make_schedule(10, 5, 4, 3).batches, sched.batches);
}
