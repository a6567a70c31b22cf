#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "fusenet/data_io.hpp"

using namespace fusenet;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / ("fusenet_io_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(LoadCsv, LabelledExample) {
  TempDir tmp;
  write_file(tmp.file("a.csv"), "1.0,2.0,0\n3.0,4.0,1");
  const auto ds = load_csv(tmp.file("a.csv"), 2);
  ASSERT_EQ(ds.records(), 2u);
  EXPECT_EQ(ds.features.cols(), 2u);
  EXPECT_EQ(*ds.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(ds.features(1, 0), 3.0);
  EXPECT_EQ(ds.features(1, 1), 4.0);
  EXPECT_EQ(ds.train.size(), 2u);
}

TEST(LoadCsv, LabelColumnMayBeFirst) {
  TempDir tmp;
  write_file(tmp.file("a.csv"), "5,0.5,0.25\n-1,1.5,2\n");
  const auto ds = load_csv(tmp.file("a.csv"), 0);
  EXPECT_EQ(*ds.labels, (std::vector<int>{5, -1}));
  EXPECT_EQ(ds.features(0, 1), 0.25);
}

TEST(LoadCsv, HeaderIsDetected) {
  TempDir tmp;
  write_file(tmp.file("h.csv"), "x, y\r\n1,2\r\n3,4\r\n");
  const auto ds = load_csv(tmp.file("h.csv"));
  EXPECT_EQ(ds.records(), 2u);
  EXPECT_FALSE(ds.labels.has_value());
  EXPECT_EQ(ds.features(0, 1), 2.0);
}

TEST(LoadCsv, EmptyFileHasNoRecords) {
  TempDir tmp;
  write_file(tmp.file("e.csv"), "");
  EXPECT_NE(error_of([&] { load_csv(tmp.file("e.csv")); }).find("no records"), std::string::npos);
  write_file(tmp.file("h.csv"), "a,b\n");
  EXPECT_NE(error_of([&] { load_csv(tmp.file("h.csv")); }).find("no records"), std::string::npos);
}

TEST(LoadCsv, ErrorsCarryLineNumbers) {
  TempDir tmp;
  const auto f = tmp.file("bad.csv");
  write_file(f, "1,2\n3,4\n5\n");
  EXPECT_NE(error_of([&] { load_csv(f); }).find("bad.csv:3:"), std::string::npos);
  write_file(f, "1,2\n3,x\n");
  const auto msg = error_of([&] { load_csv(f); });
  EXPECT_NE(msg.find(":2:"), std::string::npos);
  EXPECT_NE(msg.find("non-numeric"), std::string::npos);
  write_file(f, "1,2\n3,4\n");
  EXPECT_NE(error_of([&] { load_csv(f, 2); }).find(":1: label column 2 missing"), std::string::npos);
  write_file(f, "1,2\n3,0.5\n");
  EXPECT_NE(error_of([&] { load_csv(f, 1); }).find(":2: label"), std::string::npos);
  write_file(f, "1,inf\n");
  EXPECT_NE(error_of([&] { load_csv(f); }).find(":1: non-finite"), std::string::npos);
  EXPECT_NE(error_of([&] { load_csv(tmp.file("missing.csv")); }).find("cannot open"), std::string::npos);
}

TEST(LoadCsv, RoundTripsExactly) {
  TempDir tmp;
  Rng rng(11);
  Dataset src;
  src.features = Matrix(100, 4);
  for (double& v : src.features.data()) v = rng.normal(0.0, 1e3) * std::pow(10.0, rng.normal(0.0, 3.0));
  std::vector<int> labels(100);
  for (int& y : labels) y = static_cast<int>(rng.uniform_index(10));
  src.labels = labels;
  write_csv(tmp.file("rt.csv"), src, 1, {"a", "label", "b", "c", "d"});
  const auto back = load_csv(tmp.file("rt.csv"), 1);
  EXPECT_EQ(back.features, src.features);
  EXPECT_EQ(back.labels, src.labels);
}

TEST(FormatNumber, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(2.0), "2");
  for (double v : {1.0 / 3.0, -2.5e-300, 6.02214076e23, 1.7976931348623157e308}) EXPECT_EQ(std::stod(format_number(v)), v);
}

TEST(LoadIdx, ScalesBytes) {
  TempDir tmp;
  write_bytes(tmp.file("img"), {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255, 0});
  const auto ds = load_idx(tmp.file("img"));
  ASSERT_EQ(ds.records(), 1u);
  ASSERT_EQ(ds.features.cols(), 4u);
  EXPECT_EQ(ds.features(0, 0), 0.0);
  EXPECT_EQ(ds.features(0, 1), 128.0 / 255.0);
  EXPECT_EQ(ds.features(0, 2), 1.0);
  EXPECT_EQ(ds.features(0, 3), 0.0);
}

TEST(LoadIdx, LabelCountMismatch) {
  TempDir tmp;
  write_bytes(tmp.file("img"), {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255, 0});
  write_bytes(tmp.file("lab"), {0, 0, 8, 1, 0, 0, 0, 2, 3, 4});
  const auto msg = error_of([&] { load_idx(tmp.file("img"), tmp.file("lab")); });
  EXPECT_NE(msg.find("2 labels for 1 images"), std::string::npos) << msg;
}

TEST(LoadIdx, MalformedFiles) {
  TempDir tmp;
  const auto f = tmp.file("x");
  write_bytes(f, {1, 0, 8, 1, 0, 0, 0, 1, 7});
  EXPECT_NE(error_of([&] { load_idx(f); }).find("magic"), std::string::npos);
  write_bytes(f, {0, 0, 0x0d, 1, 0, 0, 0, 1, 7, 7, 7, 7});
  EXPECT_NE(error_of([&] { load_idx(f); }).find("dtype"), std::string::npos);
  write_bytes(f, {0, 0, 8, 2, 0, 0, 0, 2});
  EXPECT_NE(error_of([&] { load_idx(f); }).find("truncated IDX header"), std::string::npos);
  write_bytes(f, {0, 0, 8, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  EXPECT_NE(error_of([&] { load_idx(f); }).find("truncated IDX payload"), std::string::npos);
  write_bytes(f, {0, 0, 8, 1, 0, 0, 0, 1, 7, 8});
  EXPECT_NE(error_of([&] { load_idx(f); }).find("trailing"), std::string::npos);
}

TEST(LoadIdx, RoundTripsExactly) {
  TempDir tmp;
  Rng rng(5);
  Matrix images(6, 12);
  for (double& v : images.data()) v = static_cast<double>(rng.uniform_index(256)) / 255.0;
  std::vector<int> labels{0, 1, 2, 9, 4, 255};
  write_idx_images(tmp.file("img"), images, {3, 4});
  write_idx_labels(tmp.file("lab"), labels);
  const auto ds = load_idx(tmp.file("img"), tmp.file("lab"));
  EXPECT_EQ(ds.features, images);
  EXPECT_EQ(*ds.labels, labels);
}
