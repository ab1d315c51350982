#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mvod/ops.hpp"
#include "mvod/runtime.hpp"
#include "mvod/tensor.hpp"
#include "mvod/tensor_io.hpp"

using namespace mvod;

TEST(Tensor, IndexingIsRowMajorNCHW) {
  Tensor t(Shape{2, 3, 4, 5});
  t(1, 2, 3, 4) = 7.f;
  EXPECT_EQ(t[t.offset(1, 2, 3, 4)], 7.f);
  EXPECT_EQ(t.offset(1, 2, 3, 4), ((1 * 3 + 2) * 4 + 3) * 5 + 4);
}

TEST(Tensor, RejectsInvalidShapes) {
  EXPECT_THROW(Tensor(Shape{0, 1, 1, 1}), ShapeError);
  EXPECT_THROW(Tensor(Shape{1, -2, 1, 1}), ShapeError);
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  Tensor t(Shape{1, 2, 3, 4});
  std::iota(t.values().begin(), t.values().end(), 0.f);
  const Tensor r = t.reshaped({2, 3, 4, 1});
  EXPECT_TRUE(std::equal(r.values().begin(), r.values().end(), t.values().begin()));
  EXPECT_THROW((void)t.reshaped({1, 1, 1, 5}), ShapeError);
}

TEST(Tensor, SliceBatch) {
  Tensor t(Shape{3, 1, 2, 2});
  std::iota(t.values().begin(), t.values().end(), 0.f);
  const Tensor s = t.slice_batch(2);
  EXPECT_EQ(s.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(s(0, 0, 1, 1), 11.f);
}

TEST(Tensor, CastRoundTrip) {
  Tensor t(Shape{1, 1, 1, 3}, {1.5f, -2.f, 0.25f});
  EXPECT_EQ(t.cast<double>().cast<float>(), t);
}

TEST(TensorIo, StreamRoundTrip) {
  std::stringstream ss;
  Tensor a(Shape{1, 3, 2, 2}, 0.5f), b(Shape{2, 1, 1, 3}, -1.f);
  write_tensor(ss, a);
  write_tensor(ss, b);
  auto ra = read_tensor(ss), rb = read_tensor(ss), end = read_tensor(ss);
  ASSERT_TRUE(ra && rb);
  EXPECT_EQ(*ra, a);
  EXPECT_EQ(*rb, b);
  EXPECT_FALSE(end.has_value());
}

TEST(TensorIo, TruncatedRecordIsAnError) {
  std::stringstream full;
  write_tensor(full, Tensor(Shape{1, 1, 4, 4}, 1.f));
  const std::string bytes = full.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_tensor(cut), FormatError);
  std::stringstream bad("XXXX0000000000000000");
  EXPECT_THROW(read_tensor(bad), FormatError);
}

TEST(TensorIo, FileHelpers) {
  const auto p = std::filesystem::temp_directory_path() / "mvod_tensor_io_test.tnsr";
  Tensor t(Shape{1, 2, 3, 4}, 2.f);
  save_tensor(p, t);
  EXPECT_EQ(load_tensor(p), t);
  EXPECT_EQ(load_tensor_stream(p).size(), 1u);
  std::filesystem::remove(p);
  EXPECT_THROW(load_tensor(p), FormatError);
}

TEST(Runtime, ParallelForVisitsEveryIndexOnce) {
  const int before = runtime::thread_count();
  for (int threads : {1, 3, 8}) {
    runtime::set_thread_count(threads);
    std::vector<int> hits(1000, 0);
    runtime::parallel_for(0, 1000, [&](int i) { hits[static_cast<std::size_t>(i)] += 1; });
    EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 1000);
  }
  runtime::set_thread_count(before);
}

TEST(Runtime, ConvResultsIndependentOfThreadCount) {
  Tensor x(Shape{2, 4, 9, 11});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(std::sin(0.37 * i));
  ConvParams<float> p{Tensor(Shape{6, 4, 3, 3}), std::vector<float>(6, 0.1f), {1, 1, 1}};
  for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] = static_cast<float>(std::cos(0.11 * i));
  const int before = runtime::thread_count();
  runtime::set_thread_count(1);
  const Tensor a = conv2d(x, p);
  runtime::set_thread_count(4);
  const Tensor b = conv2d(x, p);
  runtime::set_thread_count(before);
  EXPECT_EQ(a, b);
}
