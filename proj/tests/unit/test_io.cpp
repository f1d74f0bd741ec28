#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "qmc/error.hpp"
#include "qmc/io.hpp"
#include "qmc/random.hpp"

using namespace qmc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qmc_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

std::vector<Frame> random_frames(int w, int h, int n) {
  Engine rng = make_stream(5, 0);
  std::vector<Frame> out;
  for (int i = 0; i < n; ++i) {
    Frame f(w, h);
    for (auto& v : f) v = static_cast<std::uint16_t>(rng() & 0xFFFF);
    out.push_back(f);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::config;
}

}  // namespace

TEST(Pgm, RoundTrip16Bit) {
  TempDir d;
  Grid2D<std::uint16_t> px(7, 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint16_t>(i * 3000);
  write_pgm(d / "a.pgm", px);
  const PgmImage back = read_pgm(d / "a.pgm");
  EXPECT_EQ(back.pixels, px);
  EXPECT_EQ(back.maxval, 65535);
}

TEST(Pgm, RoundTrip8Bit) {
  TempDir d;
  Grid2D<std::uint16_t> px(5, 5, 200);
  write_pgm(d / "a.pgm", px, 255);
  EXPECT_EQ(read_pgm(d / "a.pgm").pixels, px);
}

TEST(Pgm, Malformed) {
  TempDir d;
  { std::ofstream(d / "x.pgm") << "P5\n4 4\n255\nab"; }
  EXPECT_EQ(code_of([&] { read_pgm(d / "x.pgm"); }), ErrorCode::format);
  EXPECT_EQ(code_of([&] { read_pgm(d / "missing.pgm"); }), ErrorCode::io);
}

TEST(Qfs, RoundTrip) {
  TempDir d;
  const auto frames = random_frames(6, 4, 5);
  {
    QfsWriter w(d / "s.qfs", 6, 4, 5);
    for (const auto& f : frames) w.write(f);
    w.close();
  }
  EXPECT_EQ(fs::file_size(d / "s.qfs"), 20u + 2u * 6 * 4 * 5);
  QfsReader r(d / "s.qfs");
  EXPECT_EQ(r.header().width, 6u);
  EXPECT_TRUE(r.header().split());
  EXPECT_EQ(r.read_all(), frames);
}

TEST(Qfs, LittleEndianLayout) {
  TempDir d;
  Frame f(2, 1);
  f(0, 0) = 0x0102;
  f(1, 0) = 0xA0B0;
  {
    QfsWriter w(d / "s.qfs", 2, 1, 1);
    w.write(f);
    w.close();
  }
  const std::string bytes = slurp(d / "s.qfs");
  ASSERT_EQ(bytes.size(), 24u);
  EXPECT_EQ(bytes.substr(0, 4), "QFS1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 0x02);
  EXPECT_EQ(static_cast<unsigned char>(bytes[21]), 0x01);
}

TEST(Qfs, TruncatedFileRejected) {
  TempDir d;
  {
    QfsWriter w(d / "s.qfs", 2, 2, 2);
    for (const auto& f : random_frames(2, 2, 2)) w.write(f);
    w.close();
  }
  fs::resize_file(d / "s.qfs", fs::file_size(d / "s.qfs") - 3);
  EXPECT_EQ(code_of([&] { QfsReader r(d / "s.qfs"); }), ErrorCode::format);
}

TEST(Qfs, BadMagicAndShortWrite) {
  TempDir d;
  { std::ofstream(d / "x.qfs") << "NOPE0000000000000000"; }
  EXPECT_EQ(code_of([&] { QfsReader r(d / "x.qfs"); }), ErrorCode::format);
  EXPECT_EQ(code_of([&] {
              QfsWriter w(d / "y.qfs", 2, 2, 3);
              w.write(Frame(2, 2));
              w.close();
            }),
            ErrorCode::io);
  EXPECT_EQ(code_of([&] {
              QfsWriter w(d / "z.qfs", 2, 2, 1);
              w.write(Frame(3, 2));
            }),
            ErrorCode::shape_mismatch);
}

TEST(Qci, RoundTripExact) {
  TempDir d;
  Image img(3, 2);
  img[0] = -1.5e-7;
  img[1] = 3.25;
  img[5] = 1e300;
  write_qci(d / "a.qci", img);
  EXPECT_EQ(fs::file_size(d / "a.qci"), 16u + 8u * 6);
  EXPECT_EQ(read_qci(d / "a.qci"), img);
}

TEST(Fits, RoundTripAndHeader) {
  TempDir d;
  const auto frames = random_frames(8, 3, 4);
  {
    FitsWriter w(d / "a.fits", 8, 3, 4);
    for (const auto& f : frames) w.write(f);
    w.close();
  }
  const std::string bytes = slurp(d / "a.fits");
  EXPECT_EQ(bytes.size() % 2880, 0u);
  EXPECT_EQ(bytes.substr(0, 30), "SIMPLE  =                    T");
  EXPECT_NE(bytes.find("BITPIX  =                   16"), std::string::npos);
  EXPECT_NE(bytes.find("NAXIS3  =                    4"), std::string::npos);
  EXPECT_NE(bytes.find("BZERO   =                32768"), std::string::npos);
  FitsReader r(d / "a.fits");
  EXPECT_EQ(r.width(), 8);
  EXPECT_EQ(r.height(), 3);
  EXPECT_EQ(r.n_frames(), 4u);
  std::vector<Frame> back;
  Frame f;
  while (r.read(f)) back.push_back(f);
  EXPECT_EQ(back, frames);
}

TEST(Fits, NotFits) {
  TempDir d;
  { std::ofstream(d / "x.fits") << std::string(2880, ' '); }
  EXPECT_EQ(code_of([&] { FitsReader r(d / "x.fits"); }), ErrorCode::format);
}

TEST(MetricsCsv, HeaderAndRows) {
  TempDir d;
  {
    MetricsCsv csv(d / "m.csv");
    csv.row("cnr", 1.5, 0.25, 10, "seed=1");
  }
  EXPECT_EQ(slurp(d / "m.csv"), "metric,value,sem,n,params\ncnr,1.5,0.25,10,seed=1\n");
  std::ostringstream out;
  MetricsCsv s(out);
  s.row("x", 2, 0, 1);
  EXPECT_EQ(out.str(), "metric,value,sem,n,params\nx,2,0,1,\n");
}
