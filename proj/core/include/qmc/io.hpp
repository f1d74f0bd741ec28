#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qmc/types.hpp"

namespace qmc {

class PairLedger;

struct PgmImage {
  Grid2D<std::uint16_t> pixels;
  int maxval = 255;
};

/// Binary (P5) PGM, 8- or 16-bit (big-endian samples). Throws format.
PgmImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Grid2D<std::uint16_t>& pixels,
               int maxval = 65535);
/// Min/max stretched to 0..65535.
void write_pgm_normalized(const std::filesystem::path& path, const Image& image);

/// QFS: "QFS1", u32 width, height, n_frames, flags; then n_frames x height x
/// width u16. Everything little-endian.
struct QfsHeader {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t n_frames = 0;
  std::uint32_t flags = 0;

  static constexpr std::uint32_t kSplitFlag = 1u;
  bool split() const noexcept { return (flags & kSplitFlag) != 0; }
};

class QfsReader {
 public:
  explicit QfsReader(const std::filesystem::path& path);

  const QfsHeader& header() const noexcept { return header_; }
  /// Reads the next frame; false at the end of the payload.
  bool read(Frame& frame);
  std::vector<Frame> read_all();
  std::uint64_t frames_read() const noexcept { return next_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  QfsHeader header_;
  std::uint64_t next_ = 0;
  std::vector<char> buffer_;
};

class QfsWriter {
 public:
  QfsWriter(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
            std::uint32_t n_frames, std::uint32_t flags = QfsHeader::kSplitFlag);
  ~QfsWriter();
  QfsWriter(const QfsWriter&) = delete;
  QfsWriter& operator=(const QfsWriter&) = delete;

  void write(const Frame& frame);
  /// Throws io when fewer frames than announced were written.
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  QfsHeader header_;
  std::uint64_t written_ = 0;
  std::vector<char> buffer_;
};

/// Raw f64 sidecar: "QCI1", u32 width, u32 height, u32 reserved; values
/// little-endian row-major.
void write_qci(const std::filesystem::path& path, const Image& image);
Image read_qci(const std::filesystem::path& path);

/// FITS primary HDU, BITPIX 16 with BZERO 32768 (unsigned convention).
/// NAXIS 3 for a stack; NAXIS1 is the fast (x) axis.
class FitsWriter {
 public:
  FitsWriter(const std::filesystem::path& path, int width, int height, std::uint64_t n_frames);
  ~FitsWriter();
  FitsWriter(const FitsWriter&) = delete;
  FitsWriter& operator=(const FitsWriter&) = delete;

  void write(const Frame& frame);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  int width_;
  int height_;
  std::uint64_t n_frames_;
  std::uint64_t written_ = 0;
  std::uint64_t data_bytes_ = 0;
};

/// Reads 16-bit integer primary HDUs (NAXIS 2 or 3). Signed data without
/// BZERO 32768 must be non-negative.
class FitsReader {
 public:
  explicit FitsReader(const std::filesystem::path& path);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::uint64_t n_frames() const noexcept { return n_frames_; }
  bool read(Frame& frame);

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  int width_ = 0;
  int height_ = 0;
  std::uint64_t n_frames_ = 0;
  std::uint64_t next_ = 0;
  double bzero_ = 0.0;
  std::vector<char> buffer_;
};

/// metric,value,sem,n,params
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::filesystem::path& path);
  /// Writes to a caller-owned stream such as std::cout.
  explicit MetricsCsv(std::ostream& out);
  void row(const std::string& metric, double value, double sem, std::uint64_t n,
           const std::string& params = "");

 private:
  std::ofstream file_;
  std::ostream* out_;
};

inline constexpr const char* kMetricsCsvHeader = "metric,value,sem,n,params";

/// pair_id,frame,rho_x_um,rho_y_um,psx,psy,pix,piy,transmitted,registered;
/// missing pixels are -1.
void write_ledger_csv(const std::filesystem::path& path, const PairLedger& ledger);

}  // namespace qmc
