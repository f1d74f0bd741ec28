#include "qmc/io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>

#include <boost/endian/conversion.hpp>
#include <fmt/format.h>

#include "qmc/error.hpp"
#include "qmc/source_sim.hpp"

namespace qmc {

namespace fs = std::filesystem;
namespace endian = boost::endian;

namespace {

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  return out;
}

template <class T>
void put_le(std::ostream& out, T v) {
  v = endian::native_to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get_le(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    fail(ErrorCode::format, "'" + path.string() + "' ends inside its header");
  }
  return endian::little_to_native(v);
}

void check_written(const std::ostream& out, const fs::path& path) {
  if (!out) fail(ErrorCode::io, "write to '" + path.string() + "' failed");
}

// PGM header token, skipping whitespace and # comments.
std::string pgm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int c = in.get();
  for (;;) {
    while (c != EOF && std::isspace(c)) c = in.get();
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
      continue;
    }
    break;
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) fail(ErrorCode::format, "'" + path.string() + "': truncated PGM header");
  return tok;
}

int pgm_int(std::istream& in, const fs::path& path) {
  const std::string tok = pgm_token(in, path);
  if (!std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(ch); }) ||
      tok.size() > 9) {
    fail(ErrorCode::format, "'" + path.string() + "': bad PGM header field '" + tok + "'");
  }
  return std::stoi(tok);
}

}  // namespace

PgmImage read_pgm(const fs::path& path) {
  std::ifstream in = open_in(path);
  if (pgm_token(in, path) != "P5") {
    fail(ErrorCode::format, "'" + path.string() + "' is not a binary (P5) PGM");
  }
  const int w = pgm_int(in, path);
  const int h = pgm_int(in, path);
  const int maxval = pgm_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    fail(ErrorCode::format, "'" + path.string() + "': PGM dimensions or maxval out of range");
  }
  // pgm_token consumed the single whitespace after maxval.
  PgmImage img{Grid2D<std::uint16_t>(w, h), maxval};
  const std::size_t bps = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(img.pixels.size() * bps);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    fail(ErrorCode::format, "'" + path.string() + "': PGM pixel data is truncated");
  }
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::uint16_t v = bps == 1 ? raw[i] : static_cast<std::uint16_t>(raw[2 * i] << 8 | raw[2 * i + 1]);
    if (v > maxval) fail(ErrorCode::format, "'" + path.string() + "': PGM sample exceeds maxval");
    img.pixels[i] = v;
  }
  return img;
}

void write_pgm(const fs::path& path, const Grid2D<std::uint16_t>& pixels, int maxval) {
  require(maxval > 0 && maxval <= 65535, ErrorCode::invalid_parameter, "PGM maxval out of range");
  std::ofstream out = open_out(path);
  out << "P5\n" << pixels.width() << ' ' << pixels.height() << '\n' << maxval << '\n';
  const bool wide = maxval >= 256;
  std::vector<unsigned char> raw;
  raw.reserve(pixels.size() * 2);
  for (std::uint16_t v : pixels) {
    v = std::min<std::uint16_t>(v, static_cast<std::uint16_t>(maxval));
    if (wide) raw.push_back(static_cast<unsigned char>(v >> 8));
    raw.push_back(static_cast<unsigned char>(v & 0xFF));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check_written(out, path);
}

void write_pgm_normalized(const fs::path& path, const Image& image) {
  Grid2D<std::uint16_t> px(image.width(), image.height());
  if (!image.empty()) {
    const auto [lo, hi] = std::minmax_element(image.begin(), image.end());
    const double span = *hi - *lo;
    if (span > 0.0) {
      for (std::size_t i = 0; i < image.size(); ++i) {
        px[i] = static_cast<std::uint16_t>(std::lround((image[i] - *lo) / span * 65535.0));
      }
    }
  }
  write_pgm(path, px, 65535);
}

QfsReader::QfsReader(const fs::path& path) : path_(path), in_(open_in(path)) {
  char magic[4];
  if (!in_.read(magic, 4) || std::memcmp(magic, "QFS1", 4) != 0) {
    fail(ErrorCode::format, "'" + path.string() + "' is not a QFS file (bad magic)");
  }
  header_.width = get_le<std::uint32_t>(in_, path);
  header_.height = get_le<std::uint32_t>(in_, path);
  header_.n_frames = get_le<std::uint32_t>(in_, path);
  header_.flags = get_le<std::uint32_t>(in_, path);
  if (header_.width == 0 || header_.height == 0 || header_.width > 65536 || header_.height > 65536) {
    fail(ErrorCode::format, "'" + path.string() + "': implausible QFS dimensions");
  }
  if (header_.split() && header_.width % 2 != 0) {
    fail(ErrorCode::format, "'" + path.string() + "': split QFS frames need an even width");
  }
  const auto expected = 20 + 2ull * header_.width * header_.height * header_.n_frames;
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (!ec && size != expected) {
    fail(ErrorCode::format, "'" + path.string() + "': payload is " + std::to_string(size) +
                                " bytes, header implies " + std::to_string(expected));
  }
  buffer_.resize(2ull * header_.width * header_.height);
}

bool QfsReader::read(Frame& frame) {
  if (next_ >= header_.n_frames) return false;
  if (!in_.read(buffer_.data(), static_cast<std::streamsize>(buffer_.size()))) {
    fail(ErrorCode::format, "'" + path_.string() + "': payload ends at frame " + std::to_string(next_));
  }
  const int w = static_cast<int>(header_.width);
  const int h = static_cast<int>(header_.height);
  if (frame.width() != w || frame.height() != h) frame = Frame(w, h);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    std::uint16_t v;
    std::memcpy(&v, buffer_.data() + 2 * i, 2);
    frame[i] = endian::little_to_native(v);
  }
  ++next_;
  return true;
}

std::vector<Frame> QfsReader::read_all() {
  std::vector<Frame> frames;
  frames.reserve(header_.n_frames - next_);
  Frame f;
  while (read(f)) frames.push_back(f);
  return frames;
}

QfsWriter::QfsWriter(const fs::path& path, std::uint32_t width, std::uint32_t height,
                     std::uint32_t n_frames, std::uint32_t flags)
    : path_(path), out_(open_out(path)), header_{width, height, n_frames, flags} {
  out_.write("QFS1", 4);
  put_le(out_, width);
  put_le(out_, height);
  put_le(out_, n_frames);
  put_le(out_, flags);
  check_written(out_, path_);
  buffer_.resize(2ull * width * height);
}

QfsWriter::~QfsWriter() {
  if (out_.is_open()) out_.close();
}

void QfsWriter::write(const Frame& frame) {
  require(frame.width() == static_cast<int>(header_.width) &&
              frame.height() == static_cast<int>(header_.height),
          ErrorCode::shape_mismatch, "frame does not match the QFS header");
  require(written_ < header_.n_frames, ErrorCode::io, "more frames than the QFS header announces");
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const std::uint16_t v = endian::native_to_little(frame[i]);
    std::memcpy(buffer_.data() + 2 * i, &v, 2);
  }
  out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  check_written(out_, path_);
  ++written_;
}

void QfsWriter::close() {
  require(written_ == header_.n_frames, ErrorCode::io,
          "QFS header announces " + std::to_string(header_.n_frames) + " frames, " +
              std::to_string(written_) + " written");
  out_.close();
  check_written(out_, path_);
}

void write_qci(const fs::path& path, const Image& image) {
  std::ofstream out = open_out(path);
  out.write("QCI1", 4);
  put_le(out, static_cast<std::uint32_t>(image.width()));
  put_le(out, static_cast<std::uint32_t>(image.height()));
  put_le(out, std::uint32_t{0});
  for (double v : image) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(out, bits);
  }
  check_written(out, path);
}

Image read_qci(const fs::path& path) {
  std::ifstream in = open_in(path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "QCI1", 4) != 0) {
    fail(ErrorCode::format, "'" + path.string() + "' is not a QCI file (bad magic)");
  }
  const auto w = get_le<std::uint32_t>(in, path);
  const auto h = get_le<std::uint32_t>(in, path);
  get_le<std::uint32_t>(in, path);
  if (w > 65536 || h > 65536) fail(ErrorCode::format, "'" + path.string() + "': implausible size");
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (double& v : img) {
    std::uint64_t bits;
    if (!in.read(reinterpret_cast<char*>(&bits), 8)) {
      fail(ErrorCode::format, "'" + path.string() + "': QCI payload is truncated");
    }
    bits = endian::little_to_native(bits);
    std::memcpy(&v, &bits, 8);
  }
  return img;
}

namespace {

constexpr std::size_t kFitsBlock = 2880;

std::string fits_card(const std::string& key, const std::string& value) {
  std::string card = fmt::format("{:<8}= {:>20}", key, value);
  card.resize(80, ' ');
  return card;
}

void pad_block(std::ostream& out, std::uint64_t bytes, char fill) {
  const std::uint64_t rem = bytes % kFitsBlock;
  if (rem == 0) return;
  const std::string pad(kFitsBlock - rem, fill);
  out.write(pad.data(), static_cast<std::streamsize>(pad.size()));
}

}  // namespace

FitsWriter::FitsWriter(const fs::path& path, int width, int height, std::uint64_t n_frames)
    : path_(path), out_(open_out(path)), width_(width), height_(height), n_frames_(n_frames) {
  require(width > 0 && height > 0 && n_frames >= 1, ErrorCode::invalid_parameter,
          "FITS export needs a non-empty stack");
  std::string header;
  header += fits_card("SIMPLE", "T");
  header += fits_card("BITPIX", "16");
  header += fits_card("NAXIS", "3");
  header += fits_card("NAXIS1", std::to_string(width));
  header += fits_card("NAXIS2", std::to_string(height));
  header += fits_card("NAXIS3", std::to_string(n_frames));
  header += fits_card("BZERO", "32768");
  header += fits_card("BSCALE", "1");
  std::string end = "END";
  end.resize(80, ' ');
  header += end;
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
  pad_block(out_, header.size(), ' ');
  check_written(out_, path_);
}

FitsWriter::~FitsWriter() {
  if (out_.is_open()) out_.close();
}

void FitsWriter::write(const Frame& frame) {
  require(frame.width() == width_ && frame.height() == height_, ErrorCode::shape_mismatch,
          "frame does not match the FITS axes");
  require(written_ < n_frames_, ErrorCode::io, "more frames than NAXIS3 announces");
  std::vector<char> raw(frame.size() * 2);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const auto stored = static_cast<std::uint16_t>(frame[i] ^ 0x8000u);  // v - 32768 as int16
    raw[2 * i] = static_cast<char>(stored >> 8);
    raw[2 * i + 1] = static_cast<char>(stored & 0xFF);
  }
  out_.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  data_bytes_ += raw.size();
  check_written(out_, path_);
  ++written_;
}

void FitsWriter::close() {
  require(written_ == n_frames_, ErrorCode::io, "FITS stack is missing frames");
  pad_block(out_, data_bytes_, '\0');
  out_.close();
  check_written(out_, path_);
}

FitsReader::FitsReader(const fs::path& path) : path_(path), in_(open_in(path)) {
  int bitpix = 0;
  int naxis = -1;
  std::array<std::int64_t, 3> axes{0, 1, 1};
  double bscale = 1.0;
  bool simple = false;
  bool ended = false;
  std::array<char, kFitsBlock> block;
  std::size_t cards = 0;
  while (!ended) {
    if (!in_.read(block.data(), kFitsBlock)) {
      fail(ErrorCode::format, "'" + path.string() + "': FITS header has no END card");
    }
    for (std::size_t c = 0; c < kFitsBlock / 80 && !ended; ++c, ++cards) {
      const std::string card(block.data() + 80 * c, 80);
      std::string key = card.substr(0, 8);
      key.erase(key.find_last_not_of(' ') + 1);
      if (cards == 0 && key != "SIMPLE") {
        fail(ErrorCode::format, "'" + path.string() + "' is not a FITS file");
      }
      if (key == "END") {
        ended = true;
        break;
      }
      if (card.compare(8, 2, "= ") != 0) continue;
      std::string value = card.substr(10);
      if (const auto slash = value.find('/'); slash != std::string::npos) value.resize(slash);
      value.erase(0, value.find_first_not_of(' '));
      value.erase(value.find_last_not_of(' ') + 1);
      try {
        if (key == "SIMPLE") simple = value == "T";
        else if (key == "BITPIX") bitpix = std::stoi(value);
        else if (key == "NAXIS") naxis = std::stoi(value);
        else if (key == "NAXIS1") axes[0] = std::stoll(value);
        else if (key == "NAXIS2") axes[1] = std::stoll(value);
        else if (key == "NAXIS3") axes[2] = std::stoll(value);
        else if (key == "BZERO") bzero_ = std::stod(value);
        else if (key == "BSCALE") bscale = std::stod(value);
      } catch (const std::exception&) {
        fail(ErrorCode::format, "'" + path.string() + "': unreadable value for " + key);
      }
    }
  }
  if (!simple) fail(ErrorCode::format, "'" + path.string() + "': SIMPLE is not T");
  if (bitpix != 16) {
    fail(ErrorCode::format, "'" + path.string() + "': only BITPIX 16 is supported, got " +
                                std::to_string(bitpix));
  }
  if (naxis != 2 && naxis != 3) {
    fail(ErrorCode::format, "'" + path.string() + "': NAXIS must be 2 or 3");
  }
  if (bscale != 1.0 || (bzero_ != 0.0 && bzero_ != 32768.0)) {
    fail(ErrorCode::format, "'" + path.string() + "': only BSCALE 1 with BZERO 0 or 32768 is supported");
  }
  if (axes[0] <= 0 || axes[1] <= 0 || axes[2] <= 0 || axes[0] > 65536 || axes[1] > 65536) {
    fail(ErrorCode::format, "'" + path.string() + "': bad NAXISn values");
  }
  width_ = static_cast<int>(axes[0]);
  height_ = static_cast<int>(axes[1]);
  n_frames_ = naxis == 3 ? static_cast<std::uint64_t>(axes[2]) : 1;
  buffer_.resize(2ull * width_ * height_);
}

bool FitsReader::read(Frame& frame) {
  if (next_ >= n_frames_) return false;
  if (!in_.read(buffer_.data(), static_cast<std::streamsize>(buffer_.size()))) {
    fail(ErrorCode::format, "'" + path_.string() + "': FITS data ends at frame " + std::to_string(next_));
  }
  if (frame.width() != width_ || frame.height() != height_) frame = Frame(width_, height_);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const auto hi = static_cast<unsigned char>(buffer_[2 * i]);
    const auto lo = static_cast<unsigned char>(buffer_[2 * i + 1]);
    const auto stored = static_cast<std::uint16_t>(hi << 8 | lo);
    if (bzero_ == 32768.0) {
      frame[i] = static_cast<std::uint16_t>(stored ^ 0x8000u);
    } else {
      if (stored & 0x8000u) {
        fail(ErrorCode::format, "'" + path_.string() + "': negative sample without BZERO 32768");
      }
      frame[i] = stored;
    }
  }
  ++next_;
  return true;
}

MetricsCsv::MetricsCsv(const fs::path& path) : file_(open_out(path)), out_(&file_) {
  file_ << kMetricsCsvHeader << '\n';
}

MetricsCsv::MetricsCsv(std::ostream& out) : out_(&out) { out << kMetricsCsvHeader << '\n'; }

void MetricsCsv::row(const std::string& metric, double value, double sem, std::uint64_t n,
                     const std::string& params) {
  *out_ << fmt::format("{},{},{},{},{}\n", metric, value, sem, n, params);
  out_->flush();
  if (!*out_) fail(ErrorCode::io, "metrics CSV write failed");
}

void write_ledger_csv(const fs::path& path, const PairLedger& ledger) {
  std::ofstream out = open_out(path);
  out << "pair_id,frame,rho_x_um,rho_y_um,psx,psy,pix,piy,transmitted,registered\n";
  std::uint64_t id = 0;
  for (const PairRecord& r : ledger.records()) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", id++, r.frame, r.rho_um.x, r.rho_um.y,
                       r.signal.x, r.signal.y, r.idler.x, r.idler.y, int{r.transmitted},
                       int{r.registered});
  }
  check_written(out, path);
}

}  // namespace qmc
