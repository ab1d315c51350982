#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mvod/ops.hpp"
#include "mvod/pipeline.hpp"
#include "mvod/tensor_io.hpp"

namespace mvod {

namespace fs = std::filesystem;

namespace {

Tensor read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw FormatError(path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError(path.string() + ": " + img.message);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Tensor t({1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t(0, c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.f;
  return t;
}

// next whitespace-delimited header token, skipping # comments
std::string ppm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const std::string magic = ppm_token(is);
  if (magic != "P6" && magic != "P3") throw FormatError(path.string() + ": not a P3/P6 PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(is));
    h = std::stoi(ppm_token(is));
    maxval = std::stoi(ppm_token(is));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw FormatError(path.string() + ": bad PPM dimensions");
  Tensor t({1, 3, h, w});
  const bool wide = maxval > 255;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        int v = 0;
        if (magic == "P3") {
          const auto tok = ppm_token(is);
          if (tok.empty()) throw FormatError(path.string() + ": truncated PPM");
          v = std::stoi(tok);
        } else if (wide) {
          const int hi = is.get(), lo = is.get();
          if (lo == EOF) throw FormatError(path.string() + ": truncated PPM");
          v = hi * 256 + lo;
        } else {
          v = is.get();
          if (v == EOF) throw FormatError(path.string() + ": truncated PPM");
        }
        t(0, c, y, x) = static_cast<float>(v) / static_cast<float>(maxval);
      }
  return t;
}

std::string lower_ext(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

// numeric value of the last digit run in the stem, or -1
long long frame_number(const fs::path& p) {
  const auto stem = p.stem().string();
  auto end = stem.find_last_of("0123456789");
  if (end == std::string::npos) return -1;
  auto begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(stem[begin - 1]))) --begin;
  return std::stoll(stem.substr(begin, end - begin + 1));
}

}  // namespace

Tensor read_image(const fs::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pnm") return read_ppm(path);
  throw FormatError(path.string() + ": unsupported image type");
}

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.n() != 1 || image.c() != 3) throw ShapeError("write_ppm: expected (1, 3, h, w), got " + image.shape().str());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "P6\n" << image.w() << ' ' << image.h() << "\n255\n";
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image(0, c, y, x), 0.f, 1.f);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.f))));
      }
  if (!os) throw FormatError("write failed: " + path.string());
}

std::pair<int, int> resized_dims(int h, int w, int shorter_side) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("resized_dims: empty image");
  if (shorter_side <= 0) return {h, w};
  const double s = static_cast<double>(shorter_side) / std::min(h, w);
  if (h <= w) return {shorter_side, std::max(1, static_cast<int>(std::lround(w * s)))};
  return {std::max(1, static_cast<int>(std::lround(h * s))), shorter_side};
}

int padded_dim(int v, int multiple) {
  if (multiple <= 1) return v;
  return (v + multiple - 1) / multiple * multiple;
}

Frame prepare_frame(const Tensor& raw, int index, const FrameOptions& opts) {
  if (raw.n() != 1 || raw.c() != 3)
    throw ShapeError("frame: expected (1, 3, h, w), got " + raw.shape().str());
  if (opts.std <= 0.f) throw std::invalid_argument("frame: standardization std must be positive");
  Frame f;
  f.index = index;
  f.source_h = raw.h();
  f.source_w = raw.w();
  const auto [h, w] = resized_dims(raw.h(), raw.w(), opts.shorter_side);
  f.content_h = h;
  f.content_w = w;
  f.scale = static_cast<double>(h) / raw.h();
  const Tensor resized = (h == raw.h() && w == raw.w()) ? raw : resize_bilinear(raw, h, w);
  const int ph = padded_dim(h, opts.pad_multiple), pw = padded_dim(w, opts.pad_multiple);
  f.image = Tensor({1, 3, ph, pw});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        f.image(0, c, y, x) = (resized(0, c, y, x) - opts.mean) / opts.std;
  return f;
}

struct FrameSequence::Impl {
  FrameOptions opts;
  std::vector<fs::path> files;
  std::size_t next_file = 0;
  std::unique_ptr<std::ifstream> stream;
  fs::path source;
  int index = 0;
  int src_h = -1, src_w = -1;
};

FrameSequence::FrameSequence(const fs::path& source, FrameOptions opts) : impl_(std::make_unique<Impl>()) {
  impl_->opts = opts;
  impl_->source = source;
  if (fs::is_directory(source)) {
    for (const auto& e : fs::directory_iterator(source)) {
      if (!e.is_regular_file()) continue;
      const auto ext = lower_ext(e.path());
      if (ext == ".png" || ext == ".ppm" || ext == ".pnm") impl_->files.push_back(e.path());
    }
    std::sort(impl_->files.begin(), impl_->files.end(), [](const fs::path& a, const fs::path& b) {
      const auto na = frame_number(a), nb = frame_number(b);
      if (na != nb) return na < nb;
      return a.filename() < b.filename();
    });
  } else if (fs::is_regular_file(source)) {
    impl_->stream = std::make_unique<std::ifstream>(source, std::ios::binary);
    if (!*impl_->stream) throw FormatError("cannot open " + source.string());
  } else {
    throw FormatError("frame source not found: " + source.string());
  }
}

FrameSequence::~FrameSequence() = default;
FrameSequence::FrameSequence(FrameSequence&&) noexcept = default;
FrameSequence& FrameSequence::operator=(FrameSequence&&) noexcept = default;

int FrameSequence::size_hint() const {
  return impl_->stream ? -1 : static_cast<int>(impl_->files.size());
}

std::optional<Frame> FrameSequence::next() {
  Impl& s = *impl_;
  std::optional<Tensor> raw;
  std::string where;
  if (s.stream) {
    raw = read_tensor(*s.stream);
    where = s.source.string() + " record " + std::to_string(s.index);
  } else if (s.next_file < s.files.size()) {
    where = s.files[s.next_file].string();
    raw = read_image(s.files[s.next_file++]);
  }
  if (!raw) return std::nullopt;
  if (raw->n() != 1 || raw->c() != 3)
    throw FormatError(where + ": expected a (1, 3, h, w) frame, got " + raw->shape().str());
  if (s.src_h < 0) {
    s.src_h = raw->h();
    s.src_w = raw->w();
  } else if (raw->h() != s.src_h || raw->w() != s.src_w) {
    throw FormatError(where + ": frame size " + std::to_string(raw->h()) + "x" + std::to_string(raw->w()) +
                      " differs from the sequence's " + std::to_string(s.src_h) + "x" +
                      std::to_string(s.src_w));
  }
  return prepare_frame(*raw, s.index++, s.opts);
}

FrameSequence load_frame_sequence(const fs::path& source, FrameOptions opts) {
  return FrameSequence(source, opts);
}

}  // namespace mvod
