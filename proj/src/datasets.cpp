#include "hyperkernel/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace hyperkernel {

Vector ImageSet::image_vector(int image) const {
  const std::size_t n = pixels_per_image();
  Vector v(static_cast<Eigen::Index>(n));
  const std::uint8_t* p = pixels.data() + image * n;
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = p[i] / 255.0;
  return v;
}

void ImageSet::check() const {
  if (count < 0 || rows < 1 || cols < 1 ||
      pixels.size() != static_cast<std::size_t>(count) * pixels_per_image())
    throw DimensionMismatch("ImageSet: byte count does not match count x rows x cols");
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void check_magic(std::span<const std::uint8_t> bytes, std::uint32_t expected) {
  if (bytes.size() < 4) throw Truncated("IDX: file shorter than its magic number");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected) {
    std::ostringstream os;
    os << "IDX: magic 0x" << std::hex << magic << ", expected 0x" << expected;
    throw BadMagic(os.str());
  }
}

}  // namespace

ImageSet parse_idx(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kIdxImageMagic);
  if (bytes.size() < 16) throw Truncated("IDX: header truncated");
  ImageSet set;
  set.count = static_cast<int>(read_be32(bytes, 4));
  set.rows = static_cast<int>(read_be32(bytes, 8));
  set.cols = static_cast<int>(read_be32(bytes, 12));
  const std::size_t need = static_cast<std::size_t>(set.count) * set.pixels_per_image();
  if (bytes.size() - 16 < need)
    throw Truncated("IDX: expected " + std::to_string(need) + " pixel bytes, found " +
                    std::to_string(bytes.size() - 16));
  set.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return set;
}

std::vector<std::uint8_t> serialize_idx(const ImageSet& images) {
  images.check();
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.count));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

ImageSet load_idx(const std::filesystem::path& path) { return parse_idx(read_file(path)); }

void write_idx(const std::filesystem::path& path, const ImageSet& images) {
  write_file(path, serialize_idx(images));
}

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  check_magic(bytes, kIdxLabelMagic);
  if (bytes.size() < 8) throw Truncated("IDX1: header truncated");
  const std::size_t n = read_be32(bytes, 4);
  if (bytes.size() - 8 < n) throw Truncated("IDX1: fewer labels than declared");
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  write_file(path, out);
}

ImageSet synthetic_images(int count, int size, std::uint64_t seed) {
  if (size < 4) throw Error("synthetic_images: size must be >= 4");
  if (count < 0) throw Error("synthetic_images: negative count");
  ImageSet set{count, size, size, {}};
  set.pixels.resize(static_cast<std::size_t>(count) * size * size);
  for (int i = 0; i < count; ++i) {
    Rng rng(seed, 0x696d67 + static_cast<std::uint64_t>(i));
    std::uint8_t* img = set.pixels.data() + static_cast<std::size_t>(i) * size * size;
    for (int p = 0; p < size * size; ++p)
      img[p] = static_cast<std::uint8_t>(rng.uniform_index(kDarkMax + 1));
    const int n_rect = 1 + static_cast<int>(rng.uniform_index(3));
    for (int r = 0; r < n_rect; ++r) {
      // Side lengths in [2, size/2] keep the image from being fully covered.
      const int h = 2 + static_cast<int>(rng.uniform_index(size / 2 - 1));
      const int w = 2 + static_cast<int>(rng.uniform_index(size / 2 - 1));
      const int top = static_cast<int>(rng.uniform_index(size - h + 1));
      const int left = static_cast<int>(rng.uniform_index(size - w + 1));
      const auto level = static_cast<std::uint8_t>(kBrightMin + rng.uniform_index(256 - kBrightMin));
      for (int y = top; y < top + h; ++y)
        for (int x = left; x < left + w; ++x) img[y * size + x] = level;
    }
    // Three rectangles of side <= size/2 cannot cover the image; kept as a guard.
    if (std::none_of(img, img + size * size, [](std::uint8_t v) { return v <= kDarkMax; }))
      img[0] = 0;
  }
  return set;
}

TaskMode parse_task_mode(const std::string& s) {
  if (s == "representation") return TaskMode::representation;
  if (s == "inpainting") return TaskMode::inpainting;
  throw ConfigError("unknown task mode '" + s + "' (expected representation or inpainting)");
}

std::string to_string(TaskMode mode) {
  return mode == TaskMode::representation ? "representation" : "inpainting";
}

Vector meta_input(const ImageSet& images, int image, TaskMode mode) {
  Vector v = images.image_vector(image);
  if (mode == TaskMode::inpainting) {
    for (int r = 0; r < images.rows; ++r)
      for (int c = images.cols / 2; c < images.cols; ++c) v[r * images.cols + c] = 0.0;
  }
  return v;
}

CoordinateEncoder::CoordinateEncoder(const ImageSet& images, const TaskConfig& cfg)
    : rows_(images.rows), cols_(images.cols), scale_(cfg.coord_scale) {
  if (cfg.fourier_k < 0) throw Error("fourier_k must be >= 0");
  if (cfg.fourier_k > 0) fourier_.emplace(2, cfg.fourier_k, cfg.seed);
}

Vector CoordinateEncoder::operator()(int row, int col) const {
  Vector c(2);
  c << scale_ * row / std::max(1, rows_ - 1), scale_ * col / std::max(1, cols_ - 1);
  return fourier_ ? (*fourier_)(c) : c;
}

int CoordinateEncoder::dim() const { return fourier_ ? fourier_->k() : 2; }

namespace {

PixelSample make_sample(const ImageSet& images, int image, int row, int col, const Vector& x,
                        const CoordinateEncoder& enc) {
  PixelSample s;
  s.u = {x, enc(row, col), image};
  s.y = images.value(image, row, col);
  s.image_id = image;
  s.row = row;
  s.col = col;
  return s;
}

void check_ids(const ImageSet& images, std::span<const int> ids) {
  for (int id : ids)
    if (id < 0 || id >= images.count)
      throw Error("image id " + std::to_string(id) + " out of range");
}

}  // namespace

PixelTask build_task(const ImageSet& images, std::span<const int> image_ids, const TaskConfig& cfg) {
  images.check();
  check_ids(images, image_ids);
  if (cfg.pixels_per_image < 1) throw Error("pixels_per_image must be >= 1");
  const CoordinateEncoder enc(images, cfg);
  PixelTask task;
  task.mode = cfg.mode;
  task.z_dim = enc.dim();
  Rng rng(cfg.seed, 0x706978);
  for (int id : image_ids) {
    const Vector x = meta_input(images, id, cfg.mode);
    for (int p = 0; p < cfg.pixels_per_image; ++p) {
      const int row = static_cast<int>(rng.uniform_index(images.rows));
      const int col = static_cast<int>(rng.uniform_index(images.cols));
      task.samples.push_back(make_sample(images, id, row, col, x, enc));
    }
  }
  return task;
}

PixelTask build_task(const ImageSet& images, int n_images, const TaskConfig& cfg) {
  if (n_images < 1 || n_images > images.count)
    throw Error("build_task: need 1 <= n_images <= image count");
  std::vector<int> all(images.count);
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> ids;
  Rng rng(cfg.seed, 0x696473);
  std::sample(all.begin(), all.end(), std::back_inserter(ids), n_images, rng.engine());
  return build_task(images, ids, cfg);
}

PixelTask build_eval_task(const ImageSet& images, std::span<const int> image_ids,
                          const TaskConfig& cfg) {
  images.check();
  check_ids(images, image_ids);
  const CoordinateEncoder enc(images, cfg);
  PixelTask task;
  task.mode = cfg.mode;
  task.z_dim = enc.dim();
  for (int id : image_ids) {
    const Vector x = meta_input(images, id, cfg.mode);
    for (int r = 0; r < images.rows; ++r)
      for (int c = 0; c < images.cols; ++c) task.samples.push_back(make_sample(images, id, r, c, x, enc));
  }
  return task;
}

std::string task_to_csv(const PixelTask& task) {
  std::ostringstream os;
  os.precision(17);
  os << "image_id,row,col,label\n";
  for (const auto& s : task.samples) os << s.image_id << ',' << s.row << ',' << s.col << ',' << s.y << '\n';
  return os.str();
}

std::vector<TaskRecord> task_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "image_id,row,col,label")
    throw Error("task CSV: missing header image_id,row,col,label");
  std::vector<TaskRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TaskRecord r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream ls(line);
    if (!(ls >> r.image_id >> c1 >> r.row >> c2 >> r.col >> c3 >> r.label) || c1 != ',' ||
        c2 != ',' || c3 != ',')
      throw Error("task CSV: malformed line '" + line + "'");
    out.push_back(r);
  }
  return out;
}

}  // namespace hyperkernel
