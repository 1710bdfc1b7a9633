#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperkernel/kernels.hpp"
#include "hyperkernel/linalg.hpp"

namespace hyperkernel {

/// Grayscale images stored as raw bytes, image-major then row-major.
struct ImageSet {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t pixels_per_image() const { return static_cast<std::size_t>(rows) * cols; }
  std::uint8_t byte(int image, int row, int col) const {
    return pixels[image * pixels_per_image() + static_cast<std::size_t>(row) * cols + col];
  }
  /// Intensity scaled to [0, 1].
  double value(int image, int row, int col) const { return byte(image, row, col) / 255.0; }
  /// Whole image as a flat vector in [0, 1].
  Vector image_vector(int image) const;
  void check() const;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Big-endian IDX3 image file. Throws BadMagic or Truncated.
ImageSet load_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const ImageSet& images);

/// Big-endian IDX1 label file.
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Parses an in-memory IDX3 buffer (used by load_idx and the tests).
ImageSet parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const ImageSet& images);

inline constexpr int kDarkMax = 55;
inline constexpr int kBrightMin = 200;

/// size x size images: noisy background in [0, kDarkMax] with one to three
/// axis-aligned rectangles in [kBrightMin, 255]. Each image keeps at least one
/// background pixel.
ImageSet synthetic_images(int count, int size, std::uint64_t seed);

enum class TaskMode { representation, inpainting };

TaskMode parse_task_mode(const std::string& s);
std::string to_string(TaskMode mode);

struct TaskConfig {
  int pixels_per_image = 20;
  TaskMode mode = TaskMode::representation;
  int fourier_k = 0;          // 0 keeps the raw (scaled) coordinates
  double coord_scale = 1.0;   // applied after mapping coordinates to [0, 1]^2
  std::uint64_t seed = 0;
};

struct PixelSample {
  HyperInput u;  // u.group holds the image id
  double y = 0.0;
  int image_id = 0;
  int row = 0;
  int col = 0;
};

struct PixelTask {
  TaskMode mode = TaskMode::representation;
  int z_dim = 2;
  std::vector<PixelSample> samples;
};

/// Meta input for one image: the image, with columns >= cols/2 zeroed in
/// inpainting mode.
Vector meta_input(const ImageSet& images, int image, TaskMode mode);

/// Primary input for a pixel: (row, col) / (size - 1) * coord_scale, passed
/// through Fourier features when fourier_k > 0 (seeded by cfg.seed).
class CoordinateEncoder {
 public:
  CoordinateEncoder(const ImageSet& images, const TaskConfig& cfg);
  Vector operator()(int row, int col) const;
  int dim() const;

 private:
  int rows_;
  int cols_;
  double scale_;
  std::optional<FourierMap> fourier_;
};

/// pixels_per_image random pixels (with replacement) from each listed image.
PixelTask build_task(const ImageSet& images, std::span<const int> image_ids, const TaskConfig& cfg);

/// Same, using n_images distinct images chosen at random.
PixelTask build_task(const ImageSet& images, int n_images, const TaskConfig& cfg);

/// Every pixel of every listed image; labels are always the true intensities.
PixelTask build_eval_task(const ImageSet& images, std::span<const int> image_ids,
                          const TaskConfig& cfg);

/// CSV with header image_id,row,col,label.
std::string task_to_csv(const PixelTask& task);

struct TaskRecord {
  int image_id = 0;
  int row = 0;
  int col = 0;
  double label = 0.0;
};
std::vector<TaskRecord> task_from_csv(const std::string& text);

}  // namespace hyperkernel
