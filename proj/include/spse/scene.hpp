#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "spse/autodiff.hpp"
#include "spse/tensor.hpp"

namespace spse {

/// Wrap an azimuth in degrees into [-180, 180).
double normalize_azimuth(double degrees);

struct View {
  explicit View(double azimuth_degrees = 0.0, std::size_t image_size = 16);

  double azimuth;  // degrees, in [-180, 180)
  std::size_t image_size;
};

/// Editable object: a density grid [N,N,N] (geometry) and an RGB grid
/// [N,N,N,3] (texture), both with entries in [0, 1].
///
/// Grid element (x, y, z) lives at flat index (x * N + y) * N + z; y is the
/// vertical axis and z points away from a camera at azimuth 0. Copies are deep.
class VoxelScene {
 public:
  explicit VoxelScene(std::size_t grid_size = 16);
  VoxelScene(Tensor density, Tensor color);

  VoxelScene(const VoxelScene& other);
  VoxelScene& operator=(const VoxelScene& other);
  VoxelScene(VoxelScene&&) noexcept = default;
  VoxelScene& operator=(VoxelScene&&) noexcept = default;

  std::size_t grid_size() const noexcept { return n_; }

  Var& density() noexcept { return density_; }
  const Var& density() const noexcept { return density_; }
  Var& color() noexcept { return color_; }
  const Var& color() const noexcept { return color_; }

  /// Clamp every entry of both grids into [0, 1].
  void clamp();

 private:
  std::size_t n_;
  Var density_;
  Var color_;
};

/// Flat index helpers for the layouts above.
inline std::size_t voxel_index(std::size_t n, std::size_t x, std::size_t y, std::size_t z) {
  return (x * n + y) * n + z;
}
inline std::size_t pixel_index(std::size_t m, std::size_t row, std::size_t col) { return row * m + col; }

/// Trilinear resampling weights mapping a grid of extent N to an M x M x N
/// view-aligned sample lattice rotated by the given azimuth about the vertical
/// axis. Sample (row, col, k) lives at flat index (row * M + col) * N + k,
/// with k increasing away from the camera. Each sample has up to 8 taps;
/// missing taps carry weight 0.
struct ResampleStencil {
  std::size_t grid_size = 0;
  std::size_t image_size = 0;
  std::vector<std::uint32_t> index;  // 8 per sample
  std::vector<double> weight;        // 8 per sample

  std::size_t samples() const noexcept { return weight.size() / 8; }
};

ResampleStencil make_stencil(std::size_t grid_size, std::size_t image_size, double azimuth_degrees);

/// Resample a [N,N,N] or [N,N,N,C] grid so that the result seen at azimuth 0
/// equals the input seen at `azimuth_degrees`.
Tensor rotate_grid(const Tensor& grid, double azimuth_degrees);

/// Far-plane prior weight in the expected-depth ratio; keeps nearly empty rays
/// pinned to depth 1 with bounded gradients.
inline constexpr double kDepthBackgroundWeight = 1e-4;

/// Alpha-composited coverage 1 - prod(1 - density * delta), delta = 1/N.
/// Image [M, M]; differentiable with respect to scene.density().
Var render_intensity(const VoxelScene& scene, const View& view);
Var render_intensity(const Var& density, std::size_t grid_size, const View& view);

/// Expected depth in [0, 1] under the compositing weights, blended with the far
/// plane at weight kDepthBackgroundWeight; empty rays read 1.
Var render_depth(const VoxelScene& scene, const View& view);
Var render_depth(const Var& density, std::size_t grid_size, const View& view);

/// Composited colour [M, M, 3]; density acts as a constant, gradients flow to
/// scene.color() only.
Var render_color(const VoxelScene& scene, const View& view);
Var render_color(const Tensor& density, const Var& color, std::size_t grid_size, const View& view);

// Binary PGM (P5) / PPM (P6), 8-bit, value round(255 * clamp(v, 0, 1)).
void write_pgm(const std::filesystem::path& path, const Tensor& image);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Reads P5 or P6 back into [0, 1] values ([M, M] or [M, M, 3]).
Tensor read_pnm(const std::filesystem::path& path);
std::vector<std::uint8_t> quantize(const Tensor& image);

}  // namespace spse
