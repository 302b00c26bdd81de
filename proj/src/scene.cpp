#include "spse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "spse/errors.hpp"

namespace spse {

double normalize_azimuth(double degrees) {
  if (!std::isfinite(degrees)) throw ArgumentError("azimuth must be finite");
  double a = std::fmod(degrees + 180.0, 360.0);
  if (a < 0.0) a += 360.0;
  a -= 180.0;
  if (a >= 180.0) a -= 360.0;
  return a;
}

View::View(double azimuth_degrees, std::size_t image_size)
    : azimuth(normalize_azimuth(azimuth_degrees)), image_size(image_size) {
  if (image_size == 0) throw ArgumentError("image size must be positive");
}

// ---------------------------------------------------------------------------

VoxelScene::VoxelScene(std::size_t grid_size)
    : n_(grid_size),
      density_(Var::parameter(Tensor(Shape{grid_size, grid_size, grid_size}, 0.0))),
      color_(Var::parameter(Tensor(Shape{grid_size, grid_size, grid_size, 3}, 0.0))) {
  if (grid_size == 0) throw ArgumentError("grid size must be positive");
}

VoxelScene::VoxelScene(Tensor density, Tensor color) {
  const auto& ds = density.shape();
  if (ds.size() != 3 || ds[0] != ds[1] || ds[1] != ds[2]) {
    throw ShapeError("density grid must be [N,N,N], got " + shape_string(ds));
  }
  n_ = ds[0];
  const Shape expected_color{n_, n_, n_, 3};
  if (color.shape() != expected_color) {
    throw ShapeError("color grid must be " + shape_string(expected_color) + ", got " + shape_string(color.shape()));
  }
  density_ = Var::parameter(std::move(density));
  color_ = Var::parameter(std::move(color));
}

VoxelScene::VoxelScene(const VoxelScene& other)
    : n_(other.n_),
      density_(Var::parameter(other.density_.value())),
      color_(Var::parameter(other.color_.value())) {
  density_.set_requires_grad(other.density_.requires_grad());
  color_.set_requires_grad(other.color_.requires_grad());
}

VoxelScene& VoxelScene::operator=(const VoxelScene& other) {
  if (this != &other) *this = VoxelScene(other);
  return *this;
}

void VoxelScene::clamp() {
  for (auto& v : density_.mutable_value().data()) v = std::clamp(v, 0.0, 1.0);
  for (auto& v : color_.mutable_value().data()) v = std::clamp(v, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

namespace {

// Exact trigonometry at multiples of 90 degrees so quarter-turn resampling
// lands on grid points without rounding residue.
std::pair<double, double> cos_sin_degrees(double degrees) {
  const double quarter = degrees / 90.0;
  if (quarter == std::floor(quarter)) {
    switch (((static_cast<long>(quarter) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  const double rad = degrees * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

ResampleStencil make_stencil(std::size_t grid_size, std::size_t image_size, double azimuth_degrees) {
  const std::size_t n = grid_size;
  const std::size_t m = image_size;
  ResampleStencil st;
  st.grid_size = n;
  st.image_size = m;
  st.index.assign(m * m * n * 8, 0);
  st.weight.assign(m * m * n * 8, 0.0);

  const auto [c, s] = cos_sin_degrees(azimuth_degrees);
  const double center = (static_cast<double>(n) - 1.0) / 2.0;
  const double pitch = static_cast<double>(n) / static_cast<double>(m);
  const auto last = static_cast<long>(n) - 1;

  for (std::size_t row = 0; row < m; ++row) {
    const double gy = (static_cast<double>(row) + 0.5) * pitch - 0.5;
    for (std::size_t col = 0; col < m; ++col) {
      const double u = (static_cast<double>(col) + 0.5) * pitch - 0.5 - center;
      for (std::size_t k = 0; k < n; ++k) {
        const double w = static_cast<double>(k) - center;
        const double gx = c * u + s * w + center;
        const double gz = -s * u + c * w + center;
        const std::size_t sample = (row * m + col) * n + k;

        const double fx0 = std::floor(gx), fy0 = std::floor(gy), fz0 = std::floor(gz);
        const double tx = gx - fx0, ty = gy - fy0, tz = gz - fz0;
        const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0), z0 = static_cast<long>(fz0);
        int tap = 0;
        for (int dx = 0; dx < 2; ++dx) {
          const long xi = x0 + dx;
          const double wx = dx ? tx : 1.0 - tx;
          for (int dy = 0; dy < 2; ++dy) {
            const long yi = y0 + dy;
            const double wy = dy ? ty : 1.0 - ty;
            for (int dz = 0; dz < 2; ++dz, ++tap) {
              const long zi = z0 + dz;
              const double wz = dz ? tz : 1.0 - tz;
              const double weight = wx * wy * wz;
              if (weight == 0.0 || xi < 0 || yi < 0 || zi < 0 || xi > last || yi > last || zi > last) continue;
              st.index[sample * 8 + tap] = static_cast<std::uint32_t>(
                  voxel_index(n, static_cast<std::size_t>(xi), static_cast<std::size_t>(yi), static_cast<std::size_t>(zi)));
              st.weight[sample * 8 + tap] = weight;
            }
          }
        }
      }
    }
  }
  return st;
}

namespace {

std::vector<double> gather(const ResampleStencil& st, std::span<const double> grid, std::size_t channels,
                           std::size_t channel) {
  std::vector<double> out(st.samples());
  for (std::size_t s = 0; s < out.size(); ++s) {
    double acc = 0.0;
    for (int t = 0; t < 8; ++t) {
      const double w = st.weight[s * 8 + t];
      if (w != 0.0) acc += w * grid[st.index[s * 8 + t] * channels + channel];
    }
    out[s] = acc;
  }
  return out;
}

void scatter(const ResampleStencil& st, std::span<const double> sample_grad, std::vector<double>& grid_grad,
             std::size_t channels, std::size_t channel) {
  for (std::size_t s = 0; s < sample_grad.size(); ++s) {
    const double g = sample_grad[s];
    if (g == 0.0) continue;
    for (int t = 0; t < 8; ++t) {
      const double w = st.weight[s * 8 + t];
      if (w != 0.0) grid_grad[st.index[s * 8 + t] * channels + channel] += w * g;
    }
  }
}

void check_density(const Tensor& density, std::size_t n) {
  if (density.shape() != Shape{n, n, n}) {
    throw ShapeError("density must be [N,N,N] with N=" + std::to_string(n) + ", got " +
                     shape_string(density.shape()));
  }
}

// Per-ray compositing quantities shared by the intensity and depth renderers.
struct RayTerms {
  std::vector<double> alpha;          // a_k
  std::vector<double> transmittance;  // T_k = prod_{i<k} (1 - a_i)
  std::vector<double> behind;         // prod_{i>k} (1 - a_i)
};

void composite_ray(const double* sampled, std::size_t n, double delta, RayTerms& r) {
  r.alpha.resize(n);
  r.transmittance.resize(n + 1);
  r.behind.resize(n);
  r.transmittance[0] = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    r.alpha[k] = sampled[k] * delta;
    r.transmittance[k + 1] = r.transmittance[k] * (1.0 - r.alpha[k]);
  }
  double suffix = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    r.behind[k] = suffix;
    suffix *= 1.0 - r.alpha[k];
  }
}

}  // namespace

Tensor rotate_grid(const Tensor& grid, double azimuth_degrees) {
  const auto& sh = grid.shape();
  if ((sh.size() != 3 && sh.size() != 4) || sh[0] != sh[1] || sh[1] != sh[2]) {
    throw ShapeError("rotate_grid expects [N,N,N] or [N,N,N,C], got " + shape_string(sh));
  }
  const std::size_t n = sh[0];
  const std::size_t channels = sh.size() == 4 ? sh[3] : 1;
  const auto st = make_stencil(n, n, azimuth_degrees);
  Tensor out(sh);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const auto sampled = gather(st, grid.data(), channels, ch);
    for (std::size_t row = 0; row < n; ++row)
      for (std::size_t col = 0; col < n; ++col)
        for (std::size_t k = 0; k < n; ++k) {
          out[voxel_index(n, col, row, k) * channels + ch] = sampled[(row * n + col) * n + k];
        }
  }
  return out;
}

Var render_intensity(const VoxelScene& scene, const View& view) {
  return render_intensity(scene.density(), scene.grid_size(), view);
}

Var render_intensity(const Var& density, std::size_t n, const View& view) {
  check_density(density.value(), n);
  const std::size_t m = view.image_size;
  const double delta = 1.0 / static_cast<double>(n);
  auto st = std::make_shared<ResampleStencil>(make_stencil(n, m, view.azimuth));
  auto sampled = std::make_shared<std::vector<double>>(gather(*st, density.value().data(), 1, 0));

  Tensor image(Shape{m, m});
  RayTerms r;
  for (std::size_t p = 0; p < m * m; ++p) {
    composite_ray(sampled->data() + p * n, n, delta, r);
    image[p] = 1.0 - r.transmittance[n];
  }

  return record(std::move(image), {density}, [st, sampled, n, m, delta](auto g, auto grads) {
    std::vector<double> sample_grad(sampled->size(), 0.0);
    RayTerms r;
    for (std::size_t p = 0; p < m * m; ++p) {
      if (g[p] == 0.0) continue;
      composite_ray(sampled->data() + p * n, n, delta, r);
      for (std::size_t k = 0; k < n; ++k) {
        // d(1 - prod(1 - a_i)) / d a_k = prod_{i != k} (1 - a_i)
        sample_grad[p * n + k] = g[p] * delta * r.transmittance[k] * r.behind[k];
      }
    }
    scatter(*st, sample_grad, *grads[0], 1, 0);
  });
}

Var render_depth(const VoxelScene& scene, const View& view) {
  return render_depth(scene.density(), scene.grid_size(), view);
}

Var render_depth(const Var& density, std::size_t n, const View& view) {
  check_density(density.value(), n);
  const std::size_t m = view.image_size;
  const double delta = 1.0 / static_cast<double>(n);
  const double kappa = kDepthBackgroundWeight;
  auto st = std::make_shared<ResampleStencil>(make_stencil(n, m, view.azimuth));
  auto sampled = std::make_shared<std::vector<double>>(gather(*st, density.value().data(), 1, 0));

  std::vector<double> z(n);
  for (std::size_t k = 0; k < n; ++k) z[k] = (static_cast<double>(k) + 0.5) / static_cast<double>(n);

  // D = (A + kappa) / (S + kappa), A = sum w_k z_k, S = sum w_k.
  Tensor image(Shape{m, m});
  RayTerms r;
  for (std::size_t p = 0; p < m * m; ++p) {
    composite_ray(sampled->data() + p * n, n, delta, r);
    double a_sum = 0.0;
    double s_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double w = r.alpha[k] * r.transmittance[k];
      a_sum += w * z[k];
      s_sum += w;
    }
    image[p] = (a_sum + kappa) / (s_sum + kappa);
  }

  return record(std::move(image), {density}, [st, sampled, z, n, m, delta, kappa](auto g, auto grads) {
    std::vector<double> sample_grad(sampled->size(), 0.0);
    RayTerms r;
    std::vector<double> q(n);    // sum_{k>j} a_k z_k prod_{j<i<k} (1 - a_i)
    for (std::size_t p = 0; p < m * m; ++p) {
      if (g[p] == 0.0) continue;
      composite_ray(sampled->data() + p * n, n, delta, r);
      double a_sum = 0.0;
      double s_sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double w = r.alpha[k] * r.transmittance[k];
        a_sum += w * z[k];
        s_sum += w;
      }
      q[n - 1] = 0.0;
      for (std::size_t k = n - 1; k-- > 0;) q[k] = r.alpha[k + 1] * z[k + 1] + (1.0 - r.alpha[k + 1]) * q[k + 1];
      const double denom = s_sum + kappa;
      const double depth = (a_sum + kappa) / denom;
      for (std::size_t j = 0; j < n; ++j) {
        const double d_a = r.transmittance[j] * (z[j] - q[j]);
        const double d_s = r.transmittance[j] * r.behind[j];
        sample_grad[p * n + j] = g[p] * delta * (d_a - depth * d_s) / denom;
      }
    }
    scatter(*st, sample_grad, *grads[0], 1, 0);
  });
}

Var render_color(const VoxelScene& scene, const View& view) {
  return render_color(scene.density().value(), scene.color(), scene.grid_size(), view);
}

Var render_color(const Tensor& density, const Var& color, std::size_t n, const View& view) {
  check_density(density, n);
  if (color.shape() != Shape{n, n, n, 3}) {
    throw ShapeError("color must be [N,N,N,3], got " + shape_string(color.shape()));
  }
  const std::size_t m = view.image_size;
  const double delta = 1.0 / static_cast<double>(n);
  auto st = std::make_shared<ResampleStencil>(make_stencil(n, m, view.azimuth));
  const auto sampled = gather(*st, density.data(), 1, 0);

  // Compositing weights w_k = a_k T_k; fixed with respect to colour.
  auto weights = std::make_shared<std::vector<double>>(sampled.size());
  RayTerms r;
  for (std::size_t p = 0; p < m * m; ++p) {
    composite_ray(sampled.data() + p * n, n, delta, r);
    for (std::size_t k = 0; k < n; ++k) (*weights)[p * n + k] = r.alpha[k] * r.transmittance[k];
  }

  Tensor image(Shape{m, m, 3});
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto col = gather(*st, color.value().data(), 3, ch);
    for (std::size_t p = 0; p < m * m; ++p) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += (*weights)[p * n + k] * col[p * n + k];
      image[p * 3 + ch] = acc;
    }
  }

  return record(std::move(image), {color}, [st, weights, n, m](auto g, auto grads) {
    std::vector<double> sample_grad(weights->size());
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t p = 0; p < m * m; ++p)
        for (std::size_t k = 0; k < n; ++k) sample_grad[p * n + k] = g[p * 3 + ch] * (*weights)[p * n + k];
      scatter(*st, sample_grad, *grads[0], 3, ch);
    }
  });
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> quantize(const Tensor& image) {
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(image[i], 0.0, 1.0)));
  }
  return bytes;
}

namespace {

void write_pnm(const std::filesystem::path& path, const char* magic, std::size_t width, std::size_t height,
               const Tensor& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << magic << "\n" << width << " " << height << "\n255\n";
  const auto bytes = quantize(image);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("PGM expects [H,W], got " + shape_string(image.shape()));
  write_pnm(path, "P5", image.shape()[1], image.shape()[0], image);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.shape()[2] != 3) {
    throw ShapeError("PPM expects [H,W,3], got " + shape_string(image.shape()));
  }
  write_pnm(path, "P6", image.shape()[1], image.shape()[0], image);
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  in.get();
  if ((magic != "P5" && magic != "P6") || maxval != 255 || width == 0 || height == 0) {
    throw FormatError("unsupported image header in " + path.string());
  }
  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> bytes(width * height * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw FormatError("truncated image data in " + path.string());
  Shape shape = channels == 3 ? Shape{height, width, 3} : Shape{height, width};
  Tensor out(shape);
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

}  // namespace spse
