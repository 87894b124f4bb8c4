#pragma once

/// Cell-centred rectangular meshes in one or two dimensions with homogeneous
/// Neumann boundaries (mirror ghost cells), discrete norms, the Neumann
/// Laplacian, Ginzburg-Landau energies and the drift operator
///   A_lambda u = -Delta_h u + beta_lambda(u) - 2 c u - g.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sac/linalg.hpp"
#include "sac/potential.hpp"

namespace sac {

class Grid {
 public:
  Grid() : Grid(1.0, 2) {}

  /// Interval [0, length] split into `cells` cells.
  Grid(double length, int cells) : dim_(1), extent_{length, 0.0}, cells_{cells, 1} { validate(); }

  /// Rectangle [0, lx] x [0, ly].
  Grid(double lx, double ly, int nx, int ny) : dim_(2), extent_{lx, ly}, cells_{nx, ny} { validate(); }

  int dim() const { return dim_; }
  double extent(int axis) const { return extent_[axis]; }
  int cells(int axis) const { return cells_[axis]; }
  double spacing(int axis) const { return extent_[axis] / cells_[axis]; }
  std::size_t size() const { return static_cast<std::size_t>(cells_[0]) * cells_[1]; }
  double cell_volume() const { return dim_ == 1 ? spacing(0) : spacing(0) * spacing(1); }
  double measure() const { return dim_ == 1 ? extent_[0] : extent_[0] * extent_[1]; }
  /// Centre coordinate of cell i along `axis`: (i + 1/2) h.
  double center(int axis, int i) const { return (i + 0.5) * spacing(axis); }
  std::size_t index(int i, int j = 0) const { return static_cast<std::size_t>(i) * cells_[1] + j; }

  bool operator==(const Grid&) const = default;

 private:
  void validate() const {
    for (int a = 0; a < dim_; ++a) {
      if (cells_[a] < 2) throw DomainError("grid: at least 2 cells per axis required");
      if (!(extent_[a] > 0.0) || !std::isfinite(extent_[a])) throw DomainError("grid: extent must be positive");
    }
  }

  int dim_;
  std::array<double, 2> extent_;
  std::array<int, 2> cells_;
};

/// Nodal values of a scalar field, one per cell, row-major (axis 0 slowest).
class Field {
 public:
  Field() = default;
  explicit Field(std::size_t n, double value = 0.0) : values_(n, value) {}
  explicit Field(std::vector<double> values) : values_(std::move(values)) {}
  explicit Field(const Grid& g, double value = 0.0) : values_(g.size(), value) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  const std::vector<double>& values() const { return values_; }

  Field& operator+=(const Field& o) {
    for (std::size_t i = 0; i < size(); ++i) values_[i] += o[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    for (std::size_t i = 0; i < size(); ++i) values_[i] -= o[i];
    return *this;
  }
  Field& operator*=(double a) {
    for (double& v : values_) v *= a;
    return *this;
  }
  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(double s, Field a) { return a *= s; }

  bool operator==(const Field&) const = default;

 private:
  std::vector<double> values_;
};

/// Field from f(x) (1-D) evaluated at cell centres.
template <class Fn>
Field sample(const Grid& g, Fn&& f) {
  Field out(g);
  for (int i = 0; i < g.cells(0); ++i) {
    if (g.dim() == 1) {
      out[g.index(i)] = f(g.center(0, i), 0.0);
    } else {
      for (int j = 0; j < g.cells(1); ++j) out[g.index(i, j)] = f(g.center(0, i), g.center(1, j));
    }
  }
  return out;
}

namespace detail {
inline void require_size(const Grid& g, const Field& u, const char* what) {
  if (u.size() != g.size()) {
    std::ostringstream os;
    os << what << ": field has " << u.size() << " values, grid has " << g.size() << " cells";
    throw std::invalid_argument(os.str());
  }
}
}  // namespace detail

/// out = Delta_h u with mirror ghosts; each face contributes (u_nb - u)/h^2.
inline void laplacian_into(const Grid& g, std::span<const double> u, std::span<double> out) {
  const int nx = g.cells(0);
  const int ny = g.cells(1);
  const double ix2 = 1.0 / (g.spacing(0) * g.spacing(0));
  const double iy2 = g.dim() == 2 ? 1.0 / (g.spacing(1) * g.spacing(1)) : 0.0;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const std::size_t k = g.index(i, j);
      const double c = u[k];
      double acc = 0.0;
      if (i > 0) acc += (u[k - ny] - c) * ix2;
      if (i + 1 < nx) acc += (u[k + ny] - c) * ix2;
      if (g.dim() == 2) {
        if (j > 0) acc += (u[k - 1] - c) * iy2;
        if (j + 1 < ny) acc += (u[k + 1] - c) * iy2;
      }
      out[k] = acc;
    }
  }
}

inline Field laplacian_neumann(const Grid& g, const Field& u) {
  detail::require_size(g, u, "laplacian_neumann");
  Field out(g);
  laplacian_into(g, u.span(), out.span());
  return out;
}

/// Diagonal of -Delta_h (number of interior faces of each cell over h^2).
inline Field neg_laplacian_diagonal(const Grid& g) {
  Field d(g);
  const int nx = g.cells(0);
  const int ny = g.cells(1);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      double v = ((i > 0) + (i + 1 < nx)) / (g.spacing(0) * g.spacing(0));
      if (g.dim() == 2) v += ((j > 0) + (j + 1 < ny)) / (g.spacing(1) * g.spacing(1));
      d[g.index(i, j)] = v;
    }
  }
  return d;
}

/// <u, v>_h = sum u v h^d.
inline double inner(const Grid& g, const Field& u, const Field& v) {
  detail::require_size(g, u, "inner");
  detail::require_size(g, v, "inner");
  return dot(u.span(), v.span()) * g.cell_volume();
}

/// Sum over interior faces of ((u_right - u_left)/h)^2 h^d.
inline double grad_norm_sq(const Grid& g, std::span<const double> u) {
  const int nx = g.cells(0);
  const int ny = g.cells(1);
  double sx = 0.0;
  double sy = 0.0;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const std::size_t k = g.index(i, j);
      if (i + 1 < nx) {
        const double d = u[k + ny] - u[k];
        sx += d * d;
      }
      if (g.dim() == 2 && j + 1 < ny) {
        const double d = u[k + 1] - u[k];
        sy += d * d;
      }
    }
  }
  double total = sx / (g.spacing(0) * g.spacing(0));
  if (g.dim() == 2) total += sy / (g.spacing(1) * g.spacing(1));
  return total * g.cell_volume();
}

struct Norms {
  double h_norm_sq = 0.0;
  double grad_norm_sq = 0.0;
  double sup_norm = 0.0;

  double v_norm_sq() const { return h_norm_sq + grad_norm_sq; }
};

inline Norms norms(const Grid& g, const Field& u) {
  detail::require_size(g, u, "norms");
  Norms n;
  for (double v : u) {
    n.h_norm_sq += v * v;
    n.sup_norm = std::max(n.sup_norm, std::abs(v));
  }
  n.h_norm_sq *= g.cell_volume();
  n.grad_norm_sq = grad_norm_sq(g, u.span());
  return n;
}

/// Discrete V* norm squared: <f, (I - Delta_h)^{-1} f>_h.
inline double dual_norm_sq(const Grid& g, const Field& f, double rel_tol = 1e-13, int max_iter = 20000) {
  detail::require_size(g, f, "dual_norm_sq");
  const Field diag = neg_laplacian_diagonal(g);
  Field x(g);
  auto apply = [&](std::span<const double> p, std::span<double> out) {
    laplacian_into(g, p, out);
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] - out[i];
  };
  auto jacobi = [&](std::span<const double> r, std::span<double> z) {
    for (std::size_t i = 0; i < r.size(); ++i) z[i] = r[i] / (1.0 + diag[i]);
  };
  const CgResult res = conjugate_gradient(apply, jacobi, f.span(), x.span(), rel_tol, max_iter);
  if (!res.converged) throw ConvergenceError("dual_norm_sq: linear solve stagnated");
  return inner(g, f, x);
}

/// Ginzburg-Landau energy 1/2 |grad u|^2 + F(u), or F_lambda(u) when a level is given.
inline double energy(const Grid& g, const PotentialParams& params, const std::optional<YosidaLevel>& level,
                     const Field& u) {
  detail::require_size(g, u, "energy");
  double bulk = 0.0;
  for (double v : u) {
    if (level && params.kind == PotentialKind::logarithmic) {
      bulk += regularized_potential_eval(params, *level, v).F;
    } else {
      bulk += potential_eval(params, v).F;
    }
  }
  return 0.5 * grad_norm_sq(g, u.span()) + bulk * g.cell_volume();
}

/// Pointwise -Delta_h u + F'_lambda(u) - g.
inline Field drift_apply(const Grid& g, const PotentialParams& params, const YosidaLevel& level, const Field& u,
                         const Field& g_force) {
  detail::require_size(g, u, "drift_apply");
  detail::require_size(g, g_force, "drift_apply");
  Field out = laplacian_neumann(g, u);
  for (std::size_t i = 0; i < u.size(); ++i)
    out[i] = -out[i] + regularized_potential_eval(params, level, u[i]).F1 - g_force[i];
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot files: 32-byte header
//   [0,4)  "ACF1"   [4,8) u32 dim   [8,12) u32 N0   [12,16) u32 N1 (1 in 1-D)
//   [16,24) f64 h0  [24,32) f64 h1 (0 in 1-D)
// followed by row-major little-endian f64 values.

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw std::runtime_error("snapshot: truncated file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
}  // namespace detail

struct Snapshot {
  Grid grid;
  Field field;
};

inline void write_snapshot(const std::string& path, const Grid& g, const Field& u) {
  detail::require_size(g, u, "write_snapshot");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("snapshot: cannot open " + path + " for writing");
  os.write("ACF1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(g.dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(g.cells(0)));
  detail::put_u32(os, static_cast<std::uint32_t>(g.dim() == 2 ? g.cells(1) : 1));
  detail::put_f64(os, g.spacing(0));
  detail::put_f64(os, g.dim() == 2 ? g.spacing(1) : 0.0);
  for (double v : u) detail::put_f64(os, v);
  if (!os) throw std::runtime_error("snapshot: write failed for " + path);
}

inline Snapshot read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("snapshot: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "ACF1") throw std::runtime_error("snapshot: bad magic in " + path);
  const auto dim = static_cast<int>(detail::get_le(is, 4));
  const auto n0 = static_cast<int>(detail::get_le(is, 4));
  const auto n1 = static_cast<int>(detail::get_le(is, 4));
  const double h0 = std::bit_cast<double>(detail::get_le(is, 8));
  const double h1 = std::bit_cast<double>(detail::get_le(is, 8));
  if (dim != 1 && dim != 2) throw std::runtime_error("snapshot: unsupported dimension");
  Grid g = dim == 1 ? Grid(h0 * n0, n0) : Grid(h0 * n0, h1 * n1, n0, n1);
  Field u(g);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::bit_cast<double>(detail::get_le(is, 8));
  return {g, u};
}

}  // namespace sac
