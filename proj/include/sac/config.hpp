#pragma once

// JSON run configuration (schema_version 1). Every section is optional;
// omitted fields take the reference values. Unknown fields are rejected.
//
//   potential  { kind: "logarithmic" | "polynomial", c, K (optional) }
//   yosida     { lambda_levels, newton_tol, newton_max_iter }
//   noise      { family: "sine" | "poly_flat", modes, decay_exponent, amplitude, flatness }
//   grid       { extent: [Lx] | [Lx, Ly], cells: [Nx] | [Nx, Ny] }
//   stepper    { dt, t_end, outer_newton_tol, outer_newton_max, linear_tol, linear_max, gauge_orders }
//   ensemble   { replicates, seed, threads }
//   initial    { kind: "cosine" | "constant" | "smooth_bump" | "random_fourier", ... }
//   forcing    { kind: "zero" | "constant" | "file", value | path }
//   output     { directory, snapshot_stride }

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sac/experiments.hpp"
#include "sac/grid.hpp"
#include "sac/noise.hpp"
#include "sac/potential.hpp"
#include "sac/rng.hpp"
#include "sac/stepper.hpp"

namespace sac {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

struct InitialSpec {
  enum class Kind { cosine, constant, smooth_bump, random_fourier };
  Kind kind = Kind::cosine;
  double amplitude = 0.5;  // cosine, smooth_bump, random_fourier
  int mode = 1;            // cosine: a cos(mode pi x / Lx)
  double value = 0.0;      // constant
  double width = 0.1;      // smooth_bump: a exp(-|x - centre|^2 / (2 w^2))
  int modes = 8;           // random_fourier
  double clamp = 0.05;     // random_fourier: values clipped to [-1 + clamp, 1 - clamp]

  bool operator==(const InitialSpec&) const = default;
};

struct ForcingSpec {
  enum class Kind { zero, constant, file };
  Kind kind = Kind::zero;
  double value = 0.0;
  std::string path;

  bool operator==(const ForcingSpec&) const = default;
};

struct GridSpec {
  std::vector<double> extent{1.0};
  std::vector<int> cells{128};

  Grid build() const {
    return extent.size() == 1 ? Grid(extent[0], cells[0]) : Grid(extent[0], extent[1], cells[0], cells[1]);
  }
  bool operator==(const GridSpec&) const = default;
};

struct RunConfig {
  PotentialKind potential_kind = PotentialKind::logarithmic;
  double c = 2.0;
  std::optional<double> K;
  std::vector<double> lambda_levels{0.2, 0.1, 0.05, 0.025};
  double newton_tol = 1e-12;
  int newton_max_iter = 200;
  NoiseSpec noise;
  GridSpec grid;
  StepperConfig stepper;
  int replicates = 64;
  std::uint64_t seed = 20240917;
  int threads = 1;
  InitialSpec initial;
  ForcingSpec forcing;
  std::string output_directory = "out";
  int snapshot_stride = 0;

  PotentialParams potential() const {
    return potential_kind == PotentialKind::logarithmic ? PotentialParams::logarithmic(c, K)
                                                        : PotentialParams::polynomial();
  }
};

inline bool operator==(const NoiseSpec& a, const NoiseSpec& b) {
  return a.family == b.family && a.modes == b.modes && a.decay_exponent == b.decay_exponent &&
         a.amplitude == b.amplitude && a.flatness == b.flatness;
}

inline bool operator==(const StepperConfig& a, const StepperConfig& b) {
  return a.dt == b.dt && a.t_end == b.t_end && a.outer_newton_tol == b.outer_newton_tol &&
         a.outer_newton_max == b.outer_newton_max && a.linear_tol == b.linear_tol && a.linear_max == b.linear_max &&
         a.gauge_orders == b.gauge_orders;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.potential_kind == b.potential_kind && a.c == b.c && a.K == b.K && a.lambda_levels == b.lambda_levels &&
         a.newton_tol == b.newton_tol && a.newton_max_iter == b.newton_max_iter && a.noise == b.noise &&
         a.grid == b.grid && a.stepper == b.stepper && a.replicates == b.replicates && a.seed == b.seed &&
         a.threads == b.threads && a.initial == b.initial && a.forcing == b.forcing &&
         a.output_directory == b.output_directory && a.snapshot_stride == b.snapshot_stride;
}

namespace detail {

using json = nlohmann::json;

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Typed field access with the dotted path in every error.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw ConfigError("");
        out = v.get<int>();
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) throw ConfigError("");
        out = v.get<std::uint64_t>();
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
        out = v.get<double>();
      } else {
        out = v.get<T>();
      }
    } catch (const std::exception&) {
      throw ConfigError(field(key) + ": wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  std::string read_kind(const char* key, std::string fallback) {
    read(key, fallback);
    return fallback;
  }

  void mark(const char* key) { seen_.insert(key); }
  bool has(const char* key) const { return j_.contains(key); }
  std::string field(const std::string& key) const { return path_ + "." + key; }

  /// Rejects keys that were never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Fn>
void with_context(const std::string& where, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.rfind(where, 0) == 0 ? msg : where + ": " + msg);
  }
}

}  // namespace detail

/// Validates every invariant not already enforced while reading.
inline void validate(const RunConfig& cfg) {
  detail::with_context("potential", [&] { (void)cfg.potential(); });
  detail::with_context("yosida.lambda_levels", [&] {
    if (cfg.lambda_levels.empty()) throw ConfigError("yosida.lambda_levels: must not be empty");
    for (std::size_t i = 0; i < cfg.lambda_levels.size(); ++i) {
      (void)YosidaLevel(cfg.lambda_levels[i], cfg.newton_tol, cfg.newton_max_iter);
      if (i > 0 && !(cfg.lambda_levels[i] < cfg.lambda_levels[i - 1]))
        throw ConfigError("yosida.lambda_levels: must be strictly decreasing");
    }
  });
  detail::with_context("noise", [&] { cfg.noise.validate(); });
  detail::with_context("grid", [&] {
    const auto& g = cfg.grid;
    if (g.extent.empty() || g.extent.size() > 2 || g.extent.size() != g.cells.size())
      throw ConfigError("grid: extent and cells must both have 1 or 2 entries");
    (void)g.build();
  });
  detail::with_context("stepper", [&] { cfg.stepper.validate(); });
  if (cfg.replicates < 2) throw ConfigError("ensemble.replicates: must be >= 2, got " + std::to_string(cfg.replicates));
  if (cfg.threads < 0) throw ConfigError("ensemble.threads: must be >= 0");
  if (cfg.snapshot_stride < 0) throw ConfigError("output.snapshot_stride: must be >= 0");

  const InitialSpec& u0 = cfg.initial;
  const bool log = cfg.potential_kind == PotentialKind::logarithmic;
  switch (u0.kind) {
    case InitialSpec::Kind::constant:
      if (log && !(std::abs(u0.value) < 1.0))
        throw ConfigError("initial.value: constant u0 must satisfy |m0| < 1, got " + detail::num(u0.value));
      break;
    case InitialSpec::Kind::cosine:
      if (log && !(std::abs(u0.amplitude) < 1.0))
        throw ConfigError("initial.amplitude: must satisfy |amplitude| < 1, got " + detail::num(u0.amplitude));
      if (u0.mode < 0) throw ConfigError("initial.mode: must be >= 0");
      break;
    case InitialSpec::Kind::smooth_bump:
      if (log && !(std::abs(u0.amplitude) < 1.0))
        throw ConfigError("initial.amplitude: must satisfy |amplitude| < 1, got " + detail::num(u0.amplitude));
      if (!(u0.width > 0.0)) throw ConfigError("initial.width: must be > 0");
      break;
    case InitialSpec::Kind::random_fourier:
      if (u0.modes < 1) throw ConfigError("initial.modes: must be >= 1");
      if (!(u0.clamp > 0.0 && u0.clamp < 1.0)) throw ConfigError("initial.clamp: must lie in (0, 1)");
      if (!(u0.amplitude >= 0.0)) throw ConfigError("initial.amplitude: must be >= 0");
      break;
  }
  const ForcingSpec& g = cfg.forcing;
  if (g.kind == ForcingSpec::Kind::constant && !std::isfinite(g.value))
    throw ConfigError("forcing.value: must be finite");
  if (g.kind == ForcingSpec::Kind::file && g.path.empty()) throw ConfigError("forcing.path: must not be empty");
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::Section;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig cfg;
  Section root(j, "config");
  int version = kSchemaVersion;
  root.read("schema_version", version);
  if (version != kSchemaVersion)
    throw ConfigError("config.schema_version: unsupported version " + std::to_string(version));
  auto section = [&](const char* key, auto&& body) {
    const nlohmann::json empty = nlohmann::json::object();
    root.mark(key);
    Section s(j.contains(key) ? j.at(key) : empty, key);
    body(s);
    s.finish();
  };

  section("potential", [&](Section& s) {
    const std::string kind = s.read_kind("kind", "logarithmic");
    if (kind == "logarithmic") cfg.potential_kind = PotentialKind::logarithmic;
    else if (kind == "polynomial") cfg.potential_kind = PotentialKind::polynomial;
    else throw ConfigError("potential.kind: unknown kind '" + kind + "'");
    s.read("c", cfg.c);
    s.mark("K");
    if (s.has("K") && !j.at("potential").at("K").is_null()) {
      double k = 0.0;
      s.read("K", k);
      cfg.K = k;
    }
  });
  section("yosida", [&](Section& s) {
    s.read("lambda_levels", cfg.lambda_levels);
    s.read("newton_tol", cfg.newton_tol);
    s.read("newton_max_iter", cfg.newton_max_iter);
  });
  section("noise", [&](Section& s) {
    const std::string family = s.read_kind("family", "sine");
    if (family == "sine") cfg.noise.family = NoiseFamily::sine;
    else if (family == "poly_flat") cfg.noise.family = NoiseFamily::poly_flat;
    else throw ConfigError("noise.family: unknown family '" + family + "'");
    s.read("modes", cfg.noise.modes);
    s.read("decay_exponent", cfg.noise.decay_exponent);
    s.read("amplitude", cfg.noise.amplitude);
    s.read("flatness", cfg.noise.flatness);
  });
  section("grid", [&](Section& s) {
    s.read("extent", cfg.grid.extent);
    s.read("cells", cfg.grid.cells);
  });
  section("stepper", [&](Section& s) {
    s.read("dt", cfg.stepper.dt);
    s.read("t_end", cfg.stepper.t_end);
    s.read("outer_newton_tol", cfg.stepper.outer_newton_tol);
    s.read("outer_newton_max", cfg.stepper.outer_newton_max);
    s.read("linear_tol", cfg.stepper.linear_tol);
    s.read("linear_max", cfg.stepper.linear_max);
    s.read("gauge_orders", cfg.stepper.gauge_orders);
  });
  section("ensemble", [&](Section& s) {
    s.read("replicates", cfg.replicates);
    s.read("seed", cfg.seed);
    s.read("threads", cfg.threads);
  });
  section("initial", [&](Section& s) {
    const std::string kind = s.read_kind("kind", "cosine");
    InitialSpec& u0 = cfg.initial;
    if (kind == "cosine") {
      u0.kind = InitialSpec::Kind::cosine;
      s.read("amplitude", u0.amplitude);
      s.read("mode", u0.mode);
    } else if (kind == "constant") {
      u0.kind = InitialSpec::Kind::constant;
      s.read("value", u0.value);
    } else if (kind == "smooth_bump") {
      u0.kind = InitialSpec::Kind::smooth_bump;
      s.read("amplitude", u0.amplitude);
      s.read("width", u0.width);
    } else if (kind == "random_fourier") {
      u0.kind = InitialSpec::Kind::random_fourier;
      s.read("modes", u0.modes);
      s.read("amplitude", u0.amplitude);
      s.read("clamp", u0.clamp);
    } else {
      throw ConfigError("initial.kind: unknown kind '" + kind + "'");
    }
  });
  section("forcing", [&](Section& s) {
    const std::string kind = s.read_kind("kind", "zero");
    if (kind == "zero") {
      cfg.forcing.kind = ForcingSpec::Kind::zero;
    } else if (kind == "constant") {
      cfg.forcing.kind = ForcingSpec::Kind::constant;
      s.read("value", cfg.forcing.value);
    } else if (kind == "file") {
      cfg.forcing.kind = ForcingSpec::Kind::file;
      s.read("path", cfg.forcing.path);
    } else {
      throw ConfigError("forcing.kind: unknown kind '" + kind + "'");
    }
  });
  section("output", [&](Section& s) {
    s.read("directory", cfg.output_directory);
    s.read("snapshot_stride", cfg.snapshot_stride);
  });
  root.finish();
  validate(cfg);
  return cfg;
}

/// Canonical JSON form; parsing it yields the same RunConfig.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["potential"] = {{"kind", cfg.potential_kind == PotentialKind::logarithmic ? "logarithmic" : "polynomial"},
                    {"c", cfg.c}};
  if (cfg.K) j["potential"]["K"] = *cfg.K;
  j["yosida"] = {{"lambda_levels", cfg.lambda_levels},
                 {"newton_tol", cfg.newton_tol},
                 {"newton_max_iter", cfg.newton_max_iter}};
  j["noise"] = {{"family", cfg.noise.family == NoiseFamily::sine ? "sine" : "poly_flat"},
                {"modes", cfg.noise.modes},
                {"decay_exponent", cfg.noise.decay_exponent},
                {"amplitude", cfg.noise.amplitude},
                {"flatness", cfg.noise.flatness}};
  j["grid"] = {{"extent", cfg.grid.extent}, {"cells", cfg.grid.cells}};
  j["stepper"] = {{"dt", cfg.stepper.dt},
                  {"t_end", cfg.stepper.t_end},
                  {"outer_newton_tol", cfg.stepper.outer_newton_tol},
                  {"outer_newton_max", cfg.stepper.outer_newton_max},
                  {"linear_tol", cfg.stepper.linear_tol},
                  {"linear_max", cfg.stepper.linear_max},
                  {"gauge_orders", cfg.stepper.gauge_orders}};
  j["ensemble"] = {{"replicates", cfg.replicates}, {"seed", cfg.seed}, {"threads", cfg.threads}};
  const InitialSpec& u0 = cfg.initial;
  switch (u0.kind) {
    case InitialSpec::Kind::cosine:
      j["initial"] = {{"kind", "cosine"}, {"amplitude", u0.amplitude}, {"mode", u0.mode}};
      break;
    case InitialSpec::Kind::constant:
      j["initial"] = {{"kind", "constant"}, {"value", u0.value}};
      break;
    case InitialSpec::Kind::smooth_bump:
      j["initial"] = {{"kind", "smooth_bump"}, {"amplitude", u0.amplitude}, {"width", u0.width}};
      break;
    case InitialSpec::Kind::random_fourier:
      j["initial"] = {{"kind", "random_fourier"}, {"modes", u0.modes}, {"amplitude", u0.amplitude}, {"clamp", u0.clamp}};
      break;
  }
  switch (cfg.forcing.kind) {
    case ForcingSpec::Kind::zero:
      j["forcing"] = {{"kind", "zero"}};
      break;
    case ForcingSpec::Kind::constant:
      j["forcing"] = {{"kind", "constant"}, {"value", cfg.forcing.value}};
      break;
    case ForcingSpec::Kind::file:
      j["forcing"] = {{"kind", "file"}, {"path", cfg.forcing.path}};
      break;
  }
  j["output"] = {{"directory", cfg.output_directory}, {"snapshot_stride", cfg.snapshot_stride}};
  return j;
}

inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// FNV-1a over the canonical JSON of every field that can change results.
/// The output section and the thread count are excluded.
inline std::uint64_t config_hash(const RunConfig& cfg) {
  nlohmann::json j = config_to_json(cfg);
  j.erase("output");
  j["ensemble"].erase("threads");
  if (cfg.forcing.kind == ForcingSpec::Kind::file) {
    // The file contents matter, not where the file lives.
    std::ifstream in(cfg.forcing.path, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    j["forcing"]["path"] = std::to_string(detail::fnv1a(bytes.str()));
  }
  return detail::fnv1a(j.dump());
}

/// Initial field on `g`; random_fourier draws from the initial-data stream of the seed.
inline Field make_initial(const InitialSpec& spec, const Grid& g, std::uint64_t seed) {
  const double pi = std::numbers::pi;
  const double lx = g.extent(0);
  switch (spec.kind) {
    case InitialSpec::Kind::constant:
      return Field(g, spec.value);
    case InitialSpec::Kind::cosine:
      return sample(g, [&](double x, double) { return spec.amplitude * std::cos(spec.mode * pi * x / lx); });
    case InitialSpec::Kind::smooth_bump: {
      const double cx = 0.5 * lx;
      const double cy = g.dim() == 2 ? 0.5 * g.extent(1) : 0.0;
      return sample(g, [&](double x, double y) {
        const double r2 = (x - cx) * (x - cx) + (g.dim() == 2 ? (y - cy) * (y - cy) : 0.0);
        return spec.amplitude * std::exp(-r2 / (2.0 * spec.width * spec.width));
      });
    }
    case InitialSpec::Kind::random_fourier: {
      std::vector<double> coeff_x(spec.modes), coeff_y(spec.modes);
      for (int k = 0; k < spec.modes; ++k) {
        const auto [a, b] = normal_pair(seed, Stream::initial_data, 0, 0, static_cast<std::uint32_t>(k));
        coeff_x[k] = spec.amplitude * a / (k + 1);
        coeff_y[k] = spec.amplitude * b / (k + 1);
      }
      const double ly = g.dim() == 2 ? g.extent(1) : 1.0;
      Field u = sample(g, [&](double x, double y) {
        double v = 0.0;
        for (int k = 0; k < spec.modes; ++k) {
          v += coeff_x[k] * std::cos((k + 1) * pi * x / lx);
          if (g.dim() == 2) v += coeff_y[k] * std::cos((k + 1) * pi * y / ly);
        }
        return v;
      });
      const double bound = 1.0 - spec.clamp;
      for (double& v : u) v = std::clamp(v, -bound, bound);
      return u;
    }
  }
  throw ConfigError("initial.kind: unhandled kind");
}

inline Field make_forcing(const ForcingSpec& spec, const Grid& g) {
  switch (spec.kind) {
    case ForcingSpec::Kind::zero:
      return Field(g);
    case ForcingSpec::Kind::constant:
      return Field(g, spec.value);
    case ForcingSpec::Kind::file: {
      Snapshot snap;
      try {
        snap = read_snapshot(spec.path);
      } catch (const std::exception& e) {
        throw IoError(std::string("forcing.path: ") + e.what());
      }
      if (!(snap.grid.dim() == g.dim() && snap.grid.cells(0) == g.cells(0) && snap.grid.cells(1) == g.cells(1)))
        throw ConfigError("forcing.path: snapshot grid does not match the configured grid");
      return snap.field;
    }
  }
  throw ConfigError("forcing.kind: unhandled kind");
}

/// Materialises the study inputs.
inline EnsembleConfig to_ensemble(const RunConfig& cfg) {
  validate(cfg);
  EnsembleConfig e;
  e.replicates = cfg.replicates;
  e.seed = cfg.seed;
  e.lambda_levels = cfg.lambda_levels;
  e.yosida_newton_tol = cfg.newton_tol;
  e.yosida_newton_max = cfg.newton_max_iter;
  e.grid = cfg.grid.build();
  e.stepper = cfg.stepper;
  e.noise = cfg.noise;
  e.potential = cfg.potential();
  e.u0 = make_initial(cfg.initial, e.grid, cfg.seed);
  e.forcing = make_forcing(cfg.forcing, e.grid);
  e.threads = cfg.threads;
  e.config_hash = config_hash(cfg);
  return e;
}

}  // namespace sac
