#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsd/core/rng.hpp"
#include "fsd/grf/grf.hpp"

// Desk-scale forward operator: a steady variable-coefficient elliptic solve
// -div(kappa grad p) = source with kappa = exp(clamp(m)), homogeneous Dirichlet
// boundary, followed by a saturating front s = smoothstep(gain * (p - level)).
namespace fsd::sim {

using grf::Grid;
using tg::Tensor;

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ForwardConfig {
  Grid grid;
  Tensor source;              // [ny, nx] source density
  double kappa_clip = 6.0;
  double front_gain = 3.0;
  double front_level = 0.05;
  double cg_tol = 1e-8;
  std::size_t cg_max_iter = 20000;

  /// Injector spike of total rate `rate` one cell in from the left boundary at mid-height.
  static ForwardConfig with_injector(const Grid& grid, double rate = 10.0);
  void validate() const;
  /// Canonical JSON text of every field (source included), used for hashing.
  std::string canonical_json() const;
};

struct SolveStats {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// Five-point two-point-flux operator for a fixed coefficient field.
class EllipticOperator {
 public:
  EllipticOperator(const Grid& grid, const Tensor& kappa);

  /// y = A x.
  void apply(const double* x, double* y) const;
  Tensor apply(const Tensor& x) const;
  /// Jacobi-preconditioned CG; throws SolverError on non-convergence.
  Tensor solve(const Tensor& rhs, double tol, std::size_t max_iter, SolveStats* stats = nullptr) const;
  /// Gradient of lambda^T A(kappa) p with respect to kappa.
  Tensor bilinear_kappa_gradient(const Tensor& lambda, const Tensor& p) const;
  /// (dA/dkappa [dkappa]) p.
  Tensor directional_apply(const Tensor& dkappa, const Tensor& p) const;
  /// Dense matrix (row-major, cells x cells) for small-grid oracles.
  std::vector<double> dense() const;

 private:
  Grid grid_;
  Tensor kappa_;
  double wx_, wz_;  // 1/hx^2, 1/hz^2
};

Tensor coefficient(const ForwardConfig& config, const Tensor& m);
Tensor pressure(const ForwardConfig& config, const Tensor& m, SolveStats* stats = nullptr);
Tensor front(const ForwardConfig& config, const Tensor& p);
/// Pointwise derivative of front() with respect to p.
Tensor front_derivative(const ForwardConfig& config, const Tensor& p);

/// s(m) = front(pressure(m)).
Tensor solve_forward(const ForwardConfig& config, const Tensor& m, SolveStats* stats = nullptr);

/// Gradient of <cotangent, s(m)> with respect to m via the adjoint solve.
Tensor vjp_forward(const ForwardConfig& config, const Tensor& m, const Tensor& cotangent);

/// Linear solve stage m -> p: Jacobian-vector and vector-Jacobian products.
Tensor pressure_jvp(const ForwardConfig& config, const Tensor& m, const Tensor& dm);
Tensor pressure_vjp(const ForwardConfig& config, const Tensor& m, const Tensor& v);

enum class ObservationTarget { Geomodel, Dynamics };

struct Observation {
  Tensor mask;    // 0/1
  Tensor values;  // mask * (field + noise)
  double noise_std = 0.0;
  ObservationTarget target = ObservationTarget::Dynamics;

  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

/// Each cell set independently with probability `fraction` in (0, 1].
Tensor random_mask(const Grid& grid, double fraction, Rng& rng);
/// Full vertical columns at the given x indices.
Tensor column_mask(const Grid& grid, const std::vector<std::size_t>& columns);
/// Default two-well layout: the injector column and a column at ~75% width.
std::vector<std::size_t> default_well_columns(const Grid& grid);

Observation observe(const Tensor& field, const Tensor& mask, double noise_std, Rng& rng,
                    ObservationTarget target = ObservationTarget::Dynamics);

struct Dataset {
  std::vector<Tensor> m;
  std::vector<Tensor> s;
  std::vector<grf::GeoHyperparams> hyper;
};

struct DatasetSpec {
  std::size_t n_train = 4000;
  std::size_t n_test = 500;
  std::uint64_t seed = 1;
  grf::GeoPriorBox box;
};

struct GeneratedDataset {
  Dataset train;
  Dataset test;
  std::vector<std::string> skipped;  // "<split>/<index>: reason"
  std::string config_hash;
};

/// Draws pairs (m, s) with per-index seeded streams so any sample is
/// reproducible on its own. Solver failures are skipped and recorded.
GeneratedDataset generate_dataset(const DatasetSpec& spec, const ForwardConfig& config);

/// fields/<split>/<index>_m.fsdt, <index>_s.fsdt plus manifest.json.
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                   const ForwardConfig& config, const GeneratedDataset& data);

enum class DatasetPart { GeomodelOnly, Pairs };
/// Loads one split. GeomodelOnly never opens *_s.fsdt files; Pairs throws
/// std::runtime_error if any *_s.fsdt is missing. Every file opened is
/// appended to `opened` when given.
Dataset read_dataset(const std::filesystem::path& dir, const std::string& split, DatasetPart part,
                     std::vector<std::filesystem::path>* opened = nullptr);

}  // namespace fsd::sim
