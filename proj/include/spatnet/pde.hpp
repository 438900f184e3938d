#pragma once

#include <functional>
#include <vector>

#include "spatnet/core.hpp"
#include "spatnet/grid.hpp"

namespace spatnet {

/// Boundaries are always zero-flux (mirror ghost nodes on every face).
struct SolverOptions {
  double tolerance = 1e-8;       // sup-norm residual target
  int max_iterations = 500;      // outer (Picard) iterations; also bounds linear restarts
  double picard_damping = 1.0;   // in (0, 1]
  double inner_tolerance = 1e-12;  // relative L2 tolerance handed to the Krylov solver
  int max_inner_iterations = 5000;

  void check() const;
};

struct SolveInfo {
  int iterations = 0;
  double residual = 0.0;
};

/// Applies the spatial operator L = nu_s lap_x + nu_n d2_alpha + lambda d2_{x1 alpha}.
GridField apply_operator(const StructuralParams& params, const GridField& tau);

/// Sup-norm of nu_s lap + nu_n d2_a + lambda d2_{x1 a} - kappa tau + S.
double linear_residual(const StructuralParams& params, const GridField& tau, const GridField& S);
/// Sup-norm of the variant with lambda (d tau/d x1)(d tau/d alpha) in place of the mixed term.
double dgp_residual(const StructuralParams& params, const GridField& tau, const GridField& S);

/// Same lattice equations as steady_state_linear for a source that is constant
/// in x2, solved on the reduced (x1, alpha) lattice: cosine modes in alpha with
/// tridiagonal solves in x1 when lambda = 0, a banded LU otherwise.
GridField steady_state_linear_planar(const StructuralParams& params, const GridField& S,
                                     const SolverOptions& opts = {}, SolveInfo* info = nullptr);

/// `guess` (same lattice as S) warm-starts the Krylov iteration.
GridField steady_state_linear(const StructuralParams& params, const GridField& S,
                              const SolverOptions& opts = {}, SolveInfo* info = nullptr,
                              const GridField* guess = nullptr);

/// Damped Picard iteration on the first-derivative-product interaction.
GridField steady_state_dgp(const StructuralParams& params, const GridField& S,
                           const SolverOptions& opts = {}, SolveInfo* info = nullptr);

struct TransientResult {
  std::vector<double> times;
  std::vector<GridField> fields;
};

using TimeSource = std::function<GridField(double t)>;

/// Backward Euler in the operator, forward in the source:
/// (I - dt L + dt kappa) tau_{n+1} = tau_n + dt S(t_n). Stores every
/// `save_every`-th step plus the initial and final states.
TransientResult transient(const StructuralParams& params, const GridField& tau0,
                          const TimeSource& source, double dt, double horizon,
                          const SolverOptions& opts = {}, int save_every = 1);
TransientResult transient(const StructuralParams& params, const GridField& tau0,
                          const GridField& source, double dt, double horizon,
                          const SolverOptions& opts = {}, int save_every = 1);

/// Same time stepping for tau0 and a source constant in x2, on the reduced
/// (x1, alpha) lattice with one banded LU factorization.
TransientResult transient_planar(const StructuralParams& params, const GridField& tau0, const GridField& source,
                                 double dt, double horizon, int save_every = 1);

// Closed-form quantities and discrete-model nestings.

/// 1 + (nu_s + nu_n)/kappa + lambda^2 / (kappa (nu_s + nu_n)); 1 when nu_s + nu_n = 0.
double amplification_factor(const StructuralParams& params);

struct Ar1Coefficients {
  double rho;
  double beta;
};
Ar1Coefficients ar1_from_structural(double kappa, double dt);
double structural_from_ar1(double rho, double dt);

double half_life(double kappa);

struct EcmCoefficients {
  double alpha;  // adjustment speed kappa dt
  double beta;   // long-run multiplier 1/kappa
  double gamma;  // impact dt
};
EcmCoefficients ecm_from_structural(double kappa, double dt);

double sar_from_structural(double nu_s, double kappa, double dx, int n_neighbors);
double structural_from_sar(double rho, double kappa, double dx, int n_neighbors);

struct NetworkTeCoefficients {
  double beta;   // direct, 1/kappa
  double gamma;  // neighbour, nu_n/kappa
};
NetworkTeCoefficients network_te_coefficients(double nu_n, double kappa);

/// Event-time coefficients for k = -pre_len..post_len: 0 before, beta0 (1 - kappa dt)^k after.
std::vector<double> predicted_event_study(double beta0, double kappa, double dt, int pre_len,
                                          int post_len);

/// D = sigma^2 / (2 kappa).
double diffusion_from_volatility(double sigma_sq, double kappa);

}  // namespace spatnet
