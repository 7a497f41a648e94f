// SPDX-License-Identifier: Apache-2.0
//
// Diagonal state-space model: continuous parameters, zero-order-hold
// discretization, recurrent and convolutional scans, and the input-dependent
// (selective) scan with its exact adjoint.
//
// Continuous system (diagonal evolution E, per-state projections F, G):
//
//   dz/dt = E z(t) + F u(t),   v(t) = <G, z(t)>
//
// Zero-order hold with timescale delta, per state n:
//
//   E_bar[n] = exp(delta * E[n])
//   F_bar[n] = (exp(delta * E[n]) - 1) / (delta * E[n]) * delta * F[n]
//
// with F_bar[n] = delta * F[n] when |delta * E[n]| < kZohLimitThreshold.
//
// Every entry point exists for double (the default everywhere) and float.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace soar::ssm {

/// Below this |delta * E| the input gain uses its analytic limit delta * F.
inline constexpr double kZohLimitThreshold = 1e-8;

template <class Real>
struct BasicSsmParams {
  std::vector<Real> evolution;    // E, diagonal, length N
  std::vector<Real> input_proj;   // F, length N
  std::vector<Real> output_proj;  // G, length N
  Real delta{1};

  std::size_t state_dim() const noexcept { return evolution.size(); }
  /// Throws ContractError on empty/mismatched vectors, non-finite entries or delta <= 0.
  void validate() const;
};

template <class Real>
struct BasicDiscreteSsm {
  std::vector<Real> decay;       // E_bar
  std::vector<Real> input_gain;  // F_bar

  std::size_t state_dim() const noexcept { return decay.size(); }
};

/// Per-step parameters of the selective scan. The evolution vector is shared
/// by all steps; delta, F and G vary with the step index. F and G are stored
/// row-major as steps x state_dim.
template <class Real>
struct BasicSelectiveParams {
  std::vector<Real> evolution;    // length N
  std::vector<Real> delta;        // length M, all > 0
  std::vector<Real> input_proj;   // M x N
  std::vector<Real> output_proj;  // M x N

  std::size_t state_dim() const noexcept { return evolution.size(); }
  std::size_t steps() const noexcept { return delta.size(); }

  std::span<const Real> input_proj_at(std::size_t t) const {
    return std::span<const Real>(input_proj).subspan(t * state_dim(), state_dim());
  }
  std::span<const Real> output_proj_at(std::size_t t) const {
    return std::span<const Real>(output_proj).subspan(t * state_dim(), state_dim());
  }

  void validate() const;
};

template <class Real>
struct BasicScanResult {
  std::vector<Real> output;       // v_t, length M
  std::vector<Real> final_state;  // z_M, length N
};

/// Adjoints of <dv, selective_scan(...).output> with respect to every input.
template <class Real>
struct BasicSelectiveGrad {
  std::vector<Real> input;        // d/du, length M
  std::vector<Real> initial_state;  // d/dz0, length N
  std::vector<Real> evolution;    // d/dE, length N
  std::vector<Real> delta;        // d/d delta_t, length M
  std::vector<Real> input_proj;   // d/dF_t, M x N
  std::vector<Real> output_proj;  // d/dG_t, M x N
};

using SsmParams = BasicSsmParams<double>;
using DiscreteSsm = BasicDiscreteSsm<double>;
using SelectiveParams = BasicSelectiveParams<double>;
using ScanResult = BasicScanResult<double>;
using SelectiveGrad = BasicSelectiveGrad<double>;

/// Zero-order-hold discretization. Throws NumericError when exp overflows.
DiscreteSsm zoh_discretize(const SsmParams& params);
BasicDiscreteSsm<float> zoh_discretize(const BasicSsmParams<float>& params);

/// z_t = E_bar * z_{t-1} + F_bar * u_t, v_t = <G, z_t>, sequential from z0.
ScanResult scan_recurrent(const DiscreteSsm& disc, std::span<const double> output_proj,
                          std::span<const double> input, std::span<const double> initial_state);
BasicScanResult<float> scan_recurrent(const BasicDiscreteSsm<float>& disc,
                                      std::span<const float> output_proj,
                                      std::span<const float> input,
                                      std::span<const float> initial_state);

/// K_j = <G, E_bar^j * F_bar> for j = 0..length-1.
std::vector<double> build_conv_kernel(const DiscreteSsm& disc, std::span<const double> output_proj,
                                      std::size_t length);
std::vector<float> build_conv_kernel(const BasicDiscreteSsm<float>& disc,
                                     std::span<const float> output_proj, std::size_t length);

/// Causal convolution v_t = sum_{j<=t} K_j u_{t-j} (zero initial state).
std::vector<double> scan_convolutional(std::span<const double> kernel,
                                       std::span<const double> input);
std::vector<float> scan_convolutional(std::span<const float> kernel,
                                      std::span<const float> input);

/// Discretizes (E, F_t) with delta_t at every step, then advances the recurrence.
ScanResult selective_scan(const SelectiveParams& sel, std::span<const double> input,
                          std::span<const double> initial_state);
BasicScanResult<float> selective_scan(const BasicSelectiveParams<float>& sel,
                                      std::span<const float> input,
                                      std::span<const float> initial_state);

SelectiveGrad selective_scan_grad(const SelectiveParams& sel, std::span<const double> input,
                                  std::span<const double> initial_state,
                                  std::span<const double> output_grad);
BasicSelectiveGrad<float> selective_scan_grad(const BasicSelectiveParams<float>& sel,
                                              std::span<const float> input,
                                              std::span<const float> initial_state,
                                              std::span<const float> output_grad);

/// Multiply-adds charged to one scan step of one channel: state update (2) and
/// output contraction (1) per state entry. Shared by the FLOP counter and `bench`.
constexpr std::size_t scan_macs(std::size_t steps, std::size_t state_dim, std::size_t channels) {
  return 3 * steps * state_dim * channels;
}

}  // namespace soar::ssm
