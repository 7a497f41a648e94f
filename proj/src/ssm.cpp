// SPDX-License-Identifier: Apache-2.0

#include "soar/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "soar/errors.hpp"

namespace soar::ssm {
namespace {

template <class Real>
bool all_finite(std::span<const Real> values) {
  for (Real v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require(bool condition, const char* what) {
  if (!condition) throw ContractError(what);
}

// (exp(x) - 1) / x, the ZOH input-gain factor; 1 in the small-|x| limit.
template <class Real>
Real zoh_gain_factor(Real x) {
  if (std::abs(x) < static_cast<Real>(kZohLimitThreshold)) return Real(1);
  return std::expm1(x) / x;
}

// d/dx of the product delta * zoh_gain_factor(delta * E) w.r.t. E, divided by
// delta^2: (x e^x - e^x + 1) / x^2. Series near zero avoids cancellation.
template <class Real>
Real zoh_gain_evolution_factor(Real x) {
  if (std::abs(x) < Real(1e-2)) {
    // sum_k x^k (k + 1) / (k + 2)!
    Real term = Real(1);
    Real factorial = Real(2);
    Real sum = Real(0);
    for (int k = 0; k < 10; ++k) {
      sum += term * Real(k + 1) / factorial;
      term *= x;
      factorial *= Real(k + 3);
    }
    return sum;
  }
  return (x * std::exp(x) - std::expm1(x)) / (x * x);
}

template <class Real>
void discretize_entry(Real evolution, Real input_proj, Real delta, Real& decay, Real& input_gain) {
  const Real x = delta * evolution;
  decay = std::exp(x);
  input_gain = zoh_gain_factor(x) * delta * input_proj;
  if (!std::isfinite(decay) || !std::isfinite(input_gain)) {
    throw NumericError("zero-order hold overflow at delta*E = " + std::to_string(x));
  }
}

template <class Real>
BasicDiscreteSsm<Real> discretize_impl(const BasicSsmParams<Real>& params) {
  params.validate();
  const std::size_t n = params.state_dim();
  BasicDiscreteSsm<Real> disc{std::vector<Real>(n), std::vector<Real>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    discretize_entry(params.evolution[i], params.input_proj[i], params.delta, disc.decay[i],
                     disc.input_gain[i]);
  }
  return disc;
}

template <class Real>
BasicScanResult<Real> scan_recurrent_impl(const BasicDiscreteSsm<Real>& disc,
                                          std::span<const Real> output_proj,
                                          std::span<const Real> input,
                                          std::span<const Real> initial_state) {
  const std::size_t n = disc.state_dim();
  require(n >= 1 && disc.input_gain.size() == n, "scan_recurrent: malformed discrete system");
  require(output_proj.size() == n, "scan_recurrent: output projection length != state_dim");
  require(initial_state.size() == n, "scan_recurrent: initial state length != state_dim");
  require(!input.empty(), "scan_recurrent: empty input");

  BasicScanResult<Real> result{std::vector<Real>(input.size()),
                               std::vector<Real>(initial_state.begin(), initial_state.end())};
  auto& z = result.final_state;
  for (std::size_t t = 0; t < input.size(); ++t) {
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = disc.decay[i] * z[i] + disc.input_gain[i] * input[t];
      acc += output_proj[i] * z[i];
    }
    result.output[t] = acc;
  }
  return result;
}

template <class Real>
std::vector<Real> build_kernel_impl(const BasicDiscreteSsm<Real>& disc,
                                    std::span<const Real> output_proj, std::size_t length) {
  const std::size_t n = disc.state_dim();
  require(length >= 1, "build_conv_kernel: length must be >= 1");
  require(disc.input_gain.size() == n && output_proj.size() == n,
          "build_conv_kernel: dimension mismatch");
  std::vector<Real> kernel(length, Real(0));
  // power[i] = E_bar[i]^j * F_bar[i]
  std::vector<Real> power(disc.input_gain.begin(), disc.input_gain.end());
  for (std::size_t j = 0; j < length; ++j) {
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += output_proj[i] * power[i];
      power[i] *= disc.decay[i];
    }
    kernel[j] = acc;
  }
  return kernel;
}

template <class Real>
std::vector<Real> scan_conv_impl(std::span<const Real> kernel, std::span<const Real> input) {
  require(kernel.size() == input.size(), "scan_convolutional: kernel and input lengths differ");
  std::vector<Real> out(input.size(), Real(0));
  for (std::size_t t = 0; t < input.size(); ++t) {
    Real acc = 0;
    for (std::size_t j = 0; j <= t; ++j) acc += kernel[j] * input[t - j];
    out[t] = acc;
  }
  return out;
}

template <class Real>
void check_selective_inputs(const BasicSelectiveParams<Real>& sel, std::span<const Real> input,
                            std::span<const Real> initial_state) {
  sel.validate();
  require(input.size() == sel.steps(), "selective_scan: input length != number of steps");
  require(initial_state.size() == sel.state_dim(),
          "selective_scan: initial state length != state_dim");
}

template <class Real>
BasicScanResult<Real> selective_scan_impl(const BasicSelectiveParams<Real>& sel,
                                          std::span<const Real> input,
                                          std::span<const Real> initial_state) {
  check_selective_inputs(sel, input, initial_state);
  const std::size_t n = sel.state_dim();
  const std::size_t m = sel.steps();
  BasicScanResult<Real> result{std::vector<Real>(m),
                               std::vector<Real>(initial_state.begin(), initial_state.end())};
  auto& z = result.final_state;
  for (std::size_t t = 0; t < m; ++t) {
    const auto f = sel.input_proj_at(t);
    const auto g = sel.output_proj_at(t);
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      Real decay, gain;
      discretize_entry(sel.evolution[i], f[i], sel.delta[t], decay, gain);
      z[i] = decay * z[i] + gain * input[t];
      acc += g[i] * z[i];
    }
    result.output[t] = acc;
  }
  return result;
}

// Reverse-mode pass. With a_t = exp(delta_t E), b_t = delta_t phi(delta_t E) F_t
// and lambda_t = dL/dz_t:
//   lambda_t = dv_t G_t + a_{t+1} * lambda_{t+1}
//   dG_t = dv_t z_t,  du_t = <lambda_t, b_t>,  dz0 = a_1 * lambda_1
//   da_t = lambda_t z_{t-1},  db_t = lambda_t u_t
//   d(delta_t): da * E a + db * F exp(x);  dE: da * delta a + db * F delta^2 psi(x)
template <class Real>
BasicSelectiveGrad<Real> selective_grad_impl(const BasicSelectiveParams<Real>& sel,
                                             std::span<const Real> input,
                                             std::span<const Real> initial_state,
                                             std::span<const Real> output_grad) {
  check_selective_inputs(sel, input, initial_state);
  const std::size_t n = sel.state_dim();
  const std::size_t m = sel.steps();
  require(output_grad.size() == m, "selective_scan_grad: output gradient length != steps");

  // Forward pass, keeping every state (z_0 .. z_M) and the discretized terms.
  std::vector<Real> states((m + 1) * n);
  std::vector<Real> decay(m * n), gain(m * n);
  std::copy(initial_state.begin(), initial_state.end(), states.begin());
  for (std::size_t t = 0; t < m; ++t) {
    const auto f = sel.input_proj_at(t);
    for (std::size_t i = 0; i < n; ++i) {
      discretize_entry(sel.evolution[i], f[i], sel.delta[t], decay[t * n + i], gain[t * n + i]);
      states[(t + 1) * n + i] =
          decay[t * n + i] * states[t * n + i] + gain[t * n + i] * input[t];
    }
  }

  BasicSelectiveGrad<Real> grad{std::vector<Real>(m, Real(0)), std::vector<Real>(n, Real(0)),
                                std::vector<Real>(n, Real(0)), std::vector<Real>(m, Real(0)),
                                std::vector<Real>(m * n, Real(0)),
                                std::vector<Real>(m * n, Real(0))};
  std::vector<Real> lambda(n, Real(0));
  for (std::size_t step = m; step-- > 0;) {
    const auto f = sel.input_proj_at(step);
    const auto g = sel.output_proj_at(step);
    const Real dt = sel.delta[step];
    Real du = 0;
    Real ddelta = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = step * n + i;
      // lambda currently holds a_{t+1} * lambda_{t+1}
      lambda[i] += output_grad[step] * g[i];
      grad.output_proj[k] = output_grad[step] * states[(step + 1) * n + i];

      const Real x = dt * sel.evolution[i];
      const Real a = decay[k];
      const Real d_decay = lambda[i] * states[step * n + i];
      const Real d_gain = lambda[i] * input[step];

      du += lambda[i] * gain[k];
      grad.input_proj[k] = d_gain * zoh_gain_factor(x) * dt;
      ddelta += d_decay * sel.evolution[i] * a + d_gain * f[i] * a;
      grad.evolution[i] +=
          d_decay * dt * a + d_gain * f[i] * dt * dt * zoh_gain_evolution_factor(x);

      lambda[i] *= a;
    }
    grad.input[step] = du;
    grad.delta[step] = ddelta;
  }
  grad.initial_state = lambda;
  return grad;
}

}  // namespace

template <class Real>
void BasicSsmParams<Real>::validate() const {
  const std::size_t n = state_dim();
  require(n >= 1, "SsmParams: state_dim must be >= 1");
  require(input_proj.size() == n && output_proj.size() == n,
          "SsmParams: E, F, G must share length state_dim");
  require(all_finite<Real>(evolution) && all_finite<Real>(input_proj) &&
              all_finite<Real>(output_proj),
          "SsmParams: non-finite entry");
  require(std::isfinite(delta) && delta > 0, "SsmParams: delta must be finite and > 0");
}

template <class Real>
void BasicSelectiveParams<Real>::validate() const {
  const std::size_t n = state_dim();
  const std::size_t m = steps();
  require(n >= 1, "SelectiveParams: state_dim must be >= 1");
  require(m >= 1, "SelectiveParams: at least one step required");
  require(input_proj.size() == m * n && output_proj.size() == m * n,
          "SelectiveParams: per-step F/G must be steps x state_dim");
  require(all_finite<Real>(evolution) && all_finite<Real>(input_proj) &&
              all_finite<Real>(output_proj),
          "SelectiveParams: non-finite entry");
  for (Real d : delta) {
    require(std::isfinite(d) && d > 0, "SelectiveParams: every delta_t must be finite and > 0");
  }
}

template struct BasicSsmParams<double>;
template struct BasicSsmParams<float>;
template struct BasicSelectiveParams<double>;
template struct BasicSelectiveParams<float>;

DiscreteSsm zoh_discretize(const SsmParams& params) { return discretize_impl(params); }
BasicDiscreteSsm<float> zoh_discretize(const BasicSsmParams<float>& params) {
  return discretize_impl(params);
}

ScanResult scan_recurrent(const DiscreteSsm& disc, std::span<const double> output_proj,
                          std::span<const double> input, std::span<const double> initial_state) {
  return scan_recurrent_impl(disc, output_proj, input, initial_state);
}
BasicScanResult<float> scan_recurrent(const BasicDiscreteSsm<float>& disc,
                                      std::span<const float> output_proj,
                                      std::span<const float> input,
                                      std::span<const float> initial_state) {
  return scan_recurrent_impl(disc, output_proj, input, initial_state);
}

std::vector<double> build_conv_kernel(const DiscreteSsm& disc, std::span<const double> output_proj,
                                      std::size_t length) {
  return build_kernel_impl(disc, output_proj, length);
}
std::vector<float> build_conv_kernel(const BasicDiscreteSsm<float>& disc,
                                     std::span<const float> output_proj, std::size_t length) {
  return build_kernel_impl(disc, output_proj, length);
}

std::vector<double> scan_convolutional(std::span<const double> kernel,
                                       std::span<const double> input) {
  return scan_conv_impl(kernel, input);
}
std::vector<float> scan_convolutional(std::span<const float> kernel,
                                      std::span<const float> input) {
  return scan_conv_impl(kernel, input);
}

ScanResult selective_scan(const SelectiveParams& sel, std::span<const double> input,
                          std::span<const double> initial_state) {
  return selective_scan_impl(sel, input, initial_state);
}
BasicScanResult<float> selective_scan(const BasicSelectiveParams<float>& sel,
                                      std::span<const float> input,
                                      std::span<const float> initial_state) {
  return selective_scan_impl(sel, input, initial_state);
}

SelectiveGrad selective_scan_grad(const SelectiveParams& sel, std::span<const double> input,
                                  std::span<const double> initial_state,
                                  std::span<const double> output_grad) {
  return selective_grad_impl(sel, input, initial_state, output_grad);
}
BasicSelectiveGrad<float> selective_scan_grad(const BasicSelectiveParams<float>& sel,
                                              std::span<const float> input,
                                              std::span<const float> initial_state,
                                              std::span<const float> output_grad) {
  return selective_grad_impl(sel, input, initial_state, output_grad);
}

}  // namespace soar::ssm
