#pragma once

// Pilot-aided estimators: delay, carrier phase, SNR, and channel matrix.
//
// All of them work per beam on the common sample grid. The delay search
// correlates the raw beam against the known coded pilot waveform at every
// integer offset inside one symbol; phase comes from the argument of that
// correlation (initially) or of the diagonal channel estimate (once one
// exists); SNR is picked from a candidate grid by decoding the frame at each
// hypothesis and counting errors against the known pilot bits; the channel
// row is a normalized correlation of the beam with every user's
// reconstructed waveform.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mud/channel.hpp"
#include "mud/fec.hpp"
#include "mud/waveform.hpp"

namespace mud {

// Map an angle into [0, 2*pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a = 0.0;
  return a;
}

// Known pilot section of one user's frame, at symbol and at sample rate.
struct PilotReference {
  std::vector<cplx> symbols;  // n_pilot coded pilot symbols
  std::vector<cplx> replica;  // the same, held for oversampling samples each

  static PilotReference make(const BitVec& pilot_bits, const CodeSpec& code,
                             std::size_t oversampling) {
    PilotReference ref;
    ref.symbols = qpsk_map(conv_encode_prefix(pilot_bits, code));
    ref.replica = upsample_shape(ref.symbols, oversampling);
    return ref;
  }
};

namespace detail {

inline cplx pilot_correlation(std::span<const cplx> beam,
                              const PilotReference& ref, std::size_t offset) {
  cplx acc = 0.0;
  for (std::size_t j = 0; j < ref.replica.size(); ++j)
    acc += beam[offset + j] * std::conj(ref.replica[j]);
  return acc;
}

}  // namespace detail

// Integer delay in [0, oversampling) maximizing |Re| + |Im| of the pilot
// correlation. Ties break toward the smallest delay.
inline unsigned estimate_delay(std::span<const cplx> beam,
                               const PilotReference& ref,
                               std::size_t oversampling) {
  if (oversampling == 0)
    throw std::invalid_argument("oversampling must be positive");
  if (beam.size() < ref.replica.size() + oversampling - 1)
    throw std::invalid_argument("beam too short for the delay search");
  unsigned best = 0;
  double best_metric = -1.0;
  for (unsigned d = 0; d < oversampling; ++d) {
    const cplx c = detail::pilot_correlation(beam, ref, d);
    const double metric = std::abs(c.real()) + std::abs(c.imag());
    if (metric > best_metric) {
      best_metric = metric;
      best = d;
    }
  }
  return best;
}

// Argument of the pilot correlation at the estimated delay, in [0, 2*pi).
inline double estimate_phase_initial(std::span<const cplx> beam,
                                     const PilotReference& ref,
                                     unsigned delay) {
  if (beam.size() < ref.replica.size() + delay)
    throw std::invalid_argument("beam too short for the pilot correlation");
  const cplx c = detail::pilot_correlation(beam, ref, delay);
  if (c.real() == 0.0 && c.imag() == 0.0)
    throw std::runtime_error("pilot correlation degenerate");
  return wrap_angle(std::arg(c));
}

// Phase refresh from a diagonal channel estimate.
inline double estimate_phase_iterative(const CMatrix& h_hat, std::size_t k) {
  if (k >= h_hat.n) throw std::invalid_argument("user index out of range");
  const cplx h = h_hat(k, k);
  if (h.real() == 0.0 && h.imag() == 0.0)
    throw std::runtime_error("diagonal channel estimate degenerate");
  return wrap_angle(std::arg(h));
}

// One row of the channel estimate: correlate beam k with every user's
// reconstructed sample stream, normalized by twice the grid length (QPSK
// symbols have energy 2 per sample).
inline std::vector<cplx> estimate_channel_row(
    std::span<const cplx> beam, const std::vector<std::vector<cplx>>& xhat) {
  if (xhat.empty()) throw std::invalid_argument("need at least one user");
  for (const auto& x : xhat)
    if (x.size() != beam.size())
      throw std::invalid_argument(
          "sample grids disagree: beam has " + std::to_string(beam.size()) +
          " samples, reconstruction has " + std::to_string(x.size()));
  std::vector<cplx> row(xhat.size());
  const double norm = 1.0 / (2.0 * static_cast<double>(beam.size()));
  for (std::size_t l = 0; l < xhat.size(); ++l) {
    cplx acc = 0.0;
    const auto& x = xhat[l];
    for (std::size_t j = 0; j < beam.size(); ++j)
      acc += beam[j] * std::conj(x[j]);
    row[l] = acc * norm;
  }
  return row;
}

// Es/N0 estimate in dB, chosen from an ascending candidate grid. Each
// candidate implies a symbol-rate noise variance 10^(-c/10); the frame is
// decoded (log-MAP) under that hypothesis and the candidate whose decoded
// pilot bits disagree least with the known pilots wins. Ties break toward
// the first candidate, so toward the lowest SNR. Scanning stops early once
// a candidate decodes the pilots exactly, which no later candidate can beat.
inline double estimate_snr(std::span<const cplx> symbol_obs,
                           const BitVec& pilot_bits, const FrameSpec& frame,
                           const CodeSpec& code, const InterleaverSpec& il,
                           const std::vector<double>& grid_db) {
  if (grid_db.empty()) throw std::invalid_argument("empty SNR grid");
  if (pilot_bits.size() != frame.n_pilot)
    throw std::invalid_argument("expected " + std::to_string(frame.n_pilot) +
                                " pilot bits, got " +
                                std::to_string(pilot_bits.size()));
  // Demap once at unit variance; per candidate the LLRs only rescale.
  const std::vector<double> base = frame_llrs(symbol_obs, 1.0, frame, il);
  std::vector<double> llrs(base.size());
  double best_db = grid_db.front();
  std::size_t best_errors = pilot_bits.size() + 1;
  for (double cand : grid_db) {
    const double noise_var = std::pow(10.0, -cand / 10.0);
    const double scale = 1.0 / noise_var;
    for (std::size_t i = 0; i < base.size(); ++i) llrs[i] = base[i] * scale;
    const BcjrResult dec = bcjr_decode(llrs, noise_var, code);
    std::size_t errors = 0;
    for (std::size_t i = 0; i < pilot_bits.size(); ++i)
      errors += (dec.bits[i] ^ pilot_bits[i]) & 1u;
    if (errors < best_errors) {
      best_errors = errors;
      best_db = cand;
      if (errors == 0) break;
    }
  }
  return best_db;
}

// Per-user estimator outputs for one detection stage.
struct EstimateSet {
  std::vector<unsigned> delays;
  std::vector<double> phases;
  std::vector<double> snr_db;
  CMatrix h;
};

}  // namespace mud
