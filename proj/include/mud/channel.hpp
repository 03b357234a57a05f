#pragma once

// Multibeam uplink channel: coupling matrix, delays, carrier phases, AWGN.
//
// Beam k observes  y_k = sum_l h(k, l) x_l + z_k  sample by sample, where
// h(k, l) = w(k, l) a_l exp(j phi_l). The antenna pattern w has unit
// diagonal and magnitude mu off the diagonal; every user's phase multiplies
// its whole column, so the interference a beam sees is phase-coherent with
// the user that caused it.
//
// SNR convention: Es/N0 in dB, with Es the desired user's symbol energy
// integrated over its own beam (oversampling * amplitude^2) and N0 = 2 *
// sigma^2 the two-sided noise power per complex sample. After the
// integrate-and-dump the symbol-rate noise variance per component is
// sigma^2 / oversampling, i.e. 10^(-snr_db / 10) for unit amplitude.

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mud/rng.hpp"
#include "mud/waveform.hpp"

namespace mud {

struct CMatrix {
  std::size_t n = 0;
  std::vector<cplx> a;

  CMatrix() = default;
  explicit CMatrix(std::size_t dim) : n(dim), a(dim * dim, cplx{0.0, 0.0}) {}

  cplx& operator()(std::size_t r, std::size_t c) { return a[r * n + c]; }
  const cplx& operator()(std::size_t r, std::size_t c) const {
    return a[r * n + c];
  }
};

// Per-component noise standard deviation at the sample rate for a target
// Es/N0 in dB.
inline double noise_sigma_for_snr(double snr_db, std::size_t oversampling,
                                  double amplitude = 1.0) {
  const double es = static_cast<double>(oversampling) * amplitude * amplitude;
  return std::sqrt(es / std::pow(10.0, snr_db / 10.0));
}

struct ChannelOptions {
  // Give each off-diagonal antenna weight its own random phase instead of
  // the real value mu.
  bool offdiag_random_phase = false;
};

struct ChannelRealization {
  CMatrix coupling;              // h(k, l), row = beam, column = user
  std::vector<unsigned> delays;  // samples, one per user, in [0, oversampling)
  std::vector<double> phases;    // rad, one per user
  std::vector<double> amplitudes;
  double noise_sigma = 0.0;      // per component, sample rate

  std::size_t n_users() const { return delays.size(); }
};

inline ChannelRealization make_channel(std::size_t n_users, double mu,
                                       const std::vector<double>& phases,
                                       const std::vector<double>& amplitudes,
                                       double snr_db, const FrameSpec& frame,
                                       std::uint64_t seed,
                                       const ChannelOptions& opt = {}) {
  if (n_users == 0) throw std::invalid_argument("need at least one user");
  if (!(mu >= 0.0) || mu >= 1.0)
    throw std::invalid_argument("interference coefficient must lie in [0, 1)");
  if (phases.size() != n_users)
    throw std::invalid_argument("expected " + std::to_string(n_users) +
                                " phases, got " +
                                std::to_string(phases.size()));
  std::vector<double> amps = amplitudes;
  if (amps.empty()) amps.assign(n_users, 1.0);
  if (amps.size() != n_users)
    throw std::invalid_argument("expected " + std::to_string(n_users) +
                                " amplitudes, got " +
                                std::to_string(amps.size()));
  for (double a : amps)
    if (!(a > 0.0)) throw std::invalid_argument("amplitudes must be positive");

  ChannelRealization ch;
  ch.phases = phases;
  ch.amplitudes = amps;
  ch.noise_sigma = noise_sigma_for_snr(snr_db, frame.oversampling);

  SplitMix64 dg(substream(seed, {tag::delay}));
  ch.delays.resize(n_users);
  for (auto& d : ch.delays)
    d = dg.below(static_cast<std::uint32_t>(frame.oversampling));

  SplitMix64 wg(substream(seed, {tag::channel}));
  ch.coupling = CMatrix(n_users);
  for (std::size_t k = 0; k < n_users; ++k) {
    for (std::size_t l = 0; l < n_users; ++l) {
      cplx w;
      if (k == l) {
        w = 1.0;
      } else if (opt.offdiag_random_phase) {
        w = std::polar(mu, wg.angle());
      } else {
        w = mu;
      }
      ch.coupling(k, l) = w * std::polar(amps[l], phases[l]);
    }
  }
  return ch;
}

struct ReceivedSignal {
  std::vector<std::vector<cplx>> beams;  // n_users x grid_len
  std::size_t oversampling = 0;
  std::size_t n_symbols = 0;

  std::size_t n_beams() const { return beams.size(); }
  std::size_t grid_len() const { return beams.empty() ? 0 : beams[0].size(); }
};

// Mix the delayed per-user sample streams through the coupling matrix and
// add white Gaussian noise. Noise is drawn beam-major then sample-major,
// real before imaginary, so a given rng seed pins the exact realization.
inline ReceivedSignal transmit(const std::vector<std::vector<cplx>>& streams,
                               const ChannelRealization& chan,
                               const FrameSpec& frame, SplitMix64& noise_rng) {
  const std::size_t k_users = chan.n_users();
  if (streams.size() != k_users)
    throw std::invalid_argument("expected " + std::to_string(k_users) +
                                " user streams, got " +
                                std::to_string(streams.size()));
  const std::size_t grid = frame.grid_len();
  for (const auto& s : streams)
    if (s.size() != grid)
      throw std::invalid_argument("user stream length " +
                                  std::to_string(s.size()) +
                                  " does not match the grid length " +
                                  std::to_string(grid));

  ReceivedSignal rx;
  rx.oversampling = frame.oversampling;
  rx.n_symbols = frame.n_symbols();
  rx.beams.assign(k_users, std::vector<cplx>(grid, cplx{0.0, 0.0}));
  for (std::size_t k = 0; k < k_users; ++k) {
    auto& beam = rx.beams[k];
    for (std::size_t l = 0; l < k_users; ++l) {
      const cplx h = chan.coupling(k, l);
      const auto& x = streams[l];
      for (std::size_t j = 0; j < grid; ++j) beam[j] += h * x[j];
    }
    if (chan.noise_sigma > 0.0) {
      for (std::size_t j = 0; j < grid; ++j)
        beam[j] += chan.noise_sigma * noise_rng.gaussian_cplx();
    }
  }
  return rx;
}

}  // namespace mud
