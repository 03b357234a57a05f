#pragma once

// Iterative successive interference cancellation detector.
//
// Stage 1 is the bootstrap pass: each user is decoded straight off its own
// beam using the pilot-correlation delay and phase. Every later stage
// revisits the users in SIC order; for user k the current interference
// reconstruction of every other user (already-refreshed users at this
// stage, the rest from the previous stage) is scaled by the estimated
// coupling and subtracted from beam k, the phase is refreshed from the
// diagonal channel estimate, and the user is re-decoded. After each pass the
// full channel matrix estimate is recomputed from the raw beams and the new
// reconstructions.
//
// Optional signal combining augments the cancellation stages: the residual
// of every other beam (after removing all interference visible there) is
// weighted by the conjugate cross coupling and added to the cleaned main
// beam. The combined term is rotated onto the main beam's carrier (factor
// h_kk / |h_kk|) before the sum so that the maximum-ratio addition stays
// coherent for any carrier phase; for a real coupling matrix the factor is 1
// and the plain conjugate-weighted sum is recovered.
//
// Degenerate users (zero pilot correlation, zero diagonal estimate) are
// decoded without phase compensation and flagged in the diagnostics; the
// frame is never aborted.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mud/channel.hpp"
#include "mud/estimators.hpp"
#include "mud/fec.hpp"
#include "mud/waveform.hpp"

namespace mud {

enum class DecoderKind { viterbi, bcjr };
enum class SnrMode { genie, estimated };
enum class SicOrder { by_delay, by_index };

inline std::vector<double> default_snr_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 24; ++i) g.push_back(0.5 * i);
  return g;
}

struct DetectorConfig {
  std::size_t n_stages = 3;  // total decoding passes, stage 1 = bootstrap
  DecoderKind decoder = DecoderKind::viterbi;
  bool combining = false;
  std::size_t combine_from_stage = 2;  // first stage that adds combining
  SnrMode snr_mode = SnrMode::estimated;
  SicOrder sic_order = SicOrder::by_delay;
  std::vector<double> snr_grid = default_snr_grid();

  void validate() const {
    if (n_stages == 0) throw std::invalid_argument("need at least one stage");
    if (combine_from_stage < 2)
      throw std::invalid_argument(
          "combining starts at a cancellation stage (>= 2)");
    if (decoder == DecoderKind::bcjr && snr_mode == SnrMode::estimated) {
      if (snr_grid.empty()) throw std::invalid_argument("empty SNR grid");
      for (std::size_t i = 1; i < snr_grid.size(); ++i)
        if (!(snr_grid[i] > snr_grid[i - 1]))
          throw std::invalid_argument("SNR grid must be strictly ascending");
    }
  }
};

// Reconstructed transmit stream for one user: true pilot bits plus decoded
// payload, re-encoded, mapped, shaped, and placed at the estimated delay.
inline std::vector<cplx> synthesize_xhat(const BitVec& decoded_bits,
                                         std::size_t user, unsigned delay,
                                         const LinkSet& links) {
  if (user >= links.n_users())
    throw std::invalid_argument("user index out of range");
  const FrameSpec& fs = links.frame;
  const std::size_t payload_len = fs.payload_bits(links.code);
  if (decoded_bits.size() != fs.n_pilot + payload_len)
    throw std::invalid_argument("expected " +
                                std::to_string(fs.n_pilot + payload_len) +
                                " decoded bits, got " +
                                std::to_string(decoded_bits.size()));
  const BitVec payload(decoded_bits.begin() + fs.n_pilot, decoded_bits.end());
  const std::vector<cplx> symbols = build_frame(
      links.pilot_bits[user], payload, fs, links.code, links.interleavers[user]);
  return apply_delay(upsample_shape(symbols, fs.oversampling, fs.pulse), delay,
                     fs.grid_len());
}

// Subtract every other user's reconstructed contribution from beam k.
inline std::vector<cplx> cancel_interference(
    std::span<const cplx> beam, std::size_t k, const CMatrix& h_hat,
    const std::vector<std::vector<cplx>>& xhat) {
  if (h_hat.n != xhat.size())
    throw std::invalid_argument("channel estimate is " +
                                std::to_string(h_hat.n) + "x" +
                                std::to_string(h_hat.n) + " but there are " +
                                std::to_string(xhat.size()) +
                                " reconstructions");
  if (k >= xhat.size()) throw std::invalid_argument("user index out of range");
  for (const auto& x : xhat)
    if (x.size() != beam.size())
      throw std::invalid_argument("sample grids disagree: beam has " +
                                  std::to_string(beam.size()) +
                                  " samples, reconstruction has " +
                                  std::to_string(x.size()));
  std::vector<cplx> out(beam.begin(), beam.end());
  for (std::size_t l = 0; l < xhat.size(); ++l) {
    if (l == k) continue;
    const cplx h = h_hat(k, l);
    const auto& x = xhat[l];
    for (std::size_t j = 0; j < out.size(); ++j) out[j] -= h * x[j];
  }
  return out;
}

// Maximum-ratio addition of the other beams' residuals onto the cleaned
// main-beam signal of user k.
inline std::vector<cplx> combine_signals(
    const std::vector<std::vector<cplx>>& beams,
    std::span<const cplx> y_cleaned, std::size_t k, const CMatrix& h_hat,
    const std::vector<std::vector<cplx>>& xhat_prev) {
  const std::size_t n = beams.size();
  if (h_hat.n != n || xhat_prev.size() != n)
    throw std::invalid_argument("beam, channel, and reconstruction counts disagree");
  if (k >= n) throw std::invalid_argument("user index out of range");
  const std::size_t grid = y_cleaned.size();
  for (const auto& b : beams)
    if (b.size() != grid)
      throw std::invalid_argument("sample grids disagree across beams");
  for (const auto& x : xhat_prev)
    if (x.size() != grid)
      throw std::invalid_argument("sample grids disagree across reconstructions");

  std::vector<cplx> chi(grid, cplx{0.0, 0.0});
  std::vector<cplx> resid(grid);
  for (std::size_t kp = 0; kp < n; ++kp) {
    if (kp == k) continue;
    std::copy(beams[kp].begin(), beams[kp].end(), resid.begin());
    for (std::size_t l = 0; l < n; ++l) {
      if (l == k) continue;
      const cplx h = h_hat(kp, l);
      const auto& x = xhat_prev[l];
      for (std::size_t j = 0; j < grid; ++j) resid[j] -= h * x[j];
    }
    const cplx w = std::conj(h_hat(kp, k));
    for (std::size_t j = 0; j < grid; ++j) chi[j] += w * resid[j];
  }

  const cplx hkk = h_hat(k, k);
  const double mag = std::abs(hkk);
  const cplx align = mag > 0.0 ? hkk / mag : cplx{1.0, 0.0};
  std::vector<cplx> out(y_cleaned.begin(), y_cleaned.end());
  for (std::size_t j = 0; j < grid; ++j) out[j] += align * chi[j];
  return out;
}

struct StageTrace {
  std::vector<BitVec> decoded;          // per user, pilot region included
  std::vector<std::vector<cplx>> xhat;  // per user, on the common grid
  CMatrix h_hat;                        // recomputed after the stage
  std::vector<double> phase_used;       // rad
  std::vector<double> snr_used_db;      // NaN unless estimated + log-MAP
  std::vector<double> pilot_ber;        // decoded pilot bits vs known pilots
  double h_err_max = std::numeric_limits<double>::quiet_NaN();
};

struct DetectionResult {
  std::size_t n_pilot = 0;
  std::vector<unsigned> delay_hat;
  std::vector<std::size_t> sic_order;
  std::vector<std::uint8_t> degenerate;  // per user, sticky across stages
  std::vector<StageTrace> stages;

  // Payload decisions of a stage (0-based index into stages).
  BitVec payload(std::size_t stage, std::size_t user) const {
    const BitVec& d = stages.at(stage).decoded.at(user);
    return BitVec(d.begin() + static_cast<std::ptrdiff_t>(n_pilot), d.end());
  }
};

namespace detail {

struct UserDecode {
  BitVec bits;
  double snr_db = std::numeric_limits<double>::quiet_NaN();
};

inline UserDecode decode_user(std::span<const cplx> y_grid, std::size_t user,
                              unsigned delay, double phase,
                              const LinkSet& links, const DetectorConfig& cfg,
                              double genie_noise_var) {
  const FrameSpec& fs = links.frame;
  std::vector<cplx> obs =
      integrate_dump(y_grid, delay, fs.oversampling, fs.n_symbols());
  const cplx rot = std::polar(1.0, -phase);
  for (auto& o : obs) o *= rot;

  UserDecode out;
  double noise_var = 1.0;
  if (cfg.decoder == DecoderKind::bcjr) {
    if (cfg.snr_mode == SnrMode::estimated) {
      out.snr_db = estimate_snr(obs, links.pilot_bits[user], fs, links.code,
                                links.interleavers[user], cfg.snr_grid);
      noise_var = std::pow(10.0, -out.snr_db / 10.0);
    } else {
      noise_var = std::max(genie_noise_var, 1e-12);
    }
  }
  const std::vector<double> llrs =
      frame_llrs(obs, noise_var, fs, links.interleavers[user]);
  out.bits = cfg.decoder == DecoderKind::viterbi
                 ? viterbi_decode(llrs, links.code)
                 : bcjr_decode(llrs, noise_var, links.code).bits;
  return out;
}

}  // namespace detail

inline DetectionResult detect(const ReceivedSignal& rx, const LinkSet& links,
                              const DetectorConfig& cfg,
                              const ChannelRealization* truth = nullptr) {
  cfg.validate();
  const std::size_t n = links.n_users();
  const FrameSpec& fs = links.frame;
  if (rx.n_beams() != n)
    throw std::invalid_argument("expected " + std::to_string(n) +
                                " beams, got " + std::to_string(rx.n_beams()));
  if (rx.grid_len() != fs.grid_len())
    throw std::invalid_argument("beam grid length " +
                                std::to_string(rx.grid_len()) +
                                " does not match the frame grid " +
                                std::to_string(fs.grid_len()));

  std::vector<PilotReference> refs;
  refs.reserve(n);
  for (std::size_t u = 0; u < n; ++u)
    refs.push_back(
        PilotReference::make(links.pilot_bits[u], links.code, fs.oversampling));

  DetectionResult res;
  res.n_pilot = fs.n_pilot;
  res.delay_hat.resize(n);
  res.degenerate.assign(n, 0);
  std::vector<double> phase0(n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    res.delay_hat[u] = estimate_delay(rx.beams[u], refs[u], fs.oversampling);
    try {
      phase0[u] = estimate_phase_initial(rx.beams[u], refs[u], res.delay_hat[u]);
    } catch (const std::runtime_error&) {
      res.degenerate[u] = 1;
      phase0[u] = 0.0;
    }
  }

  res.sic_order.resize(n);
  std::iota(res.sic_order.begin(), res.sic_order.end(), std::size_t{0});
  if (cfg.sic_order == SicOrder::by_delay) {
    std::stable_sort(res.sic_order.begin(), res.sic_order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return res.delay_hat[a] < res.delay_hat[b];
                     });
  }

  const double genie_var =
      truth ? truth->noise_sigma * truth->noise_sigma /
                  static_cast<double>(fs.oversampling)
            : 1.0;

  auto pilot_ber_of = [&](const BitVec& decoded, std::size_t u) {
    std::size_t e = 0;
    for (std::size_t i = 0; i < fs.n_pilot; ++i)
      e += (decoded[i] ^ links.pilot_bits[u][i]) & 1u;
    return static_cast<double>(e) / static_cast<double>(fs.n_pilot);
  };
  auto h_err_of = [&](const CMatrix& h) {
    if (!truth) return std::numeric_limits<double>::quiet_NaN();
    double m = 0.0;
    for (std::size_t i = 0; i < h.a.size(); ++i)
      m = std::max(m, std::abs(h.a[i] - truth->coupling.a[i]));
    return m;
  };

  for (std::size_t s = 0; s < cfg.n_stages; ++s) {
    StageTrace st;
    st.decoded.resize(n);
    st.phase_used.assign(n, 0.0);
    st.snr_used_db.assign(n, std::numeric_limits<double>::quiet_NaN());
    st.pilot_ber.assign(n, 0.0);

    if (s == 0) {
      st.xhat.resize(n);
      for (std::size_t u : res.sic_order) {
        st.phase_used[u] = phase0[u];
        auto dec = detail::decode_user(rx.beams[u], u, res.delay_hat[u],
                                       phase0[u], links, cfg, genie_var);
        st.snr_used_db[u] = dec.snr_db;
        st.xhat[u] =
            synthesize_xhat(dec.bits, u, res.delay_hat[u], links);
        st.decoded[u] = std::move(dec.bits);
      }
    } else {
      const StageTrace& prev = res.stages.back();
      const std::vector<std::vector<cplx>>& xprev = prev.xhat;
      st.xhat = xprev;  // refreshed in SIC order below
      const bool combine =
          cfg.combining && (s + 1) >= cfg.combine_from_stage;
      for (std::size_t u : res.sic_order) {
        std::vector<cplx> y =
            cancel_interference(rx.beams[u], u, prev.h_hat, st.xhat);
        if (combine)
          y = combine_signals(rx.beams, y, u, prev.h_hat, xprev);
        double phase;
        try {
          phase = estimate_phase_iterative(prev.h_hat, u);
        } catch (const std::runtime_error&) {
          res.degenerate[u] = 1;
          phase = prev.phase_used[u];
        }
        st.phase_used[u] = phase;
        auto dec = detail::decode_user(y, u, res.delay_hat[u], phase, links,
                                       cfg, genie_var);
        st.snr_used_db[u] = dec.snr_db;
        st.xhat[u] = synthesize_xhat(dec.bits, u, res.delay_hat[u], links);
        st.decoded[u] = std::move(dec.bits);
      }
    }

    st.h_hat = CMatrix(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto row = estimate_channel_row(rx.beams[k], st.xhat);
      for (std::size_t l = 0; l < n; ++l) st.h_hat(k, l) = row[l];
    }
    st.h_err_max = h_err_of(st.h_hat);
    for (std::size_t u = 0; u < n; ++u)
      st.pilot_ber[u] = pilot_ber_of(st.decoded[u], u);

    res.stages.push_back(std::move(st));
  }
  return res;
}

}  // namespace mud
