// Acceptance gate: ten end-to-end checks, one PASS/FAIL line each.
// Exits nonzero if any check fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mud/mud.hpp"

using namespace mud;
using clock_type = std::chrono::steady_clock;

namespace {

int g_failed = 0;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

void report(int idx, bool ok, const std::string& label, double secs) {
  if (!ok) ++g_failed;
  std::printf("%s  %2d  %s (%.1f s)\n", ok ? "PASS" : "FAIL", idx,
              label.c_str(), secs);
  std::fflush(stdout);
}

double inf() { return std::numeric_limits<double>::infinity(); }

// ---------------------------------------------------------------- 1 -----

// Every 8-bit message under 1000 shared noise draws: Viterbi must attain
// the exhaustive maximum-likelihood metric and the log-MAP hard decisions
// must match exhaustive bitwise-posterior signs.
bool codec_oracle(std::string& why) {
  const CodeSpec code;
  const std::size_t k = 8;
  const std::size_t n_msgs = std::size_t{1} << k;
  const std::size_t n_coded = 2 * (k + code.memory());

  std::vector<std::vector<double>> signs(n_msgs);  // BPSK codewords
  std::vector<BitVec> msgs(n_msgs);
  for (std::size_t m = 0; m < n_msgs; ++m) {
    msgs[m].resize(k);
    for (std::size_t i = 0; i < k; ++i) msgs[m][i] = (m >> i) & 1u;
    const BitVec cw = conv_encode(msgs[m], code);
    signs[m].resize(n_coded);
    for (std::size_t i = 0; i < n_coded; ++i) signs[m][i] = cw[i] ? -1.0 : 1.0;
  }

  std::vector<double> noise(n_coded), llr(n_coded), metric(n_msgs);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SplitMix64 g(substream(404, {seed}));
    for (auto& x : noise) x = g.gaussian();
    for (std::size_t m = 0; m < n_msgs; ++m) {
      for (std::size_t i = 0; i < n_coded; ++i)
        llr[i] = 2.0 * (signs[m][i] + noise[i]);

      double best = -1e300;
      for (std::size_t c = 0; c < n_msgs; ++c) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n_coded; ++i) dot += llr[i] * signs[c][i];
        metric[c] = dot;
        best = std::max(best, dot);
      }

      const BitVec vit = viterbi_decode(llr, code);
      const BitVec vit_cw = conv_encode(vit, code);
      double vit_metric = 0.0;
      for (std::size_t i = 0; i < n_coded; ++i)
        vit_metric += llr[i] * (vit_cw[i] ? -1.0 : 1.0);
      if (vit_metric < best - 1e-9) {
        why = "Viterbi missed the ML metric at seed " + std::to_string(seed);
        return false;
      }

      // Bitwise posteriors by exhaustive summation, log-domain with the
      // usual max shift. gamma in the decoder is half the correlation.
      double p0[8] = {}, p1[8] = {};
      for (std::size_t c = 0; c < n_msgs; ++c) {
        const double e = std::exp(0.5 * (metric[c] - best));
        for (std::size_t i = 0; i < k; ++i)
          ((c >> i) & 1u ? p1[i] : p0[i]) += e;
      }
      const BitVec map = bcjr_decode(llr, 1.0, code).bits;
      for (std::size_t i = 0; i < k; ++i) {
        const double oracle = std::log(p0[i]) - std::log(p1[i]);
        if (std::abs(oracle) < 1e-9) continue;  // numerically tied bit
        if (map[i] != (oracle < 0.0 ? 1 : 0)) {
          why = "log-MAP bit " + std::to_string(i) + " disagrees at seed " +
                std::to_string(seed);
          return false;
        }
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------- 2 -----

bool clean_identity(std::string& why) {
  ExperimentConfig cfg;  // 5 users, mu 0.25, 3 stages
  const LinkSet links = LinkSet::make(cfg.users, cfg.frame, cfg.code, cfg.seed);
  for (std::size_t f = 0; f < 100; ++f) {
    const auto oc = run_frame(cfg, links, 0, inf(), f);
    for (std::size_t s = 0; s < oc.stage_errors.size(); ++s)
      if (oc.stage_errors[s] != 0) {
        why = "frame " + std::to_string(f) + " stage " + std::to_string(s + 1) +
              " had " + std::to_string(oc.stage_errors[s]) + " bit errors";
        return false;
      }
  }
  return true;
}

// ---------------------------------------------------------------- 3 -----

double mean_delay_fraction(ExperimentConfig cfg, double snr_db,
                           std::size_t frames) {
  cfg.detector.n_stages = 1;  // the delay estimate is formed up front
  const LinkSet links = LinkSet::make(cfg.users, cfg.frame, cfg.code, cfg.seed);
  std::uint64_t err = 0;
  for (std::size_t f = 0; f < frames; ++f)
    err += run_frame(cfg, links, 0, snr_db, f).delay_error_samples;
  return static_cast<double>(err) /
         (static_cast<double>(frames) * static_cast<double>(cfg.users) *
          static_cast<double>(cfg.frame.oversampling));
}

bool delay_estimator(std::string& why) {
  const CodeSpec code;
  const FrameSpec frame;
  // Exact recovery on a clean single-user beam, all four grid offsets.
  const LinkSet ls = LinkSet::make(1, frame, code, 77);
  SplitMix64 pg(5);
  BitVec payload(frame.payload_bits(code));
  for (auto& b : payload) b = pg.bit();
  const auto symbols = build_frame(ls.pilot_bits[0], payload, frame, code,
                                   ls.interleavers[0]);
  const auto ref = PilotReference::make(ls.pilot_bits[0], code,
                                        frame.oversampling);
  for (unsigned d = 0; d < frame.oversampling; ++d) {
    auto beam = apply_delay(upsample_shape(symbols, frame.oversampling), d,
                            frame.grid_len());
    for (auto& v : beam) v *= std::polar(1.0, 0.9);
    if (estimate_delay(beam, ref, frame.oversampling) != d) {
      why = "missed clean delay " + std::to_string(d);
      return false;
    }
  }

  // Fractional timing error falls with SNR under full co-channel load.
  ExperimentConfig cfg;
  const std::size_t frames = 2000;
  const double f0 = mean_delay_fraction(cfg, 0.0, frames);
  const double f4 = mean_delay_fraction(cfg, 4.0, frames);
  const double f8 = mean_delay_fraction(cfg, 8.0, frames);
  if (!(f0 > f4 && f4 > f8)) {
    why = "delay error not decreasing: " + std::to_string(f0) + " " +
          std::to_string(f4) + " " + std::to_string(f8);
    return false;
  }

  // Stronger co-channel coupling degrades the estimate at fixed SNR.
  ExperimentConfig heavy;
  heavy.mu = 0.4;
  const double f4_heavy = mean_delay_fraction(heavy, 4.0, frames);
  if (!(f4_heavy > f4)) {
    why = "mu 0.4 error " + std::to_string(f4_heavy) +
          " not above mu 0.25 error " + std::to_string(f4);
    return false;
  }
  return true;
}

// ---------------------------------------------------------------- 4 -----

// With true symbols and no noise the bias-corrected estimate averages to
// the true coupling matrix; only pilot/data cross terms remain.
bool channel_estimator(std::string& why) {
  const CodeSpec code;
  const FrameSpec frame;
  const std::size_t users = 5;
  const std::size_t n_sym = frame.n_symbols();
  const double correction =
      static_cast<double>(n_sym + 1) / static_cast<double>(n_sym);

  std::vector<std::vector<cplx>> err(users, std::vector<cplx>(users, 0.0));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const LinkSet links = LinkSet::make(users, frame, code, seed);
    SplitMix64 pg(substream(seed, {tag::phase}));
    std::vector<double> phases(users);
    for (auto& p : phases) p = pg.angle();
    const auto chan =
        make_channel(users, 0.25, phases, {}, inf(), frame, seed);

    std::vector<std::vector<cplx>> streams(users);
    SplitMix64 pay(substream(seed, {tag::payload}));
    for (std::size_t u = 0; u < users; ++u) {
      BitVec payload(frame.payload_bits(code));
      for (auto& b : payload) b = pay.bit();
      streams[u] = apply_delay(
          upsample_shape(build_frame(links.pilot_bits[u], payload, frame, code,
                                     links.interleavers[u]),
                         frame.oversampling),
          chan.delays[u], frame.grid_len());
    }
    SplitMix64 rng(seed);
    const auto rx = transmit(streams, chan, frame, rng);
    for (std::size_t r = 0; r < users; ++r) {
      const auto row = estimate_channel_row(rx.beams[r], streams);
      for (std::size_t c = 0; c < users; ++c)
        err[r][c] += row[c] * correction - chan.coupling(r, c);
    }
  }

  double worst = 0.0;
  for (const auto& row : err)
    for (const auto& e : row) worst = std::max(worst, std::abs(e / 100.0));
  if (worst > 0.05) {
    why = "seed-averaged entry error " + std::to_string(worst);
    return false;
  }
  return true;
}

// ---------------------------------------------------------------- 5/6/7 --

struct StageCounts {
  std::vector<std::vector<std::uint64_t>> per_frame;  // [frame][stage]
  std::uint64_t bits_per_frame = 0;

  double ber(std::size_t stage0) const {
    std::uint64_t e = 0;
    for (const auto& f : per_frame) e += f[stage0];
    return static_cast<double>(e) /
           (static_cast<double>(per_frame.size()) *
            static_cast<double>(bits_per_frame));
  }
};

StageCounts run_point(const ExperimentConfig& cfg, double snr_db,
                      std::size_t frames) {
  const LinkSet links = LinkSet::make(cfg.users, cfg.frame, cfg.code, cfg.seed);
  StageCounts out;
  out.bits_per_frame = cfg.users * cfg.frame.payload_bits(cfg.code);
  out.per_frame.resize(frames);
  for (std::size_t f = 0; f < frames; ++f)
    out.per_frame[f] = run_frame(cfg, links, 0, snr_db, f).stage_errors;
  return out;
}

// Mean and standard error of (a - b) across frames, in error counts.
std::pair<double, double> paired_diff(const StageCounts& a, std::size_t sa,
                                      const StageCounts& b, std::size_t sb) {
  const std::size_t n = a.per_frame.size();
  std::vector<double> d(n);
  double mean = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    d[f] = static_cast<double>(a.per_frame[f][sa]) -
           static_cast<double>(b.per_frame[f][sb]);
    mean += d[f];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const double x : d) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n - 1) * static_cast<double>(n);
  return {mean, std::sqrt(var)};
}

bool stage_gain(std::string& why) {
  ExperimentConfig cfg;
  cfg.seed = 3;
  const auto counts = run_point(cfg, 4.0, 1000);
  const auto [mean, se] = paired_diff(counts, 0, counts, 2);  // stage1-stage3
  if (!(counts.ber(2) < counts.ber(0)) || mean < 2.0 * se) {
    why = "stage-1 ber " + std::to_string(counts.ber(0)) + " stage-3 ber " +
          std::to_string(counts.ber(2)) + " margin " + std::to_string(mean) +
          " vs 2se " + std::to_string(2.0 * se);
    return false;
  }
  return true;
}

bool decoder_comparison(std::string& why) {
  // True noise variance on both sides: the decoder is the only block that
  // changes, and the Viterbi metric is scale-invariant anyway.
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.detector.snr_mode = SnrMode::genie;
  cfg.detector.decoder = DecoderKind::viterbi;
  const auto vit = run_point(cfg, 2.0, 1000);
  cfg.detector.decoder = DecoderKind::bcjr;
  const auto map = run_point(cfg, 2.0, 1000);
  const double bv = vit.ber(2), bm = map.ber(2);
  if (!(bm <= bv)) {
    why = "final-stage bcjr ber " + std::to_string(bm) + " above viterbi " +
          std::to_string(bv);
    return false;
  }
  return true;
}

bool combining_gain(std::string& why) {
  for (const DecoderKind dec : {DecoderKind::viterbi, DecoderKind::bcjr}) {
    ExperimentConfig cfg;
    cfg.seed = 3;
    cfg.detector.decoder = dec;

    cfg.detector.combining = true;
    cfg.detector.n_stages = 2;
    const auto on = run_point(cfg, 4.0, 600);

    cfg.detector.combining = false;
    cfg.detector.n_stages = 3;
    const auto off = run_point(cfg, 4.0, 600);

    // stage 2 with combining must not trail stage 3 without it by more
    // than one standard error of the paired difference
    const auto [mean, se] = paired_diff(off, 2, on, 1);
    if (mean < -se) {
      why = std::string(to_string(dec)) + ": combined stage-2 ber " +
            std::to_string(on.ber(1)) + " above plain stage-3 ber " +
            std::to_string(off.ber(2)) + " beyond 1 se";
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- 8 -----

bool genie_exactness(std::string& why) {
  const CodeSpec code;
  const FrameSpec frame;
  const std::size_t users = 5;
  const LinkSet links = LinkSet::make(users, frame, code, 2);
  const auto chan = make_channel(users, 0.25, std::vector<double>(users, 0.0),
                                 {}, inf(), frame, 3);
  std::vector<std::vector<cplx>> streams(users);
  SplitMix64 pay(7);
  for (std::size_t u = 0; u < users; ++u) {
    BitVec payload(frame.payload_bits(code));
    for (auto& b : payload) b = pay.bit();
    streams[u] = apply_delay(
        upsample_shape(build_frame(links.pilot_bits[u], payload, frame, code,
                                   links.interleavers[u]),
                       frame.oversampling),
        chan.delays[u], frame.grid_len());
  }
  SplitMix64 rng(8);
  const auto rx = transmit(streams, chan, frame, rng);
  for (std::size_t k = 0; k < users; ++k) {
    const auto cleaned =
        cancel_interference(rx.beams[k], k, chan.coupling, streams);
    const auto combined =
        combine_signals(rx.beams, cleaned, k, chan.coupling, streams);
    for (std::size_t j = 0; j < cleaned.size(); ++j) {
      if (std::abs(cleaned[j] - streams[k][j]) > 1e-9) {
        why = "cancellation residual off at user " + std::to_string(k);
        return false;
      }
      if (std::abs(combined[j] - 1.25 * streams[k][j]) > 1e-9) {
        why = "combined amplitude not 1.25 at user " + std::to_string(k);
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------- 9 -----

bool determinism(std::string& why) {
  ExperimentConfig cfg;
  cfg.sweep = {0.0, 2.0, 2.0};
  cfg.frames_per_point = 40;
  cfg.seed = 9;

  const auto render = [](const BerReport& r) {
    std::ostringstream os;
    emit_report(r, ReportFormat::csv, os);
    return os.str();
  };
  cfg.workers = 1;
  const std::string one = render(run_experiment(cfg));
  cfg.workers = 8;
  const std::string eight = render(run_experiment(cfg));
  if (one != eight) {
    why = "csv differs between 1 and 8 workers";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------- 10 ----

bool runtime_budget(std::string& why, double& minutes) {
  const auto t0 = clock_type::now();
  for (const DecoderKind dec : {DecoderKind::viterbi, DecoderKind::bcjr}) {
    ExperimentConfig cfg;  // snr 0..8 step 1, 500 frames, 3 stages
    cfg.detector.decoder = dec;
    const auto rep = run_experiment(cfg);
    std::ostringstream os;
    emit_report(rep, ReportFormat::csv, os);
    if (rep.rows.size() != 27) {
      why = "unexpected row count " + std::to_string(rep.rows.size());
      return false;
    }
  }
  minutes = seconds_since(t0) / 60.0;
  if (minutes >= 30.0) {
    why = "sweep took " + std::to_string(minutes) + " minutes";
    return false;
  }
  return true;
}

void run(int idx, const char* label, bool (*fn)(std::string&)) {
  const auto t0 = clock_type::now();
  std::string why;
  bool ok = false;
  try {
    ok = fn(why);
  } catch (const std::exception& e) {
    why = e.what();
  }
  const std::string text =
      label + (why.empty() ? std::string{} : ": " + why);
  report(idx, ok, text, seconds_since(t0));
}

}  // namespace

int main() {
  const auto t0 = clock_type::now();
  run(1, "codec matches exhaustive ML and bitwise MAP", codec_oracle);
  run(2, "noise-free interference-free run is error-free", clean_identity);
  run(3, "delay estimator: exact when clean, improves with snr",
      delay_estimator);
  run(4, "channel estimate converges to the coupling matrix",
      channel_estimator);
  run(5, "stage 3 beats stage 1 at 4 dB by 2 standard errors", stage_gain);
  run(6, "log-MAP detector is at least as good as Viterbi at 2 dB",
      decoder_comparison);
  run(7, "combining at stage 2 rivals stage 3 without it", combining_gain);
  run(8, "genie cancellation exact, combining gain 1.25", genie_exactness);
  run(9, "csv is byte-identical for 1 and 8 workers", determinism);
  {
    const auto t = clock_type::now();
    std::string why;
    double minutes = 0.0;
    bool ok = false;
    try {
      ok = runtime_budget(why, minutes);
    } catch (const std::exception& e) {
      why = e.what();
    }
    std::ostringstream label;
    label << "full sweep, both decoders, in " << std::fixed
          << std::setprecision(1) << minutes << " min";
    report(10, ok,
           label.str() + (why.empty() ? std::string{} : ": " + why),
           seconds_since(t));
  }

  std::printf("%s: %d/10 criteria passed (%.1f s total)\n",
              g_failed == 0 ? "ACCEPTED" : "REJECTED", 10 - g_failed,
              seconds_since(t0));
  return g_failed == 0 ? 0 : 1;
}
