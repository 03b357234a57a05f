#pragma once

// Monte Carlo harness: sweeps Es/N0, runs independently seeded frames,
// accumulates error counts, and reads/writes reports.
//
// Every random draw of a frame comes from substreams of (seed, point index,
// frame index), so results are byte-identical for any worker count: workers
// only decide which thread evaluates a task, never what the task contains,
// and all accumulation is integer arithmetic reduced in task order.

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mud/channel.hpp"
#include "mud/detector.hpp"
#include "mud/fec.hpp"
#include "mud/waveform.hpp"

namespace mud {

inline const char* to_string(DecoderKind d) {
  return d == DecoderKind::viterbi ? "viterbi" : "bcjr";
}
inline const char* to_string(SnrMode m) {
  return m == SnrMode::genie ? "genie" : "estimated";
}
inline const char* to_string(SicOrder o) {
  return o == SicOrder::by_delay ? "by-delay" : "by-index";
}
inline const char* to_string(PulseShape p) {
  return p == PulseShape::rect ? "rect" : "srrc";
}

inline DecoderKind decoder_from_string(const std::string& s) {
  if (s == "viterbi") return DecoderKind::viterbi;
  if (s == "bcjr") return DecoderKind::bcjr;
  throw std::invalid_argument("unknown decoder '" + s + "'");
}
inline SnrMode snr_mode_from_string(const std::string& s) {
  if (s == "genie") return SnrMode::genie;
  if (s == "estimated") return SnrMode::estimated;
  throw std::invalid_argument("unknown snr mode '" + s + "'");
}
inline SicOrder sic_order_from_string(const std::string& s) {
  if (s == "by-delay") return SicOrder::by_delay;
  if (s == "by-index") return SicOrder::by_index;
  throw std::invalid_argument("unknown sic order '" + s + "'");
}
inline PulseShape pulse_from_string(const std::string& s) {
  if (s == "rect") return PulseShape::rect;
  if (s == "srrc") return PulseShape::srrc;
  throw std::invalid_argument("unknown pulse shape '" + s + "'");
}

struct SnrSweep {
  double min_db = 0.0;
  double max_db = 8.0;
  double step_db = 1.0;

  void validate() const {
    if (!(step_db > 0.0)) throw std::invalid_argument("snr step must be positive");
    if (max_db < min_db)
      throw std::invalid_argument("snr max must not be below snr min");
  }

  std::vector<double> points() const {
    validate();
    if (max_db == min_db) return {min_db};  // also covers an infinite pin
    std::vector<double> p;
    const std::size_t n =
        static_cast<std::size_t>(std::floor((max_db - min_db) / step_db + 1e-9)) + 1;
    p.reserve(n);
    for (std::size_t i = 0; i < n; ++i) p.push_back(min_db + step_db * static_cast<double>(i));
    return p;
  }
};

struct ExperimentConfig {
  std::size_t users = 5;
  double mu = 0.25;
  FrameSpec frame;
  CodeSpec code;
  SnrSweep sweep;
  std::size_t frames_per_point = 500;
  std::uint64_t seed = 1;
  std::size_t workers = 0;  // 0 = hardware concurrency
  std::string out_path;     // empty = stdout
  DetectorConfig detector;
  ChannelOptions channel;

  void validate() const {
    frame.validate(code);
    detector.validate();
    sweep.validate();
    if (users == 0) throw std::invalid_argument("need at least one user");
    if (!(mu >= 0.0) || mu >= 1.0)
      throw std::invalid_argument("interference coefficient must lie in [0, 1)");
    if (frames_per_point == 0)
      throw std::invalid_argument("need at least one frame per point");
  }
};

struct BerRow {
  double snr_db = 0.0;
  unsigned stage = 0;
  DecoderKind decoder = DecoderKind::viterbi;
  bool combining = false;
  std::uint64_t frames = 0;
  std::uint64_t bit_errors = 0;
  double ber = 0.0;
  double mean_delay_error_samples = 0.0;
  double mean_delay_error_fraction_T = 0.0;

  friend bool operator==(const BerRow&, const BerRow&) = default;
};

struct BerReport {
  std::vector<std::string> meta;  // comment payloads, no leading '#'
  std::vector<BerRow> rows;
};

inline std::string config_summary(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "users=" << cfg.users << " mu=" << cfg.mu
     << " n_pilot=" << cfg.frame.n_pilot << " n_info=" << cfg.frame.n_info
     << " oversampling=" << cfg.frame.oversampling
     << " pulse=" << to_string(cfg.frame.pulse) << " snr=" << cfg.sweep.min_db
     << ":" << cfg.sweep.step_db << ":" << cfg.sweep.max_db
     << " frames=" << cfg.frames_per_point << " stages=" << cfg.detector.n_stages
     << " decoder=" << to_string(cfg.detector.decoder)
     << " combining=" << (cfg.detector.combining ? "on" : "off")
     << " snr_mode=" << to_string(cfg.detector.snr_mode)
     << " sic_order=" << to_string(cfg.detector.sic_order)
     << " seed=" << cfg.seed;
  return os.str();
}

namespace detail {

// Shortest round-trip decimal form, identical on every platform.
inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

// Hamming distance and length, for BER accounting.
inline std::pair<std::size_t, std::size_t> ber_count(const BitVec& decoded,
                                                     const BitVec& truth) {
  return {count_bit_errors(decoded, truth), truth.size()};
}

struct FrameOutcome {
  std::vector<std::uint64_t> stage_errors;  // payload bits, summed over users
  std::uint64_t delay_error_samples = 0;    // sum over users of |tau_hat - tau|
};

// One Monte Carlo frame: all randomness comes from substreams of
// (cfg.seed, point, frame_idx), so any subset of frames can be evaluated in
// any order, on any thread, with identical results.
inline FrameOutcome run_frame(const ExperimentConfig& cfg, const LinkSet& links,
                              std::size_t point, double snr_db,
                              std::size_t frame_idx) {
  const std::size_t n = cfg.users;
  const std::uint64_t p = static_cast<std::uint64_t>(point);
  const std::uint64_t f = static_cast<std::uint64_t>(frame_idx);

  std::vector<BitVec> payload(n);
  const std::size_t payload_len = cfg.frame.payload_bits(cfg.code);
  for (std::size_t u = 0; u < n; ++u) {
    SplitMix64 g(substream(cfg.seed, {tag::payload, p, f, u}));
    payload[u].resize(payload_len);
    for (auto& b : payload[u]) b = g.bit();
  }

  SplitMix64 pg(substream(cfg.seed, {tag::phase, p, f}));
  std::vector<double> phases(n);
  for (auto& ph : phases) ph = pg.angle();

  const ChannelRealization chan =
      make_channel(n, cfg.mu, phases, {}, snr_db, cfg.frame,
                   substream(cfg.seed, {tag::channel, p, f}), cfg.channel);

  std::vector<std::vector<cplx>> streams(n);
  for (std::size_t u = 0; u < n; ++u) {
    const auto symbols = build_frame(links.pilot_bits[u], payload[u], cfg.frame,
                                     cfg.code, links.interleavers[u]);
    streams[u] = apply_delay(
        upsample_shape(symbols, cfg.frame.oversampling, cfg.frame.pulse),
        chan.delays[u], cfg.frame.grid_len());
  }

  SplitMix64 noise_rng(substream(cfg.seed, {tag::noise, p, f}));
  const ReceivedSignal rx = transmit(streams, chan, cfg.frame, noise_rng);
  const DetectionResult det = detect(rx, links, cfg.detector, &chan);

  FrameOutcome out;
  out.stage_errors.assign(cfg.detector.n_stages, 0);
  for (std::size_t s = 0; s < cfg.detector.n_stages; ++s)
    for (std::size_t u = 0; u < n; ++u)
      out.stage_errors[s] += count_bit_errors(det.payload(s, u), payload[u]);
  for (std::size_t u = 0; u < n; ++u) {
    const long d = static_cast<long>(det.delay_hat[u]) -
                   static_cast<long>(chan.delays[u]);
    out.delay_error_samples += static_cast<std::uint64_t>(d < 0 ? -d : d);
  }
  return out;
}

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

inline BerReport run_experiment(const ExperimentConfig& cfg,
                                const ProgressFn& progress = {}) {
  cfg.validate();
  const LinkSet links = LinkSet::make(cfg.users, cfg.frame, cfg.code, cfg.seed);
  const std::vector<double> points = cfg.sweep.points();
  const std::size_t frames = cfg.frames_per_point;
  const std::size_t total = points.size() * frames;

  std::vector<FrameOutcome> outcomes(total);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  std::exception_ptr first_error;
  std::mutex error_mutex;

  std::size_t n_workers = cfg.workers != 0
                              ? cfg.workers
                              : std::max(1u, std::thread::hardware_concurrency());
  n_workers = std::min(n_workers, total);

  auto work = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= total) return;
      try {
        const std::size_t p = t / frames;
        const std::size_t f = t % frames;
        outcomes[t] = run_frame(cfg, links, p, points[p], f);
      } catch (...) {
        std::lock_guard<std::mutex> lk(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
      const std::size_t d = done.fetch_add(1) + 1;
      if (progress) {
        std::lock_guard<std::mutex> lk(progress_mutex);
        progress(d, total);
      }
    }
  };

  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  const std::uint64_t payload_bits_per_frame =
      static_cast<std::uint64_t>(cfg.users) * cfg.frame.payload_bits(cfg.code);

  BerReport report;
  report.meta.push_back(config_summary(cfg));
  report.meta.push_back(
      "snr_db is Es/N0 for the desired user on its own beam; Es is the QPSK "
      "symbol energy integrated over the oversampling samples of one symbol");
  for (std::size_t p = 0; p < points.size(); ++p) {
    std::vector<std::uint64_t> stage_errors(cfg.detector.n_stages, 0);
    std::uint64_t delay_err = 0;
    for (std::size_t f = 0; f < frames; ++f) {
      const auto& oc = outcomes[p * frames + f];
      for (std::size_t s = 0; s < cfg.detector.n_stages; ++s)
        stage_errors[s] += oc.stage_errors[s];
      delay_err += oc.delay_error_samples;
    }
    const double mean_delay =
        static_cast<double>(delay_err) /
        (static_cast<double>(frames) * static_cast<double>(cfg.users));
    for (std::size_t s = 0; s < cfg.detector.n_stages; ++s) {
      BerRow row;
      row.snr_db = points[p];
      row.stage = static_cast<unsigned>(s + 1);
      row.decoder = cfg.detector.decoder;
      row.combining = cfg.detector.combining;
      row.frames = frames;
      row.bit_errors = stage_errors[s];
      row.ber = static_cast<double>(stage_errors[s]) /
                (static_cast<double>(frames) *
                 static_cast<double>(payload_bits_per_frame));
      row.mean_delay_error_samples = mean_delay;
      row.mean_delay_error_fraction_T =
          mean_delay / static_cast<double>(cfg.frame.oversampling);
      report.rows.push_back(row);
    }
  }
  return report;
}

inline constexpr const char* kCsvHeader =
    "snr_db,stage,decoder,combining,frames,bit_errors,ber,"
    "mean_delay_error_samples,mean_delay_error_fraction_T";

enum class ReportFormat { csv, table };

inline void emit_report(const BerReport& report, ReportFormat fmt,
                        std::ostream& os) {
  if (report.rows.empty()) throw std::invalid_argument("empty report");
  if (fmt == ReportFormat::csv) {
    for (const auto& m : report.meta) os << "# " << m << "\n";
    os << kCsvHeader << "\n";
    for (const auto& r : report.rows) {
      os << detail::fmt_double(r.snr_db) << ',' << r.stage << ','
         << to_string(r.decoder) << ',' << (r.combining ? "on" : "off") << ','
         << r.frames << ',' << r.bit_errors << ',' << detail::fmt_double(r.ber)
         << ',' << detail::fmt_double(r.mean_delay_error_samples) << ','
         << detail::fmt_double(r.mean_delay_error_fraction_T) << "\n";
    }
    return;
  }
  for (const auto& m : report.meta) os << "# " << m << "\n";
  os << std::left << std::setw(8) << "snr_db" << std::setw(7) << "stage"
     << std::setw(9) << "decoder" << std::setw(10) << "combining"
     << std::setw(8) << "frames" << std::setw(12) << "bit_errors"
     << std::setw(12) << "ber" << std::setw(12) << "delay_err" << "\n";
  for (const auto& r : report.rows) {
    std::ostringstream ber;
    ber << std::scientific << std::setprecision(3) << r.ber;
    std::ostringstream de;
    de << std::fixed << std::setprecision(4) << r.mean_delay_error_samples;
    os << std::left << std::setw(8) << r.snr_db << std::setw(7) << r.stage
       << std::setw(9) << to_string(r.decoder) << std::setw(10)
       << (r.combining ? "on" : "off") << std::setw(8) << r.frames
       << std::setw(12) << r.bit_errors << std::setw(12) << ber.str()
       << std::setw(12) << de.str() << "\n";
  }
}

inline void write_report_file(const BerReport& report, ReportFormat fmt,
                              const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  emit_report(report, fmt, os);
  os.flush();
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double_field(const std::string& s, const char* what) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw std::invalid_argument("invalid " + std::string(what) + " '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64_field(const std::string& s, const char* what) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw std::invalid_argument("invalid " + std::string(what) + " '" + s + "'");
  return v;
}

}  // namespace detail

inline BerReport parse_report_csv(std::istream& is) {
  BerReport report;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::size_t start = 1;
      while (start < line.size() && line[start] == ' ') ++start;
      report.meta.push_back(line.substr(start));
      continue;
    }
    if (!have_header) {
      if (line != kCsvHeader)
        throw std::invalid_argument("unexpected CSV header: '" + line + "'");
      have_header = true;
      continue;
    }
    const auto f = detail::split_csv_line(line);
    if (f.size() != 9)
      throw std::invalid_argument("expected 9 CSV fields, got " +
                                  std::to_string(f.size()));
    BerRow r;
    r.snr_db = detail::parse_double_field(f[0], "snr_db");
    r.stage = static_cast<unsigned>(detail::parse_u64_field(f[1], "stage"));
    r.decoder = decoder_from_string(f[2]);
    if (f[3] == "on")
      r.combining = true;
    else if (f[3] == "off")
      r.combining = false;
    else
      throw std::invalid_argument("invalid combining flag '" + f[3] + "'");
    r.frames = detail::parse_u64_field(f[4], "frames");
    r.bit_errors = detail::parse_u64_field(f[5], "bit_errors");
    r.ber = detail::parse_double_field(f[6], "ber");
    r.mean_delay_error_samples =
        detail::parse_double_field(f[7], "mean_delay_error_samples");
    r.mean_delay_error_fraction_T =
        detail::parse_double_field(f[8], "mean_delay_error_fraction_T");
    report.rows.push_back(r);
  }
  if (!have_header) throw std::invalid_argument("CSV header missing");
  return report;
}

// Rewrites a report as gnuplot-friendly blocks, one per (decoder, combining,
// stage) series, separated by double blank lines for use with `index`.
inline void write_plotdata(const BerReport& report, std::ostream& os) {
  struct Key {
    DecoderKind d;
    bool c;
    unsigned s;
    bool operator==(const Key&) const = default;
  };
  std::vector<Key> keys;
  for (const auto& r : report.rows) {
    const Key k{r.decoder, r.combining, r.stage};
    bool seen = false;
    for (const auto& e : keys) seen = seen || e == k;
    if (!seen) keys.push_back(k);
  }
  bool first = true;
  for (const auto& k : keys) {
    if (!first) os << "\n\n";
    first = false;
    os << "# series: decoder=" << to_string(k.d) << " combining="
       << (k.c ? "on" : "off") << " stage=" << k.s << "\n";
    os << "# snr_db ber mean_delay_error_fraction_T\n";
    for (const auto& r : report.rows) {
      if (Key{r.decoder, r.combining, r.stage} == k)
        os << detail::fmt_double(r.snr_db) << ' ' << detail::fmt_double(r.ber)
           << ' ' << detail::fmt_double(r.mean_delay_error_fraction_T) << "\n";
    }
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r'))
    --e;
  return s.substr(b, e - b);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("invalid value '" + v + "' for key '" + key + "'");
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
    throw std::invalid_argument("invalid value '" + v + "' for key '" + key +
                                "'");
  return out;
}

}  // namespace detail

// Applies one config key. Shared by the config file loader and CLI
// overrides; unknown keys are an error, not a warning.
inline void apply_config_value(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  if (key == "users")
    cfg.users = parse_number<std::size_t>(value, key);
  else if (key == "mu")
    cfg.mu = parse_number<double>(value, key);
  else if (key == "n_pilot")
    cfg.frame.n_pilot = parse_number<std::size_t>(value, key);
  else if (key == "n_info")
    cfg.frame.n_info = parse_number<std::size_t>(value, key);
  else if (key == "oversampling")
    cfg.frame.oversampling = parse_number<std::size_t>(value, key);
  else if (key == "pulse")
    cfg.frame.pulse = pulse_from_string(value);
  else if (key == "snr_min")
    cfg.sweep.min_db = parse_number<double>(value, key);
  else if (key == "snr_max")
    cfg.sweep.max_db = parse_number<double>(value, key);
  else if (key == "snr_step")
    cfg.sweep.step_db = parse_number<double>(value, key);
  else if (key == "frames")
    cfg.frames_per_point = parse_number<std::size_t>(value, key);
  else if (key == "seed")
    cfg.seed = parse_number<std::uint64_t>(value, key);
  else if (key == "workers")
    cfg.workers = parse_number<std::size_t>(value, key);
  else if (key == "stages")
    cfg.detector.n_stages = parse_number<std::size_t>(value, key);
  else if (key == "decoder")
    cfg.detector.decoder = decoder_from_string(value);
  else if (key == "combining")
    cfg.detector.combining = parse_bool(value, key);
  else if (key == "combine_from_stage")
    cfg.detector.combine_from_stage = parse_number<std::size_t>(value, key);
  else if (key == "snr_mode")
    cfg.detector.snr_mode = snr_mode_from_string(value);
  else if (key == "sic_order")
    cfg.detector.sic_order = sic_order_from_string(value);
  else if (key == "offdiag_random_phase")
    cfg.channel.offdiag_random_phase = parse_bool(value, key);
  else if (key == "out")
    cfg.out_path = value;
  else
    throw std::invalid_argument("unknown config key '" + key + "'");
}

// Flat key = value file; '#' starts a comment, blank lines are skipped.
inline ExperimentConfig load_config(std::istream& is,
                                    ExperimentConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    apply_config_value(cfg, key, value);
  }
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path,
                                         ExperimentConfig cfg = {}) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file '" + path + "'");
  return load_config(is, cfg);
}

}  // namespace mud
