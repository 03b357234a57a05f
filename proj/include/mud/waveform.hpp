#pragma once

// QPSK mapping and frame construction.
//
// A frame carries n_pilot + n_info coded symbols. The info-bit stream is
// pilot_bits || payload_bits, encoded as one zero-tailed codeword; the
// payload therefore has n_info - tail_bits usable bits. On the wire the
// coded pilot prefix is sent in encoder order (so the receiver can correlate
// against it before anything is known), while the remaining 2 * n_info coded
// bits pass through the per-user interleaver.
//
// Symbols are held for `oversampling` samples each (rectangular pulse; a
// root-raised-cosine option exists for experiments) and placed on a common
// sample grid of oversampling * (n_symbols + 1) samples, which leaves room
// for any integer delay in [0, oversampling).

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mud/fec.hpp"
#include "mud/rng.hpp"

namespace mud {

enum class PulseShape { rect, srrc };

struct FrameSpec {
  std::size_t n_pilot = 30;
  std::size_t n_info = 100;
  std::size_t oversampling = 4;
  PulseShape pulse = PulseShape::rect;

  std::size_t n_symbols() const { return n_pilot + n_info; }
  std::size_t grid_len() const { return oversampling * (n_symbols() + 1); }
  std::size_t payload_bits(const CodeSpec& code) const {
    return n_info - code.tail_bits();
  }

  void validate(const CodeSpec& code) const {
    code.validate();
    if (n_pilot == 0) throw std::invalid_argument("n_pilot must be positive");
    if (n_info <= code.tail_bits())
      throw std::invalid_argument("n_info must exceed the code tail length");
    if (oversampling == 0)
      throw std::invalid_argument("oversampling must be positive");
  }
};

// Gray map, first bit of each pair on the imaginary axis:
// 00 -> 1+j, 01 -> -1+j, 11 -> -1-j, 10 -> 1-j.
inline constexpr std::array<cplx, 4> kQpskSymbols = {
    cplx{1.0, 1.0}, cplx{-1.0, 1.0}, cplx{1.0, -1.0}, cplx{-1.0, -1.0}};

inline std::vector<cplx> qpsk_map(const BitVec& bits) {
  if (bits.size() % 2 != 0)
    throw std::invalid_argument("qpsk_map needs an even number of bits, got " +
                                std::to_string(bits.size()));
  std::vector<cplx> sym(bits.size() / 2);
  for (std::size_t i = 0; i < sym.size(); ++i) {
    const unsigned idx = ((bits[2 * i] & 1u) << 1) | (bits[2 * i + 1] & 1u);
    sym[i] = kQpskSymbols[idx];
  }
  return sym;
}

// Per-bit LLRs {first, second} for one observation, LLR > 0 <=> bit 0.
// noise_var is the per-component variance of the additive noise.
inline std::array<double, 2> qpsk_demap_soft(cplx y, double noise_var) {
  if (!(noise_var > 0.0))
    throw std::invalid_argument("noise variance must be positive");
  return {2.0 * y.imag() / noise_var, 2.0 * y.real() / noise_var};
}

inline std::array<std::uint8_t, 2> qpsk_demap_hard(cplx y) {
  return {static_cast<std::uint8_t>(y.imag() < 0.0),
          static_cast<std::uint8_t>(y.real() < 0.0)};
}

// Coded bits of one frame in wire order: encoder-order pilot prefix followed
// by the interleaved data section.
inline BitVec frame_coded_bits(const BitVec& pilot_bits,
                               const BitVec& payload_bits,
                               const FrameSpec& frame, const CodeSpec& code,
                               const InterleaverSpec& il) {
  frame.validate(code);
  if (pilot_bits.size() != frame.n_pilot)
    throw std::invalid_argument("expected " + std::to_string(frame.n_pilot) +
                                " pilot bits, got " +
                                std::to_string(pilot_bits.size()));
  if (payload_bits.size() != frame.payload_bits(code))
    throw std::invalid_argument(
        "expected " + std::to_string(frame.payload_bits(code)) +
        " payload bits, got " + std::to_string(payload_bits.size()));
  if (il.length != 2 * frame.n_info)
    throw std::invalid_argument("interleaver length mismatch: expected " +
                                std::to_string(2 * frame.n_info) + ", got " +
                                std::to_string(il.length));

  BitVec info(pilot_bits);
  info.insert(info.end(), payload_bits.begin(), payload_bits.end());
  const BitVec coded = conv_encode(info, code);

  BitVec wire(coded.begin(), coded.begin() + 2 * frame.n_pilot);
  const BitVec data(coded.begin() + 2 * frame.n_pilot, coded.end());
  const BitVec data_wire = interleave(data, il);
  wire.insert(wire.end(), data_wire.begin(), data_wire.end());
  return wire;
}

inline std::vector<cplx> build_frame(const BitVec& pilot_bits,
                                     const BitVec& payload_bits,
                                     const FrameSpec& frame,
                                     const CodeSpec& code,
                                     const InterleaverSpec& il) {
  return qpsk_map(frame_coded_bits(pilot_bits, payload_bits, frame, code, il));
}

// Coded-order LLRs recovered from one frame of symbol-rate observations:
// pilot prefix straight through, data section deinterleaved.
inline std::vector<double> frame_llrs(std::span<const cplx> symbol_obs,
                                      double noise_var, const FrameSpec& frame,
                                      const InterleaverSpec& il) {
  if (symbol_obs.size() != frame.n_symbols())
    throw std::invalid_argument("expected " +
                                std::to_string(frame.n_symbols()) +
                                " symbol observations, got " +
                                std::to_string(symbol_obs.size()));
  if (il.length != 2 * frame.n_info)
    throw std::invalid_argument("interleaver length mismatch: expected " +
                                std::to_string(2 * frame.n_info) + ", got " +
                                std::to_string(il.length));
  std::vector<double> wire(2 * frame.n_symbols());
  for (std::size_t i = 0; i < frame.n_symbols(); ++i) {
    const auto l = qpsk_demap_soft(symbol_obs[i], noise_var);
    wire[2 * i] = l[0];
    wire[2 * i + 1] = l[1];
  }
  std::vector<double> out(wire.begin(), wire.begin() + 2 * frame.n_pilot);
  const std::vector<double> data(wire.begin() + 2 * frame.n_pilot, wire.end());
  const std::vector<double> coded = deinterleave(data, il);
  out.insert(out.end(), coded.begin(), coded.end());
  return out;
}

inline BitVec make_pilot_bits(std::size_t user, std::uint64_t seed,
                              std::size_t n_pilot) {
  SplitMix64 g(substream(seed, {tag::pilot, user}));
  BitVec bits(n_pilot);
  for (auto& b : bits) b = g.bit();
  return bits;
}

// Everything TX and RX share about the K links: frame geometry, the code,
// each user's pilot bits and interleaver.
struct LinkSet {
  FrameSpec frame;
  CodeSpec code;
  std::vector<BitVec> pilot_bits;
  std::vector<InterleaverSpec> interleavers;

  std::size_t n_users() const { return pilot_bits.size(); }

  static LinkSet make(std::size_t n_users, const FrameSpec& frame,
                      const CodeSpec& code, std::uint64_t seed) {
    frame.validate(code);
    if (n_users == 0)
      throw std::invalid_argument("need at least one user");
    LinkSet ls;
    ls.frame = frame;
    ls.code = code;
    ls.pilot_bits.reserve(n_users);
    ls.interleavers.reserve(n_users);
    for (std::size_t u = 0; u < n_users; ++u) {
      ls.pilot_bits.push_back(make_pilot_bits(u, seed, frame.n_pilot));
      ls.interleavers.push_back(
          {2 * frame.n_info, substream(seed, {tag::interleaver, u})});
    }
    return ls;
  }
};

namespace detail {

// Root-raised-cosine tap, t in symbol periods.
inline double srrc_tap(double t, double rolloff) {
  const double pi = std::numbers::pi;
  if (std::abs(t) < 1e-9) return 1.0 - rolloff + 4.0 * rolloff / pi;
  const double knee = 1.0 / (4.0 * rolloff);
  if (std::abs(std::abs(t) - knee) < 1e-9) {
    const double a = (1.0 + 2.0 / pi) * std::sin(pi / (4.0 * rolloff));
    const double b = (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * rolloff));
    return rolloff / std::numbers::sqrt2 * (a + b);
  }
  const double num = std::sin(pi * t * (1.0 - rolloff)) +
                     4.0 * rolloff * t * std::cos(pi * t * (1.0 + rolloff));
  const double den = pi * t * (1.0 - (4.0 * rolloff * t) * (4.0 * rolloff * t));
  return num / den;
}

}  // namespace detail

// Expand symbols to the sample rate. rect holds each symbol for ns samples;
// srrc filters a zero-stuffed stream with a truncated root-raised-cosine
// pulse (rolloff 0.35, 10-symbol span) normalized to unit per-symbol energy
// on the same scale as rect.
inline std::vector<cplx> upsample_shape(const std::vector<cplx>& symbols,
                                        std::size_t ns,
                                        PulseShape pulse = PulseShape::rect) {
  if (ns == 0) throw std::invalid_argument("oversampling must be positive");
  if (symbols.empty()) throw std::invalid_argument("empty symbol vector");
  std::vector<cplx> out(symbols.size() * ns);
  if (pulse == PulseShape::rect) {
    for (std::size_t i = 0; i < symbols.size(); ++i)
      for (std::size_t j = 0; j < ns; ++j) out[i * ns + j] = symbols[i];
    return out;
  }
  constexpr double rolloff = 0.35;
  constexpr int span = 10;
  const int half = span * static_cast<int>(ns) / 2;
  std::vector<double> taps(2 * half + 1);
  double energy = 0.0;
  for (int n = -half; n <= half; ++n) {
    const double t = static_cast<double>(n) / static_cast<double>(ns);
    taps[n + half] = detail::srrc_tap(t, rolloff);
    energy += taps[n + half] * taps[n + half];
  }
  const double scale = std::sqrt(static_cast<double>(ns) / energy);
  for (auto& tp : taps) tp *= scale;
  for (std::size_t i = 0; i < out.size(); ++i) {
    cplx acc = 0.0;
    for (int n = -half; n <= half; ++n) {
      const long idx = static_cast<long>(i) - n;
      if (idx < 0 || idx % static_cast<long>(ns) != 0) continue;
      const std::size_t k = static_cast<std::size_t>(idx) / ns;
      if (k < symbols.size()) acc += symbols[k] * taps[n + half];
    }
    out[i] = acc;
  }
  return out;
}

// Place a sample stream on the common grid at integer delay d.
inline std::vector<cplx> apply_delay(const std::vector<cplx>& samples,
                                     std::size_t delay, std::size_t grid_len) {
  if (grid_len < samples.size())
    throw std::invalid_argument("grid shorter than the sample stream");
  const std::size_t slack = grid_len - samples.size();
  if (delay != 0 && delay >= slack)
    throw std::invalid_argument("delay out of range: " +
                                std::to_string(delay) + " with slack " +
                                std::to_string(slack));
  std::vector<cplx> out(grid_len, cplx{0.0, 0.0});
  for (std::size_t i = 0; i < samples.size(); ++i) out[delay + i] = samples[i];
  return out;
}

// Matched filter for the rectangular pulse: average the ns samples of each
// symbol starting at the given delay.
inline std::vector<cplx> integrate_dump(std::span<const cplx> grid,
                                        std::size_t delay, std::size_t ns,
                                        std::size_t n_symbols) {
  if (ns == 0) throw std::invalid_argument("oversampling must be positive");
  if (delay + ns * n_symbols > grid.size())
    throw std::invalid_argument("sample grid too short: need " +
                                std::to_string(delay + ns * n_symbols) +
                                ", have " + std::to_string(grid.size()));
  std::vector<cplx> out(n_symbols);
  const double inv = 1.0 / static_cast<double>(ns);
  for (std::size_t i = 0; i < n_symbols; ++i) {
    cplx acc = 0.0;
    const std::size_t base = delay + i * ns;
    for (std::size_t j = 0; j < ns; ++j) acc += grid[base + j];
    out[i] = acc * inv;
  }
  return out;
}

}  // namespace mud
