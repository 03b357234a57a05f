#pragma once

// Rate-1/2 convolutional code, pseudo-random interleaving, and soft-input
// decoders (Viterbi and log-MAP BCJR).
//
// Register convention: when input bit b enters the encoder the working
// register is
//
//   reg = (b << memory) | state
//
// with `state` holding the previous `memory` inputs, newest at the top bit.
// Each generator polynomial is read as a binary mask over reg, so the octal
// generator's most significant bit taps the current input. The two coded
// bits per step are emitted generator-a first.
//
// Codewords are zero-tailed: `memory` flush bits drive the trellis back to
// state 0, which both decoders rely on.
//
// Soft input is one log-likelihood ratio per coded bit with the convention
// LLR > 0 <=> bit 0 more likely. The Viterbi path metric and the BCJR branch
// metric use the matching antipodal form (1 - 2c) * LLR, so both decoders
// consume the same vectors that the demapper produces.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mud/rng.hpp"

namespace mud {

using BitVec = std::vector<std::uint8_t>;

struct CodeSpec {
  unsigned generator_a = 0171;
  unsigned generator_b = 0133;
  unsigned constraint_length = 7;

  unsigned memory() const { return constraint_length - 1; }
  unsigned n_states() const { return 1u << memory(); }
  unsigned tail_bits() const { return memory(); }

  void validate() const {
    if (constraint_length < 2 || constraint_length > 16)
      throw std::invalid_argument("constraint length out of range");
    if (generator_a == 0 || generator_b == 0)
      throw std::invalid_argument("generator polynomial is zero");
    if (generator_a >= (1u << constraint_length) ||
        generator_b >= (1u << constraint_length))
      throw std::invalid_argument("generator degree exceeds constraint length");
  }
};

namespace detail {

inline std::uint8_t parity(std::uint32_t x) {
  return static_cast<std::uint8_t>(std::popcount(x) & 1);
}

// Branch tables shared by both decoders. next[s][b] is the successor state,
// sym[s][b] the coded pair packed as (bit_a << 1) | bit_b.
struct Trellis {
  unsigned n_states;
  unsigned memory;
  std::vector<std::array<std::uint16_t, 2>> next;
  std::vector<std::array<std::uint8_t, 2>> sym;

  explicit Trellis(const CodeSpec& spec)
      : n_states(spec.n_states()),
        memory(spec.memory()),
        next(n_states),
        sym(n_states) {
    for (unsigned s = 0; s < n_states; ++s) {
      for (unsigned b = 0; b < 2; ++b) {
        const unsigned reg = (b << memory) | s;
        next[s][b] = static_cast<std::uint16_t>(reg >> 1);
        sym[s][b] = static_cast<std::uint8_t>(
            (parity(reg & spec.generator_a) << 1) |
            parity(reg & spec.generator_b));
      }
    }
  }
};

// max*(a, b) = log(exp(a) + exp(b)), exact to double precision. The
// comparison is written so that max*(-inf, -inf) = -inf instead of NaN.
inline double max_star(double a, double b) {
  const double hi = a > b ? a : b;
  const double lo = a > b ? b : a;
  const double d = hi - lo;
  if (!(d <= 37.0)) return hi;
  return hi + std::log1p(std::exp(-d));
}

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// The per-step metric of a coded pair against its LLR pair, for all four
// pair values at once.
inline std::array<double, 4> pair_metrics(double la, double lb) {
  return {la + lb, la - lb, -la + lb, -la - lb};
}

inline std::size_t checked_symbol_count(std::size_t n_llrs,
                                        const CodeSpec& spec) {
  if (n_llrs % 2 != 0)
    throw std::invalid_argument("soft input length must be even, got " +
                                std::to_string(n_llrs));
  const std::size_t n_sym = n_llrs / 2;
  if (n_sym <= spec.tail_bits())
    throw std::invalid_argument(
        "soft input too short for a zero-tailed codeword");
  return n_sym;
}

}  // namespace detail

// Zero-tailed encoding: output has 2 * (info_bits.size() + memory) bits.
inline BitVec conv_encode(const BitVec& info_bits, const CodeSpec& spec) {
  spec.validate();
  if (info_bits.empty()) throw std::invalid_argument("empty message");
  BitVec out;
  out.reserve(2 * (info_bits.size() + spec.tail_bits()));
  unsigned state = 0;
  auto push = [&](unsigned b) {
    const unsigned reg = (b << spec.memory()) | state;
    out.push_back(detail::parity(reg & spec.generator_a));
    out.push_back(detail::parity(reg & spec.generator_b));
    state = reg >> 1;
  };
  for (std::uint8_t b : info_bits) push(b & 1u);
  for (unsigned i = 0; i < spec.tail_bits(); ++i) push(0);
  return out;
}

// Coded prefix of a longer message: same shift register, started from the
// all-zero state, but no tail appended. Used for the pilot section of a
// frame, whose coded bits must match the prefix of the full frame encoding.
inline BitVec conv_encode_prefix(const BitVec& bits, const CodeSpec& spec) {
  spec.validate();
  if (bits.empty()) throw std::invalid_argument("empty message");
  BitVec out;
  out.reserve(2 * bits.size());
  unsigned state = 0;
  for (std::uint8_t bi : bits) {
    const unsigned reg = ((bi & 1u) << spec.memory()) | state;
    out.push_back(detail::parity(reg & spec.generator_a));
    out.push_back(detail::parity(reg & spec.generator_b));
    state = reg >> 1;
  }
  return out;
}

struct InterleaverSpec {
  std::size_t length = 0;
  std::uint64_t seed = 0;
};

// Permutation via Fisher-Yates driven by SplitMix64 modulo draws. Spelled
// out rather than delegated to std::shuffle so the permutation is identical
// on every platform.
inline std::vector<std::uint32_t> make_permutation(const InterleaverSpec& spec) {
  if (spec.length == 0)
    throw std::invalid_argument("interleaver length must be positive");
  std::vector<std::uint32_t> perm(spec.length);
  std::iota(perm.begin(), perm.end(), 0u);
  SplitMix64 g(spec.seed);
  for (std::size_t i = spec.length; i > 1; --i) {
    const std::uint32_t j = g.below(static_cast<std::uint32_t>(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

// Element at input position i lands at output position perm[i].
template <typename T>
std::vector<T> interleave(const std::vector<T>& in, const InterleaverSpec& spec) {
  if (in.size() != spec.length)
    throw std::invalid_argument("interleaver length mismatch: expected " +
                                std::to_string(spec.length) + ", got " +
                                std::to_string(in.size()));
  const auto perm = make_permutation(spec);
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[perm[i]] = in[i];
  return out;
}

template <typename T>
std::vector<T> deinterleave(const std::vector<T>& in, const InterleaverSpec& spec) {
  if (in.size() != spec.length)
    throw std::invalid_argument("interleaver length mismatch: expected " +
                                std::to_string(spec.length) + ", got " +
                                std::to_string(in.size()));
  const auto perm = make_permutation(spec);
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[perm[i]];
  return out;
}

// Maximum-likelihood sequence decoding over zero-tailed codewords. Ties are
// broken deterministically (input bit 0, then lower predecessor state, wins
// at equal metric). Returns the info bits with the tail stripped.
inline BitVec viterbi_decode(const std::vector<double>& llrs,
                             const CodeSpec& spec) {
  spec.validate();
  const std::size_t n_sym = detail::checked_symbol_count(llrs.size(), spec);
  const detail::Trellis tr(spec);
  const unsigned S = tr.n_states;
  const unsigned top_bit = tr.memory - 1;

  std::vector<double> pm(S, detail::kNegInf), pm_next(S);
  pm[0] = 0.0;
  // One dropped-oldest-bit per (step, state) survivor; the rest of the
  // predecessor register is implied by the state itself.
  std::vector<std::uint8_t> drop(n_sym * S);

  for (std::size_t t = 0; t < n_sym; ++t) {
    const auto gm = detail::pair_metrics(llrs[2 * t], llrs[2 * t + 1]);
    std::fill(pm_next.begin(), pm_next.end(), detail::kNegInf);
    std::uint8_t* dr = drop.data() + t * S;
    for (unsigned s = 0; s < S; ++s) {
      const double base = pm[s];
      if (base == detail::kNegInf) continue;
      for (unsigned b = 0; b < 2; ++b) {
        const unsigned ns = tr.next[s][b];
        const double m = base + gm[tr.sym[s][b]];
        if (m > pm_next[ns]) {
          pm_next[ns] = m;
          dr[ns] = static_cast<std::uint8_t>(s & 1u);
        }
      }
    }
    pm.swap(pm_next);
  }

  // The zero tail pins the endpoint, so trace back from state 0.
  BitVec decoded(n_sym);
  unsigned cur = 0;
  for (std::size_t t = n_sym; t-- > 0;) {
    decoded[t] = static_cast<std::uint8_t>((cur >> top_bit) & 1u);
    cur = ((cur << 1) | drop[t * S + cur]) & (S - 1);
  }
  decoded.resize(n_sym - spec.tail_bits());
  return decoded;
}

struct BcjrResult {
  std::vector<double> llr;  // a posteriori info-bit LLRs, tail stripped
  BitVec bits;              // hard decisions, llr < 0 => bit 1
};

// Exact log-MAP BCJR over the zero-tailed trellis. noise_var is accepted for
// interface symmetry with the demapper; the observation LLRs are already
// scaled, so it only has to be positive and finite.
inline BcjrResult bcjr_decode(const std::vector<double>& llrs,
                              double noise_var, const CodeSpec& spec) {
  spec.validate();
  if (!(noise_var > 0.0) || !std::isfinite(noise_var))
    throw std::invalid_argument("noise variance must be positive");
  const std::size_t n_sym = detail::checked_symbol_count(llrs.size(), spec);
  const detail::Trellis tr(spec);
  const unsigned S = tr.n_states;
  constexpr double ninf = detail::kNegInf;

  // Branch metric gamma = 0.5 * sum (1 - 2c) * LLR, four values per step.
  std::vector<std::array<double, 4>> gamma(n_sym);
  for (std::size_t t = 0; t < n_sym; ++t) {
    gamma[t] = detail::pair_metrics(0.5 * llrs[2 * t], 0.5 * llrs[2 * t + 1]);
  }

  std::vector<double> alpha((n_sym + 1) * S, ninf);
  alpha[0] = 0.0;
  for (std::size_t t = 0; t < n_sym; ++t) {
    const double* at = alpha.data() + t * S;
    double* an = alpha.data() + (t + 1) * S;
    const auto& g = gamma[t];
    for (unsigned s = 0; s < S; ++s) {
      const double base = at[s];
      if (base == ninf) continue;
      for (unsigned b = 0; b < 2; ++b) {
        double& slot = an[tr.next[s][b]];
        slot = detail::max_star(slot, base + g[tr.sym[s][b]]);
      }
    }
  }

  std::vector<double> beta((n_sym + 1) * S, ninf);
  beta[n_sym * S + 0] = 0.0;  // zero tail: trellis must end in state 0
  for (std::size_t t = n_sym; t-- > 0;) {
    const double* bn = beta.data() + (t + 1) * S;
    double* bt = beta.data() + t * S;
    const auto& g = gamma[t];
    for (unsigned s = 0; s < S; ++s) {
      const double m0 = bn[tr.next[s][0]] + g[tr.sym[s][0]];
      const double m1 = bn[tr.next[s][1]] + g[tr.sym[s][1]];
      bt[s] = detail::max_star(m0, m1);
    }
  }

  BcjrResult res;
  res.llr.resize(n_sym - spec.tail_bits());
  res.bits.resize(res.llr.size());
  for (std::size_t t = 0; t < res.llr.size(); ++t) {
    const double* at = alpha.data() + t * S;
    const double* bn = beta.data() + (t + 1) * S;
    const auto& g = gamma[t];
    double num = ninf, den = ninf;
    for (unsigned s = 0; s < S; ++s) {
      const double base = at[s];
      if (base == ninf) continue;
      num = detail::max_star(num, base + g[tr.sym[s][0]] + bn[tr.next[s][0]]);
      den = detail::max_star(den, base + g[tr.sym[s][1]] + bn[tr.next[s][1]]);
    }
    res.llr[t] = num - den;
    res.bits[t] = static_cast<std::uint8_t>(res.llr[t] < 0.0);
  }
  return res;
}

// Hamming distance plus a length check; used for BER accounting everywhere.
inline std::size_t count_bit_errors(const BitVec& a, const BitVec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("bit vector length mismatch: " +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] ^ b[i]) & 1u;
  return n;
}

}  // namespace mud
