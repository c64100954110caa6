// include/rcscme/signal_io.hpp

// Copyright 2026  The rcscme Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef RCSCME_SIGNAL_IO_HPP_
#define RCSCME_SIGNAL_IO_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "rcscme/error.hpp"
#include "rcscme/types.hpp"

namespace rcscme {

/// Multichannel real signal. All channels share one length.
struct Waveform {
  int sample_rate = 16000;
  std::vector<std::vector<double>> channels;

  Waveform() = default;
  Waveform(Index num_channels, Index length, int rate)
      : sample_rate(rate),
        channels(static_cast<size_t>(num_channels), std::vector<double>(static_cast<size_t>(length), 0.0)) {}

  Index num_channels() const { return static_cast<Index>(channels.size()); }
  Index length() const { return channels.empty() ? 0 : static_cast<Index>(channels[0].size()); }

  void validate() const {
    if (sample_rate <= 0) throw Error("waveform: sample rate must be positive");
    for (const auto &ch : channels)
      if (ch.size() != channels[0].size()) throw Error("waveform: channels differ in length");
  }
};

/// Analysis configuration carried alongside every spectrogram so that the
/// inverse transform can be run without extra arguments.
struct StftParams {
  Index window_length = 1024;
  Index hop_length = 512;
  int sample_rate = 16000;
  Index num_samples = 0;  // length of the analysed signal, used to trim the inverse

  bool operator==(const StftParams &) const = default;

  Index pad() const { return window_length - hop_length; }
  Index bins() const { return window_length / 2 + 1; }
};

/// Complex time-frequency tensor indexed (bin i, frame j, channel c). The
/// channel index runs fastest so that every x_ij is a contiguous vector.
class Spectrogram {
 public:
  Spectrogram() = default;
  Spectrogram(Index bins, Index frames, Index channels, const StftParams &params)
      : bins_(bins), frames_(frames), channels_(channels), params_(params),
        data_(static_cast<size_t>(bins * frames * channels), Complex(0.0, 0.0)) {}

  Index bins() const { return bins_; }
  Index frames() const { return frames_; }
  Index channels() const { return channels_; }
  const StftParams &params() const { return params_; }

  Complex &operator()(Index i, Index j, Index c) { return data_[offset(i, j, c)]; }
  const Complex &operator()(Index i, Index j, Index c) const { return data_[offset(i, j, c)]; }

  Eigen::Map<Eigen::VectorXcd> vec(Index i, Index j) { return {&data_[offset(i, j, 0)], channels_}; }
  Eigen::Map<const Eigen::VectorXcd> vec(Index i, Index j) const {
    return {&data_[offset(i, j, 0)], channels_};
  }

  Spectrogram channel(Index c) const {
    Spectrogram out(bins_, frames_, 1, params_);
    for (Index i = 0; i < bins_; ++i)
      for (Index j = 0; j < frames_; ++j) out(i, j, 0) = (*this)(i, j, c);
    return out;
  }

  void set_channel(Index c, const Spectrogram &src) {
    if (src.bins_ != bins_ || src.frames_ != frames_ || src.channels_ != 1)
      throw Error("spectrogram: channel shape mismatch");
    for (Index i = 0; i < bins_; ++i)
      for (Index j = 0; j < frames_; ++j) (*this)(i, j, c) = src(i, j, 0);
  }

  double energy() const {
    double e = 0.0;
    for (const auto &z : data_) e += std::norm(z);
    return e;
  }

  std::vector<Complex> &data() { return data_; }
  const std::vector<Complex> &data() const { return data_; }

 private:
  size_t offset(Index i, Index j, Index c) const {
    return static_cast<size_t>((i * frames_ + j) * channels_ + c);
  }

  Index bins_ = 0;
  Index frames_ = 0;
  Index channels_ = 0;
  StftParams params_;
  std::vector<Complex> data_;
};

/// Periodic Hamming window.
inline std::vector<double> hamming_window(Index n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (Index k = 0; k < n; ++k)
    w[static_cast<size_t>(k)] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  return w;
}

/// Number of frames produced for a signal of the given length. The signal is
/// padded with (window - hop) zeros in front and at least that many at the
/// back, rounded up to a whole hop.
inline Index stft_frame_count(Index num_samples, Index window, Index hop) {
  const Index pad = window - hop;
  const Index extra = (hop - num_samples % hop) % hop;
  const Index padded = num_samples + 2 * pad + extra;
  return (padded - window) / hop + 1;
}

inline StftParams make_stft_params(int sample_rate, double window_ms, double hop_ms, Index num_samples = 0) {
  const double win = window_ms * sample_rate / 1000.0;
  const double hop = hop_ms * sample_rate / 1000.0;
  const auto win_n = static_cast<Index>(std::llround(win));
  const auto hop_n = static_cast<Index>(std::llround(hop));
  if (std::abs(win - static_cast<double>(win_n)) > 1e-9 || win_n <= 0 || win_n % 2 != 0)
    throw Error("stft: window must be an even integer number of samples");
  if (std::abs(hop - static_cast<double>(hop_n)) > 1e-9 || hop_n <= 0 || win_n % hop_n != 0)
    throw Error("stft: hop must divide the window length");
  return {win_n, hop_n, sample_rate, num_samples};
}

/// Forward STFT of every channel using the window/hop in `params`
/// (num_samples is taken from the waveform).
inline Spectrogram stft(const Waveform &w, StftParams params) {
  w.validate();
  const Index win = params.window_length;
  const Index hop = params.hop_length;
  if (win <= 0 || win % 2 != 0 || hop <= 0 || hop > win || win % hop != 0)
    throw Error("stft: inconsistent window/hop configuration");
  if (w.length() < win) throw Error("signal too short");
  params.sample_rate = w.sample_rate;
  params.num_samples = w.length();

  const Index frames = stft_frame_count(w.length(), win, hop);
  Spectrogram out(params.bins(), frames, w.num_channels(), params);
  const auto window = hamming_window(win);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<size_t>(win));
  std::vector<Complex> spec;
  for (Index c = 0; c < w.num_channels(); ++c) {
    const auto &x = w.channels[static_cast<size_t>(c)];
    for (Index j = 0; j < frames; ++j) {
      const Index start = j * hop - params.pad();
      for (Index k = 0; k < win; ++k) {
        const Index n = start + k;
        const double s = (n >= 0 && n < w.length()) ? x[static_cast<size_t>(n)] : 0.0;
        frame[static_cast<size_t>(k)] = s * window[static_cast<size_t>(k)];
      }
      fft.fwd(spec, frame);
      for (Index i = 0; i < params.bins(); ++i) out(i, j, c) = spec[static_cast<size_t>(i)];
    }
  }
  return out;
}

inline Spectrogram stft(const Waveform &w, double window_ms, double hop_ms) {
  return stft(w, make_stft_params(w.sample_rate, window_ms, hop_ms));
}

/// Weighted overlap-add inverse, normalised by the summed squared window so
/// that istft(stft(w)) == w.
inline Waveform istft(const Spectrogram &s) {
  const StftParams &p = s.params();
  const Index win = p.window_length;
  const Index hop = p.hop_length;
  if (win <= 0 || win % 2 != 0 || hop <= 0 || hop > win || win % hop != 0 || s.bins() != p.bins() ||
      p.sample_rate <= 0)
    throw Error("istft: inconsistent spectrogram metadata");
  const Index padded = (s.frames() - 1) * hop + win;
  Index length = p.num_samples > 0 ? p.num_samples : padded - 2 * p.pad();
  if (length <= 0 || length + p.pad() > padded) throw Error("istft: inconsistent spectrogram metadata");

  const auto window = hamming_window(win);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<Complex> spec(static_cast<size_t>(p.bins()));
  std::vector<double> frame;

  std::vector<double> norm(static_cast<size_t>(padded), 0.0);
  for (Index j = 0; j < s.frames(); ++j)
    for (Index k = 0; k < win; ++k) {
      const double wk = window[static_cast<size_t>(k)];
      norm[static_cast<size_t>(j * hop + k)] += wk * wk;
    }

  Waveform out(s.channels(), length, p.sample_rate);
  std::vector<double> acc(static_cast<size_t>(padded));
  for (Index c = 0; c < s.channels(); ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Index j = 0; j < s.frames(); ++j) {
      for (Index i = 0; i < p.bins(); ++i) spec[static_cast<size_t>(i)] = s(i, j, c);
      fft.inv(frame, spec, win);
      for (Index k = 0; k < win; ++k)
        acc[static_cast<size_t>(j * hop + k)] += frame[static_cast<size_t>(k)] * window[static_cast<size_t>(k)];
    }
    auto &dst = out.channels[static_cast<size_t>(c)];
    for (Index n = 0; n < length; ++n) {
      const auto src = static_cast<size_t>(n + p.pad());
      dst[static_cast<size_t>(n)] = acc[src] / norm[src];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV (RIFF) files

enum class WavFormat { kPcm16, kFloat32 };

namespace detail {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

template <typename T>
T read_le(const std::vector<char> &buf, size_t pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

}  // namespace detail

inline Waveform read_wav(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open WAV file '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string &why) { return IoError("malformed WAV file '" + path + "': " + why); };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw fail("missing RIFF/WAVE header");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  size_t data_pos = 0, data_size = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const auto size = detail::read_le<uint32_t>(buf, pos + 4);
    const size_t body = pos + 8;
    if (body + size > buf.size() && id != "data") throw fail("truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16) throw fail("fmt chunk too small");
      format = detail::read_le<uint16_t>(buf, body);
      channels = detail::read_le<uint16_t>(buf, body + 2);
      rate = detail::read_le<uint32_t>(buf, body + 4);
      bits = detail::read_le<uint16_t>(buf, body + 14);
      if (format == 0xFFFE) {
        if (size < 26) throw fail("extensible fmt chunk too small");
        format = detail::read_le<uint16_t>(buf, body + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      data_pos = body;
      data_size = std::min<size_t>(size, buf.size() - body);
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw fail("no fmt chunk");
  if (data_pos == 0) throw fail("no data chunk");
  if (channels < 1 || channels > 8) throw IoError("unsupported channel count " + std::to_string(channels) + " in '" + path + "'");
  if (rate == 0) throw fail("zero sample rate");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw IoError("unsupported WAV codec (format " + std::to_string(format) + ", " + std::to_string(bits) +
                  " bits) in '" + path + "'; expected PCM16 or float32");

  const size_t bytes = bits / 8;
  const size_t frames = data_size / (bytes * channels);
  Waveform w(channels, static_cast<Index>(frames), static_cast<int>(rate));
  for (size_t n = 0; n < frames; ++n)
    for (size_t c = 0; c < channels; ++c) {
      const size_t at = data_pos + (n * channels + c) * bytes;
      w.channels[c][n] = pcm16 ? detail::read_le<int16_t>(buf, at) / 32768.0
                               : static_cast<double>(detail::read_le<float>(buf, at));
    }
  return w;
}

inline void write_wav(const std::string &path, const Waveform &w, WavFormat fmt = WavFormat::kFloat32) {
  w.validate();
  if (w.num_channels() < 1 || w.num_channels() > 8) throw IoError("write_wav: 1..8 channels supported");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot create WAV file '" + path + "'");
  const uint16_t channels = static_cast<uint16_t>(w.num_channels());
  const uint16_t bits = fmt == WavFormat::kPcm16 ? 16 : 32;
  const uint32_t block = channels * bits / 8u;
  const uint32_t data_size = static_cast<uint32_t>(w.length()) * block;

  os.write("RIFF", 4);
  detail::write_le<uint32_t>(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::write_le<uint32_t>(os, 16);
  detail::write_le<uint16_t>(os, fmt == WavFormat::kPcm16 ? 1 : 3);
  detail::write_le<uint16_t>(os, channels);
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(w.sample_rate));
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(w.sample_rate) * block);
  detail::write_le<uint16_t>(os, static_cast<uint16_t>(block));
  detail::write_le<uint16_t>(os, bits);
  os.write("data", 4);
  detail::write_le<uint32_t>(os, data_size);
  for (Index n = 0; n < w.length(); ++n)
    for (Index c = 0; c < w.num_channels(); ++c) {
      const double x = w.channels[static_cast<size_t>(c)][static_cast<size_t>(n)];
      if (fmt == WavFormat::kPcm16) {
        const double q = std::round(std::clamp(x, -1.0, 32767.0 / 32768.0) * 32768.0);
        detail::write_le<int16_t>(os, static_cast<int16_t>(q));
      } else {
        detail::write_le<float>(os, static_cast<float>(x));
      }
    }
  if (!os) throw IoError("failed writing WAV file '" + path + "'");
}

}  // namespace rcscme

#endif  // RCSCME_SIGNAL_IO_HPP_
