// include/rcscme/source_models.hpp

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

#ifndef RCSCME_SOURCE_MODELS_HPP_
#define RCSCME_SOURCE_MODELS_HPP_

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rcscme/error.hpp"
#include "rcscme/signal_io.hpp"
#include "rcscme/types.hpp"

namespace rcscme {

/// Per-source power model sigma^2_{ij,n}: one I x J matrix per source plus
/// the floor that was applied to it.
struct VarianceMap {
  std::vector<RMatrix> sources;
  std::vector<double> floors;

  Index num_sources() const { return static_cast<Index>(sources.size()); }
  double operator()(Index i, Index j, Index n) const { return sources[static_cast<size_t>(n)](i, j); }
};

/// Smallest floor ever used, so that a silent input still gives a strictly
/// positive variance.
inline constexpr double kMinVariance = std::numeric_limits<double>::min();

/// Power |z|^2 of one channel as an I x J matrix.
inline RMatrix power(const Spectrogram &s, Index c = 0) {
  RMatrix p(s.bins(), s.frames());
  for (Index i = 0; i < s.bins(); ++i)
    for (Index j = 0; j < s.frames(); ++j) p(i, j) = std::norm(s(i, j, c));
  return p;
}

/// max{p, eps} with eps = scale * mean(p). `fallback_mean` is used when p is
/// identically zero.
inline std::pair<RMatrix, double> floor_power(const RMatrix &p, double scale, double fallback_mean = 0.0) {
  double mean = p.size() > 0 ? p.mean() : 0.0;
  if (!(mean > 0.0)) mean = fallback_mean;
  const double eps = std::max(scale * mean, kMinVariance);
  return {p.cwiseMax(eps), eps};
}

// ---------------------------------------------------------------------------
// NMF variance model

struct NmfModel {
  RMatrix basis;       // I x K
  RMatrix activation;  // K x J
  double offset = 0.0;  // constant added to every entry of the model

  Index rank() const { return basis.cols(); }
  RMatrix model() const {
    RMatrix q = basis * activation;
    q.array() += offset;
    return q;
  }
};

/// Uniform [0, 1) initialisation.
inline NmfModel init_nmf(Index bins, Index frames, Index rank, std::mt19937_64 &rng) {
  if (rank < 1) throw ConfigError("nmf: basis count must be at least 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  NmfModel m{RMatrix(bins, rank), RMatrix(rank, frames)};
  for (Index k = 0; k < m.basis.size(); ++k) m.basis.data()[k] = unif(rng);
  for (Index k = 0; k < m.activation.size(); ++k) m.activation.data()[k] = unif(rng);
  return m;
}

/// Itakura-Saito divergence D(P | TV).
inline double is_divergence(const RMatrix &p, const NmfModel &m) {
  const RMatrix q = m.model();
  double d = 0.0;
  for (Index k = 0; k < p.size(); ++k) {
    const double r = p.data()[k] / q.data()[k];
    d += r - std::log(r) - 1.0;
  }
  return d;
}

/// IS-NMF multiplicative updates with exponent 1/2 (majorisation-minimisation
/// form); the divergence never increases. The offset is held fixed.
inline NmfModel nmf_update(const RMatrix &p, NmfModel m, int iterations) {
  if (m.rank() < 1) throw ConfigError("nmf: basis count must be at least 1");
  if (p.rows() != m.basis.rows() || p.cols() != m.activation.cols())
    throw Error("nmf: power spectrogram does not match model shape");
  if ((p.array() < 0.0).any()) throw Error("nmf: power spectrogram must be nonnegative");
  for (int it = 0; it < iterations; ++it) {
    RMatrix q = m.model();
    RMatrix inv = q.cwiseInverse();
    RMatrix weighted = p.cwiseProduct(inv).cwiseProduct(inv);
    m.basis.array() *= ((weighted * m.activation.transpose()).array() /
                        (inv * m.activation.transpose()).array()).sqrt();

    q = m.model();
    inv = q.cwiseInverse();
    weighted = p.cwiseProduct(inv).cwiseProduct(inv);
    m.activation.array() *= ((m.basis.transpose() * weighted).array() /
                             (m.basis.transpose() * inv).array()).sqrt();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Denoisers

/// Single-channel enhancement model. Input and output are one-channel
/// spectrograms of identical shape.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Spectrogram operator()(const Spectrogram &y) const = 0;
};

inline Spectrogram denoise(const Denoiser &dnn, const Spectrogram &y) {
  if (y.channels() != 1) throw Error("denoise: expected a single-channel spectrogram");
  Spectrogram out = dnn(y);
  if (out.bins() != y.bins() || out.frames() != y.frames() || out.channels() != 1)
    throw AdapterError("denoise: denoiser changed the spectrogram shape");
  return out;
}

/// Wraps a callable; used for in-process models and tests.
class FunctionDenoiser : public Denoiser {
 public:
  explicit FunctionDenoiser(std::function<Spectrogram(const Spectrogram &)> fn) : fn_(std::move(fn)) {}
  Spectrogram operator()(const Spectrogram &y) const override { return fn_(y); }

 private:
  std::function<Spectrogram(const Spectrogram &)> fn_;
};

/// External waveform-domain denoiser: the input is written as a mono float32
/// WAV, `command_template` is run with {in}/{out} replaced by the exchange
/// paths, and the output WAV is read back and transformed.
class CommandDenoiser : public Denoiser {
 public:
  CommandDenoiser(std::string command_template, std::filesystem::path exchange_dir = {}, int sample_rate = 16000)
      : command_template_(std::move(command_template)),
        exchange_dir_(exchange_dir.empty() ? std::filesystem::temp_directory_path() : std::move(exchange_dir)),
        sample_rate_(sample_rate) {
    if (command_template_.find("{in}") == std::string::npos || command_template_.find("{out}") == std::string::npos)
      throw ConfigError("denoiser command must contain {in} and {out} placeholders");
  }

  const std::string &command_template() const { return command_template_; }

  Spectrogram operator()(const Spectrogram &y) const override {
    if (y.params().sample_rate != sample_rate_)
      throw AdapterError("denoiser: spectrogram rate " + std::to_string(y.params().sample_rate) +
                         " Hz differs from adapter rate " + std::to_string(sample_rate_) + " Hz");
    const Waveform in = istft(y);
    const auto stem = unique_stem();
    const auto in_path = exchange_dir_ / (stem + "_in.wav");
    const auto out_path = exchange_dir_ / (stem + "_out.wav");
    const auto err_path = exchange_dir_ / (stem + "_stderr.txt");
    struct Cleanup {
      std::vector<std::filesystem::path> paths;
      ~Cleanup() {
        std::error_code ec;
        for (const auto &p : paths) std::filesystem::remove(p, ec);
      }
    } cleanup{{in_path, out_path, err_path}};

    write_wav(in_path.string(), in, WavFormat::kFloat32);
    const std::string cmd = substitute(in_path.string(), out_path.string()) + " 2> " + quote(err_path.string());
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      std::ostringstream msg;
      msg << "denoiser command failed (status " << (WIFEXITED(status) ? WEXITSTATUS(status) : status)
          << "): " << cmd;
      const auto diag = slurp(err_path);
      if (!diag.empty()) msg << "\nstderr: " << diag;
      throw AdapterError(msg.str());
    }
    if (!std::filesystem::exists(out_path)) throw AdapterError("denoiser produced no output file: " + cmd);

    Waveform out;
    try {
      out = read_wav(out_path.string());
    } catch (const IoError &e) {
      throw AdapterError(std::string("denoiser output unreadable: ") + e.what());
    }
    if (out.sample_rate != sample_rate_) throw AdapterError("denoiser output has a different sample rate");
    if (out.num_channels() != 1) throw AdapterError("denoiser output must be mono");
    const Index diff = std::abs(out.length() - in.length());
    if (diff > y.params().hop_length)
      throw AdapterError("denoiser output length " + std::to_string(out.length()) + " differs from input length " +
                         std::to_string(in.length()) + " by more than one hop");
    out.channels[0].resize(static_cast<size_t>(in.length()), 0.0);
    return stft(out, y.params());
  }

 private:
  static std::string quote(const std::string &s) {
    std::string q = "'";
    for (char ch : s) q += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
    return q + "'";
  }

  std::string substitute(const std::string &in, const std::string &out) const {
    std::string cmd = command_template_;
    for (const auto &[key, val] : {std::pair<std::string, std::string>{"{in}", quote(in)}, {"{out}", quote(out)}}) {
      for (size_t pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + val.size()))
        cmd.replace(pos, key.size(), val);
    }
    return cmd;
  }

  static std::string unique_stem() {
    static std::atomic<unsigned long> counter{0};
    std::random_device rd;
    std::ostringstream os;
    os << "rcscme_dnn_" << ::getpid() << '_' << counter++ << '_' << std::hex << rd();
    return os.str();
  }

  static std::string slurp(const std::filesystem::path &p) {
    std::ifstream is(p);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  }

  std::string command_template_;
  std::filesystem::path exchange_dir_;
  int sample_rate_;
};

/// Stand-in for a trained denoiser when ground truth is known. Any input that
/// is a per-bin linear filter of the mixture, y_i = w_i^H X_i, is mapped to
/// the target's share of it, w_i^H T_i, with w_i recovered by least squares.
class OracleDenoiser : public Denoiser {
 public:
  OracleDenoiser(Spectrogram mixture, Spectrogram target_image)
      : mixture_(std::move(mixture)), target_(std::move(target_image)) {
    if (mixture_.bins() != target_.bins() || mixture_.frames() != target_.frames() ||
        mixture_.channels() != target_.channels())
      throw Error("oracle denoiser: mixture and target image shapes differ");
  }

  Spectrogram operator()(const Spectrogram &y) const override {
    if (y.bins() != mixture_.bins() || y.frames() != mixture_.frames())
      throw AdapterError("oracle denoiser: input shape does not match the scenario");
    const Index m = mixture_.channels();
    Spectrogram out(y.bins(), y.frames(), 1, y.params());
    for (Index i = 0; i < y.bins(); ++i) {
      CMatrix gram = CMatrix::Zero(m, m);
      CVector rhs = CVector::Zero(m);
      for (Index j = 0; j < y.frames(); ++j) {
        const auto x = mixture_.vec(i, j);
        gram.noalias() += x * x.adjoint();
        rhs += x * std::conj(y(i, j, 0));
      }
      const double load = 1e-14 * std::max(gram.trace().real(), kMinVariance);
      gram.diagonal().array() += load;
      const CVector w = gram.ldlt().solve(rhs);
      for (Index j = 0; j < y.frames(); ++j) out(i, j, 0) = w.dot(target_.vec(i, j));
    }
    return out;
  }

 private:
  Spectrogram mixture_;
  Spectrogram target_;
};

// ---------------------------------------------------------------------------
// Variance maps

struct IdlmaVariances {
  VarianceMap variances;
  std::vector<Spectrogram> zeta;  // per-source estimate whose power is used
};

/// Target variance from DNN(Y_nt); every other source uses the in-phase
/// residual Y_n - DNN(Y_n).
inline IdlmaVariances idlma_variances(const Spectrogram &y, Index target, const Denoiser &dnn, double epsilon_scale) {
  const Index n_src = y.channels();
  if (target < 0 || target >= n_src) throw ConfigError("idlma: target index out of range");
  IdlmaVariances out;
  for (Index n = 0; n < n_src; ++n) {
    const Spectrogram yn = y.channel(n);
    Spectrogram zeta = denoise(dnn, yn);
    if (n != target) {
      for (Index k = 0; k < static_cast<Index>(zeta.data().size()); ++k)
        zeta.data()[static_cast<size_t>(k)] = yn.data()[static_cast<size_t>(k)] - zeta.data()[static_cast<size_t>(k)];
    }
    const RMatrix pyn = power(yn);
    auto [sigma, eps] = floor_power(power(zeta), epsilon_scale, pyn.size() ? pyn.mean() : 0.0);
    out.variances.sources.push_back(std::move(sigma));
    out.variances.floors.push_back(eps);
    out.zeta.push_back(std::move(zeta));
  }
  return out;
}

/// Ground-truth variances max{|s|^2, eps}, one source per channel of `s`.
inline VarianceMap oracle_variances(const Spectrogram &s, double epsilon_scale) {
  VarianceMap out;
  for (Index n = 0; n < s.channels(); ++n) {
    auto [sigma, eps] = floor_power(power(s, n), epsilon_scale);
    out.sources.push_back(std::move(sigma));
    out.floors.push_back(eps);
  }
  return out;
}

}  // namespace rcscme

#endif  // RCSCME_SOURCE_MODELS_HPP_
