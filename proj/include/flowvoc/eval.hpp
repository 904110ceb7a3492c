// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Objective metrics: multi-resolution STFT distance, mel-cepstral distortion
// with DTW alignment, adapters around external metric tools, real-time factor
// and the CSV metric table.

#ifndef FLOWVOC_EVAL_HPP_
#define FLOWVOC_EVAL_HPP_

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "flowvoc/audio.hpp"
#include "flowvoc/losses.hpp"

namespace flowvoc {

// ---------------------------------------------------------------------------
// M-STFT

/// Classic multi-resolution STFT distance. `gen` is trimmed or zero-padded to
/// the length of `ref` first.
inline double mstft_metric(std::span<const double> ref, std::span<const double> gen,
                           const StftConfig& cfg = StftConfig::classic()) {
  if (ref.empty()) throw ShapeError("mstft_metric: empty reference");
  std::vector<double> aligned(ref.size(), 0.0);
  std::copy_n(gen.begin(), std::min(gen.size(), ref.size()), aligned.begin());
  if (aligned.size() != ref.size()) throw ShapeError("mstft_metric: alignment failed");
  return original_stft_loss(ref, aligned, cfg);
}

// ---------------------------------------------------------------------------
// MCD

struct McdConfig {
  MelConfig mel;
  int n_coeffs = 13;
  /// A frame takes part in alignment when its loudest mel band reaches this
  /// value (32768 full-scale magnitude units).
  double energy_gate = 1.0;
  double min_seconds = 0.5;
};

inline constexpr double kMcdScale = 10.0 * std::numbers::sqrt2 / std::numbers::ln10;

/// Mel cepstrum [n_coeffs x active frames]: orthonormal DCT-II of the
/// natural-log mel magnitudes, coefficients 1..n_coeffs (c0 dropped).
inline RealGrid mel_cepstrum(std::span<const double> x, const McdConfig& cfg = {}) {
  const MelExtractor mx(cfg.mel);
  const MelSpectrogram mel = mx.extract(x);
  const int b = mel.n_mels();
  if (cfg.n_coeffs < 1 || cfg.n_coeffs >= b) throw InvariantError("mel_cepstrum: bad n_coeffs");
  RealGrid dct(cfg.n_coeffs, b);
  for (int k = 1; k <= cfg.n_coeffs; ++k)
    for (int n = 0; n < b; ++n)
      dct(k - 1, n) = std::sqrt(2.0 / b) * std::cos(kPi * k * (n + 0.5) / b);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < mel.raw.cols(); ++j)
    if (mel.raw.col(j).maxCoeff() >= cfg.energy_gate) keep.push_back(j);
  if (keep.empty()) throw DomainError("mel_cepstrum: every frame is below the energy gate");
  RealGrid logs(b, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) logs.col(static_cast<Eigen::Index>(i)) = mel.log.col(keep[i]);
  return dct * logs;
}

struct DtwResult {
  double total = 0.0;
  std::size_t path_length = 0;

  double mean() const { return total / static_cast<double>(path_length); }
};

/// Minimum-cost monotone alignment over a [n x m] cost matrix with steps
/// (1,0), (0,1), (1,1). Costs accumulate from (0,0); ties prefer the diagonal.
inline DtwResult dtw(const RealGrid& cost) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  if (n == 0 || m == 0) throw ShapeError("dtw: empty cost matrix");
  RealGrid acc(n, m);
  Eigen::Matrix<std::size_t, Eigen::Dynamic, Eigen::Dynamic> len(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        acc(0, 0) = cost(0, 0);
        len(0, 0) = 1;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_len = 0;
      auto consider = [&](Eigen::Index a, Eigen::Index c) {
        if (a < 0 || c < 0) return;
        if (acc(a, c) < best) {
          best = acc(a, c);
          best_len = len(a, c);
        }
      };
      consider(i - 1, j - 1);
      consider(i - 1, j);
      consider(i, j - 1);
      acc(i, j) = best + cost(i, j);
      len(i, j) = best_len + 1;
    }
  return {acc(n - 1, m - 1), len(n - 1, m - 1)};
}

/// Pairwise Euclidean distances between the columns of a and b.
inline RealGrid frame_distances(const RealGrid& a, const RealGrid& b) {
  if (a.rows() != b.rows()) throw ShapeError("frame_distances: feature dimension mismatch");
  RealGrid d(a.cols(), b.cols());
  for (Eigen::Index i = 0; i < a.cols(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) d(i, j) = (a.col(i) - b.col(j)).norm();
  return d;
}

/// Mel-cepstral distortion in dB after DTW alignment.
inline double mcd_dtw(std::span<const double> ref, std::span<const double> gen,
                      const McdConfig& cfg = {}) {
  const auto min_len = static_cast<std::size_t>(std::ceil(cfg.min_seconds * cfg.mel.sample_rate));
  if (ref.size() < min_len || gen.size() < min_len)
    throw DomainError("mcd_dtw: inputs must be at least " + std::to_string(cfg.min_seconds) + " s");
  const RealGrid a = mel_cepstrum(ref, cfg);
  const RealGrid b = mel_cepstrum(gen, cfg);
  return kMcdScale * dtw(frame_distances(a, b)).mean();
}

// ---------------------------------------------------------------------------
// External metrics

enum class ExternalMetric { kPesq, kPeriodicity, kVuvF1 };

inline std::string metric_name(ExternalMetric m) {
  switch (m) {
    case ExternalMetric::kPesq: return "pesq";
    case ExternalMetric::kPeriodicity: return "periodicity";
    case ExternalMetric::kVuvF1: return "vuv_f1";
  }
  return "?";
}

inline ExternalMetric parse_metric_name(const std::string& s) {
  if (s == "pesq") return ExternalMetric::kPesq;
  if (s == "periodicity") return ExternalMetric::kPeriodicity;
  if (s == "vuv_f1") return ExternalMetric::kVuvF1;
  throw DomainError("unknown external metric '" + s + "'");
}

/// Command lines of external metric tools. Each is invoked as
/// `<command> <metric> <ref.wav> <gen.wav>` and must print the score as the
/// last line of stdout.
struct ExternalTools {
  std::map<std::string, std::string> commands;

  /// FLOWVOC_PESQ_CMD, FLOWVOC_PERIODICITY_CMD, FLOWVOC_VUV_F1_CMD.
  static ExternalTools from_env() {
    ExternalTools t;
    for (auto m : {ExternalMetric::kPesq, ExternalMetric::kPeriodicity, ExternalMetric::kVuvF1}) {
      std::string var = "FLOWVOC_" + metric_name(m) + "_CMD";
      for (auto& c : var) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (const char* v = std::getenv(var.c_str()); v && *v) t.commands[metric_name(m)] = v;
    }
    return t;
  }

  /// Entries of `over` replace those here.
  ExternalTools merged(const ExternalTools& over) const {
    ExternalTools out = *this;
    for (const auto& [k, v] : over.commands) out.commands[k] = v;
    return out;
  }
};

struct ExternalResult {
  std::optional<double> value;
  std::string cause;  // why the value is missing

  bool available() const { return value.has_value(); }
};

/// Band-limited rational resampling (Kaiser-windowed sinc).
inline std::vector<double> resample(std::span<const double> x, int from, int to,
                                    int zero_crossings = 32, double beta = 8.6) {
  if (from <= 0 || to <= 0) throw DomainError("resample: rates must be positive");
  if (from == to) return {x.begin(), x.end()};
  const long long g = std::gcd(from, to);
  const long long up = to / g, down = from / g;
  const double cutoff = 0.97 * std::min(1.0, static_cast<double>(to) / from);  // of input Nyquist
  const double half = zero_crossings / cutoff;  // kernel half-width in input samples
  const auto reach = static_cast<long long>(std::ceil(half));
  const double i0b = std::cyl_bessel_i(0.0, beta);
  // Output n sits at input time n*down/up; its fractional part cycles with
  // period `up`, so one kernel per phase suffices.
  std::vector<std::vector<double>> kernels(up);
  for (long long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p * down % up) / up;
    for (long long o = -reach; o <= reach + 1; ++o) {
      const double d = frac - o;
      const double u = d / half;
      double w = 0.0;
      if (std::abs(u) <= 1.0) w = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - u * u)) / i0b;
      const double a = kPi * cutoff * d;
      kernels[p].push_back(cutoff * (a == 0.0 ? 1.0 : std::sin(a) / a) * w);
    }
  }
  const auto n_out = static_cast<std::size_t>(x.size() * up / down);
  const auto len = static_cast<long long>(x.size());
  std::vector<double> y(n_out, 0.0);
  for (std::size_t n = 0; n < n_out; ++n) {
    const long long base = static_cast<long long>(n) * down / up;
    const auto& k = kernels[static_cast<long long>(n) % up];
    double acc = 0.0;
    for (long long o = -reach; o <= reach + 1; ++o) {
      const long long i = base + o;
      if (i >= 0 && i < len) acc += x[i] * k[o + reach];
    }
    y[n] = acc;
  }
  return y;
}

namespace detail {

inline std::filesystem::path unique_temp_dir() {
  static std::atomic<unsigned> counter{0};
  const auto base = std::filesystem::temp_directory_path();
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto p = base / ("flowvoc-" + std::to_string(::getpid()) + "-" +
                           std::to_string(counter++));
    if (std::filesystem::create_directory(p)) return p;
  }
  throw IngestionError("cannot create a temporary directory");
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

inline AudioClip to_clip(std::span<const double> x, int rate) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.reserve(x.size());
  for (double v : x) c.samples.push_back(static_cast<float>(std::clamp(v, -1.0, 1.0)));
  return c;
}

}  // namespace detail

/// Runs the configured external tool on (ref, gen). Never fabricates a value:
/// any failure yields an empty result with the cause.
inline ExternalResult external_metric_adapter(ExternalMetric metric, std::span<const double> ref,
                                              std::span<const double> gen,
                                              const ExternalTools& tools, int sample_rate = 24000) {
  const std::string name = metric_name(metric);
  const auto it = tools.commands.find(name);
  if (it == tools.commands.end()) return {std::nullopt, name + ": no tool configured"};
  int rate = sample_rate;
  std::vector<double> r(ref.begin(), ref.end()), g(gen.begin(), gen.end());
  if (metric == ExternalMetric::kPesq && rate != 16000) {
    r = resample(r, rate, 16000);
    g = resample(g, rate, 16000);
    rate = 16000;
  }
  std::filesystem::path dir;
  try {
    dir = detail::unique_temp_dir();
    write_wav(dir / "ref.wav", detail::to_clip(r, rate));
    write_wav(dir / "gen.wav", detail::to_clip(g, rate));
  } catch (const std::exception& e) {
    return {std::nullopt, name + ": " + e.what()};
  }
  const std::string cmd = it->second + " " + name + " " + detail::shell_quote((dir / "ref.wav").string()) +
                          " " + detail::shell_quote((dir / "gen.wav").string()) + " 2>" +
                          detail::shell_quote((dir / "stderr.txt").string());
  std::string out;
  int status = -1;
  if (FILE* p = ::popen(cmd.c_str(), "r")) {
    char buf[256];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    status = ::pclose(p);
  }
  std::string err;
  {
    std::ifstream es(dir / "stderr.txt");
    std::getline(es, err, '\0');
  }
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  if (status != 0) {
    while (!err.empty() && (err.back() == '\n' || err.back() == '\r')) err.pop_back();
    const auto nl = err.rfind('\n');
    return {std::nullopt, name + ": tool exited with status " + std::to_string(status) +
                              (err.empty() ? "" : " (" + err.substr(nl == std::string::npos ? 0 : nl + 1) + ")")};
  }
  while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
  const auto nl = out.rfind('\n');
  std::string last = out.substr(nl == std::string::npos ? 0 : nl + 1);
  last.erase(0, last.find_first_not_of(" \t"));
  double v = 0.0;
  const auto [ptr, e] = std::from_chars(last.data(), last.data() + last.size(), v);
  if (e != std::errc() || ptr != last.data() + last.size() || !std::isfinite(v))
    return {std::nullopt, name + ": unparsable tool output '" + last + "'"};
  if (metric == ExternalMetric::kVuvF1 && (v < 0.0 || v > 1.0))
    return {std::nullopt, name + ": value " + last + " outside [0, 1]"};
  return {v, ""};
}

/// F1 of voiced decisions (voiced = positive). Two all-unvoiced sequences agree
/// perfectly and score 1.
inline double vuv_f1(const std::vector<bool>& ref, const std::vector<bool>& gen) {
  if (ref.size() != gen.size()) throw ShapeError("vuv_f1: sequence length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    tp += ref[i] && gen[i];
    fp += !ref[i] && gen[i];
    fn += ref[i] && !gen[i];
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

// ---------------------------------------------------------------------------
// Real-time factor

struct RtfMeasurement {
  std::vector<double> per_repeat;
  double rtf = 0.0;  // median of per_repeat
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Generated seconds over synthesis wall-clock seconds, median over repeats.
/// One untimed pass over the batch runs first. `sink` (optional) receives
/// every output outside the timed region.
template <class Mel, class Synth, class Sink>
RtfMeasurement measure_rtf(Synth&& synth, const std::vector<Mel>& batch, int repeats,
                           int sample_rate, Sink&& sink) {
  if (repeats < 1) throw DomainError("measure_rtf: repeats must be >= 1");
  if (batch.empty()) throw DomainError("measure_rtf: empty batch");
  std::size_t samples = 0;
  for (const auto& mel : batch) samples += synth(mel).size();
  if (samples == 0) throw DomainError("measure_rtf: batch generated no audio");
  const double seconds_of_audio = static_cast<double>(samples) / sample_rate;
  RtfMeasurement m;
  for (int r = 0; r < repeats; ++r) {
    double wall = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      auto out = synth(batch[i]);
      wall += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      sink(i, out);
    }
    m.per_repeat.push_back(seconds_of_audio / std::max(wall, 1e-12));
  }
  m.rtf = median(m.per_repeat);
  return m;
}

template <class Mel, class Synth>
RtfMeasurement measure_rtf(Synth&& synth, const std::vector<Mel>& batch, int repeats,
                           int sample_rate = 24000) {
  return measure_rtf(std::forward<Synth>(synth), batch, repeats, sample_rate,
                     [](std::size_t, const auto&) {});
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  double mstft = 0.0;
  double mcd = 0.0;
  std::optional<double> pesq;
  std::optional<double> periodicity;
  std::optional<double> vuv_f1;
  double rtf = 1.0;

  void validate() const {
    if (!(mstft >= 0.0) || !(mcd >= 0.0)) throw InvariantError("MetricReport: negative distance");
    if (vuv_f1 && !(*vuv_f1 >= 0.0 && *vuv_f1 <= 1.0))
      throw InvariantError("MetricReport: vuv_f1 outside [0, 1]");
    if (!(rtf > 0.0)) throw InvariantError("MetricReport: rtf must be positive");
  }

  bool operator==(const MetricReport&) const = default;
};

/// One row of the metric table. Failed rows carry the error and no metrics.
struct MetricRow {
  std::string utterance;
  std::string status = "ok";
  std::optional<MetricReport> report;

  bool ok() const { return report.has_value(); }
  bool operator==(const MetricRow&) const = default;
};

inline constexpr const char* kUnavailable = "unavailable";

/// Column means over successful rows. Optional metrics average the rows that
/// have them and stay absent if none do.
inline std::optional<MetricReport> aggregate(const std::vector<MetricRow>& rows) {
  MetricReport mean;
  mean.rtf = 0.0;
  std::size_t n = 0;
  std::array<std::pair<double, std::size_t>, 3> opt{};
  for (const auto& r : rows) {
    if (!r.ok()) continue;
    const auto& m = *r.report;
    ++n;
    mean.mstft += m.mstft;
    mean.mcd += m.mcd;
    mean.rtf += m.rtf;
    const std::array<const std::optional<double>*, 3> o{&m.pesq, &m.periodicity, &m.vuv_f1};
    for (std::size_t k = 0; k < 3; ++k)
      if (*o[k]) opt[k].first += **o[k], ++opt[k].second;
  }
  if (n == 0) return std::nullopt;
  mean.mstft /= n;
  mean.mcd /= n;
  mean.rtf /= n;
  const std::array<std::optional<double>*, 3> dst{&mean.pesq, &mean.periodicity, &mean.vuv_f1};
  for (std::size_t k = 0; k < 3; ++k)
    if (opt[k].second) *dst[k] = opt[k].first / opt[k].second;
  return mean;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (c == '"') quoted = false;
      else cur += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, e] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (e != std::errc() || ptr != s.data() + s.size())
    throw IngestionError("metric table: bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{"utterance", "status", "mstft", "mcd",
                                             "pesq", "periodicity", "vuv_f1", "rtf"};
  return cols;
}

/// CSV with one row per utterance plus a trailing "mean" row. `header` lines
/// are written first as '#' comments.
inline void write_metric_table(std::ostream& os, const std::vector<MetricRow>& rows,
                               const std::vector<std::string>& header = {},
                               bool with_aggregate = true) {
  for (const auto& h : header) os << "# " << h << "\n";
  const auto& cols = metric_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << "\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? detail::format_double(*v) : std::string(kUnavailable);
  };
  auto emit = [&](const std::string& id, const std::string& status, const std::optional<MetricReport>& m) {
    os << detail::csv_field(id) << "," << detail::csv_field(status);
    if (m)
      os << "," << detail::format_double(m->mstft) << "," << detail::format_double(m->mcd) << ","
         << opt(m->pesq) << "," << opt(m->periodicity) << "," << opt(m->vuv_f1) << ","
         << detail::format_double(m->rtf);
    else
      os << ",,,,,,";
    os << "\n";
  };
  for (const auto& r : rows) emit(r.utterance, r.status, r.report);
  if (with_aggregate) {
    const auto mean = aggregate(rows);
    emit("mean", mean ? "aggregate" : "no successful rows", mean);
  }
}

struct MetricTable {
  std::vector<std::string> header;
  std::vector<MetricRow> rows;  // includes the aggregate row when present
};

inline MetricTable read_metric_table(std::istream& is) {
  MetricTable t;
  std::string line;
  bool seen_columns = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.header.push_back(line.size() > 2 ? line.substr(2) : "");
      continue;
    }
    const auto f = detail::split_csv_line(line);
    if (!seen_columns) {
      if (f != metric_columns()) throw IngestionError("metric table: unexpected columns");
      seen_columns = true;
      continue;
    }
    if (f.size() != metric_columns().size()) throw IngestionError("metric table: ragged row");
    MetricRow r{f[0], f[1], std::nullopt};
    if (!f[2].empty()) {
      auto opt = [](const std::string& s) -> std::optional<double> {
        if (s == kUnavailable) return std::nullopt;
        return detail::parse_double(s);
      };
      MetricReport m;
      m.mstft = detail::parse_double(f[2]);
      m.mcd = detail::parse_double(f[3]);
      m.pesq = opt(f[4]);
      m.periodicity = opt(f[5]);
      m.vuv_f1 = opt(f[6]);
      m.rtf = detail::parse_double(f[7]);
      r.report = m;
    }
    t.rows.push_back(std::move(r));
  }
  if (!seen_columns) throw IngestionError("metric table: missing column row");
  return t;
}

/// Fraction of hop-spaced frames whose RMS lies more than `gate_db` below the
/// loudest frame.
inline double silence_ratio(std::span<const double> x, int frame = 1024, int hop = 256,
                            double gate_db = 40.0) {
  if (x.size() < static_cast<std::size_t>(frame)) throw ShapeError("silence_ratio: clip shorter than one frame");
  std::vector<double> rms;
  for (std::size_t s = 0; s + frame <= x.size(); s += hop) {
    double e = 0.0;
    for (int i = 0; i < frame; ++i) e += x[s + i] * x[s + i];
    rms.push_back(std::sqrt(e / frame));
  }
  const double peak = *std::max_element(rms.begin(), rms.end());
  if (peak == 0.0) return 1.0;
  const double gate = peak * std::pow(10.0, -gate_db / 20.0);
  const auto quiet = std::count_if(rms.begin(), rms.end(), [&](double r) { return r < gate; });
  return static_cast<double>(quiet) / rms.size();
}

}  // namespace flowvoc

#endif  // FLOWVOC_EVAL_HPP_
