// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// flowvoc: train, distill, synthesize, evaluate, run the analytic oracles and
// plot spectrograms.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowvoc/checkpoint.hpp"
#include "flowvoc/config.hpp"
#include "flowvoc/distill.hpp"
#include "flowvoc/eval.hpp"
#include "flowvoc/flow.hpp"
#include "flowvoc/npy.hpp"
#include "flowvoc/reference.hpp"

namespace fs = std::filesystem;
using namespace flowvoc;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

void info(const std::string& msg) { std::cerr << "[flowvoc] " << msg << std::endl; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  bool deterministic = false;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "JSON config file");
  app->add_option("-s,--set", o.overrides, "Override a config key (dotted.key=value); repeatable");
  app->add_flag("--deterministic", o.deterministic, "Single-threaded kernels for bit-reproducible runs");
}

RunConfig resolve(const CommonOptions& o) {
  if (o.deterministic) {
    Eigen::setNbThreads(1);
    info("deterministic mode: single-threaded kernels");
  }
  return resolve_config(o.config, o.overrides);
}

std::vector<AudioClip> load_corpus(const fs::path& manifest, const MelConfig& mel) {
  if (manifest.empty()) throw IngestionError("no manifest given (paths.manifest)");
  std::vector<AudioClip> clips;
  for (const auto& h : load_manifest(manifest)) {
    AudioClip c = h.load();
    if (c.sample_rate != mel.sample_rate)
      throw IngestionError(h.path.string() + ": sample rate " + std::to_string(c.sample_rate) +
                           " differs from " + std::to_string(mel.sample_rate));
    clips.push_back(std::move(c));
  }
  if (clips.empty()) throw IngestionError(manifest.string() + ": manifest lists no clips");
  return clips;
}

// ---------------------------------------------------------------------------
// Checkpoint series

fs::path series_path(const fs::path& dir, const std::string& prefix, long step,
                     const std::string& tag = "") {
  return dir / fmt("%s-%08ld%s.fvck", prefix.c_str(), step, tag.empty() ? "" : ("-" + tag).c_str());
}

/// Untagged checkpoints of a series, oldest first.
std::vector<fs::path> list_series(const fs::path& dir, const std::string& prefix) {
  std::vector<std::pair<long, fs::path>> found;
  if (!fs::exists(dir)) return {};
  const std::regex re(prefix + "-(\\d{8})\\.fvck");
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re)) found.emplace_back(std::stol(m[1].str()), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& f : found) out.push_back(std::move(f.second));
  return out;
}

void prune_series(const fs::path& dir, const std::string& prefix, int keep) {
  auto all = list_series(dir, prefix);
  for (std::size_t i = 0; i + keep < all.size(); ++i) fs::remove(all[i]);
}

std::string step_line(const char* kind, const StepResult& r) {
  std::string ts;
  for (double t : r.t) ts += (ts.empty() ? "" : ",") + fmt("%.6f", t);
  return fmt("%s step=%ld lr=%.9g loss=%.9g fm=%.9g stft=%.9g mel=%.9g t=%s%s", kind, r.step, r.lr,
             r.report.total, r.report.fm_term, r.report.stft_term, r.report.mel_term, ts.c_str(),
             r.skipped ? (" skipped=" + r.reason).c_str() : "");
}

class StepLog {
 public:
  StepLog(const fs::path& dir, const std::string& name) {
    fs::create_directories(dir);
    file_.open(dir / name, std::ios::app);
    if (!file_) throw IngestionError((dir / name).string() + ": cannot open log");
  }
  void line(const std::string& s) {
    std::cout << s << "\n";
    file_ << s << "\n";
    file_.flush();
  }

 private:
  std::ofstream file_;
};

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  CommonOptions common;
  long stop_after = -1;
  std::string tag;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = resolve(a.common);
  const fs::path dir = cfg.paths.checkpoint_dir;
  fs::create_directories(dir);
  VocoderNet<float> net(cfg.network, cfg.seed);
  FlowTrainer<float> trainer(net, cfg.train_config(), cfg.loss_settings());
  if (const auto series = list_series(dir, "ckpt"); !series.empty()) {
    const Checkpoint ck = load_checkpoint(series.back());
    if (!(ck.network == cfg.network))
      throw InvariantError("resume: " + series.back().string() +
                           " was trained with a different network config");
    restore_params(net, ck.params);
    restore_optimizer(trainer.optimizer(), ck);
    trainer.set_step(ck.step);
    info("resuming from " + series.back().string() + " at step " + std::to_string(ck.step));
  }
  info(fmt("network: %zu parameters", net.num_params()));
  const auto corpus = load_corpus(cfg.paths.manifest, cfg.mel);
  info(fmt("corpus: %zu clips", corpus.size()));
  write_config(dir / "config.json", cfg);
  StepLog log(cfg.paths.log_dir, "train.log");

  auto save = [&] {
    Checkpoint ck;
    ck.network = cfg.network;
    ck.step = trainer.current_step();
    ck.meta["config"] = cfg;
    ck.meta["kind"] = "flow";
    ck.params = capture_params(net);
    capture_optimizer(trainer.optimizer(), net, ck);
    const auto path = series_path(dir, "ckpt", ck.step);
    save_checkpoint(path, ck);
    prune_series(dir, "ckpt", cfg.keep_last);
    if (!a.tag.empty()) fs::copy_file(path, series_path(dir, "ckpt", ck.step, a.tag),
                                      fs::copy_options::overwrite_existing);
    info("saved " + path.string());
  };

  long saved_at = -1;
  while (trainer.current_step() < cfg.train.steps) {
    if (g_interrupted || (a.stop_after >= 0 && trainer.current_step() >= a.stop_after)) break;
    const StepResult r = trainer.step(corpus);
    log.line(step_line("train", r));
    if (trainer.current_step() % cfg.checkpoint_every == 0) {
      save();
      saved_at = trainer.current_step();
    }
  }
  if (saved_at != trainer.current_step()) save();
  if (g_interrupted) {
    info("interrupted; state saved");
    return 130;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// distill

struct DistillArgs {
  CommonOptions common;
  std::string teacher;
  long stop_after = -1;
};

int cmd_distill(const DistillArgs& a) {
  const RunConfig cfg = resolve(a.common);
  if (a.teacher.empty() || !fs::exists(a.teacher)) throw IngestionError("teacher checkpoint not found: " + a.teacher);
  const Checkpoint teacher_ck = load_checkpoint(a.teacher);
  const auto teacher = network_from_checkpoint<float>(teacher_ck, cfg.network);
  const fs::path dir = cfg.paths.checkpoint_dir;
  fs::create_directories(dir);
  Distiller<float> d(teacher, cfg.distill_config(), cfg.loss_settings());
  if (const auto series = list_series(dir, "distill"); !series.empty()) {
    const Checkpoint ck = load_checkpoint(series.back());
    if (!(ck.network == cfg.network)) throw InvariantError("resume: distillation network config differs");
    restore_params(d.student(), ck.params);
    restore_params(d.ema(), ck.ema);
    restore_optimizer(d.optimizer(), ck);
    d.set_step(ck.step);
    info("resuming distillation at step " + std::to_string(ck.step));
  }
  const auto corpus = load_corpus(cfg.paths.manifest, cfg.mel);
  write_config(dir / "config.json", cfg);
  StepLog log(cfg.paths.log_dir, "distill.log");
  auto save = [&] {
    Checkpoint ck;
    ck.network = cfg.network;
    ck.step = d.current_step();
    ck.distilled = true;
    ck.meta["config"] = cfg;
    ck.meta["kind"] = "distilled";
    ck.meta["teacher"] = fs::absolute(a.teacher).string();
    ck.params = capture_params(d.student());
    ck.ema = capture_params(d.ema());
    capture_optimizer(d.optimizer(), d.student(), ck);
    const auto path = series_path(dir, "distill", ck.step);
    save_checkpoint(path, ck);
    prune_series(dir, "distill", cfg.keep_last);
    info("saved " + path.string());
  };
  long saved_at = -1;
  while (d.current_step() < cfg.distill.steps) {
    if (g_interrupted || (a.stop_after >= 0 && d.current_step() >= a.stop_after)) break;
    const auto r = d.step(corpus);
    log.line(step_line("distill", r.step));
    if (d.current_step() % cfg.checkpoint_every == 0) {
      save();
      saved_at = d.current_step();
    }
  }
  if (saved_at != d.current_step()) save();
  return g_interrupted ? 130 : 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  CommonOptions common;
  std::string checkpoint;
  std::vector<std::string> inputs;
  int n_steps = 6;
  std::string out_dir = "synth";
  std::uint64_t seed = 0;
};

MelSpectrogram mel_from_input(const fs::path& p, const MelConfig& mc) {
  if (p.extension() == ".npy") {
    MelSpectrogram m;
    m.log = read_npy(p);
    if (m.log.rows() != mc.n_mels)
      throw ShapeError(p.string() + ": expected " + std::to_string(mc.n_mels) + " mel bands");
    m.raw = m.log.array().exp().matrix();
    return m;
  }
  const AudioClip clip = read_wav(p);
  if (clip.sample_rate != mc.sample_rate)
    throw IngestionError(p.string() + ": sample rate differs from " + std::to_string(mc.sample_rate));
  return extract_mel(clip, mc);
}

std::vector<double> synthesize(const VocoderNet<float>& net, bool distilled, const MelSpectrogram& mel,
                               int n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw DomainError("n_steps must be >= 1");
  if (n_steps == 1 && distilled) return one_step_synthesize(net, mel, seed);
  return sample_euler(net, mel, n_steps, seed);
}

AudioClip to_audio(const std::vector<double>& x, int rate) {
  AudioClip c;
  c.sample_rate = rate;
  for (double v : x) c.samples.push_back(static_cast<float>(std::clamp(v, -1.0, 1.0)));
  return c;
}

int cmd_synth(const SynthArgs& a) {
  const RunConfig cfg = resolve(a.common);
  if (a.n_steps < 1) throw DomainError("--steps must be >= 1");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto net = network_from_checkpoint<float>(ck, ck.network);
  MelConfig mc = cfg.mel;
  if (mc.hop_length != ck.network.hop() || mc.n_mels != ck.network.n_mels)
    throw InvariantError("mel config does not match the checkpoint's network");
  fs::create_directories(a.out_dir);
  for (const auto& in : a.inputs) {
    const MelSpectrogram mel = mel_from_input(in, mc);
    const auto y = synthesize(net, ck.distilled, mel, a.n_steps, a.seed);
    const fs::path out = fs::path(a.out_dir) / (fs::path(in).stem().string() + ".wav");
    write_wav(out, to_audio(y, mc.sample_rate), WavEncoding::kPcm16);
    info(fmt("%s -> %s (%zu samples, %d steps)", in.c_str(), out.string().c_str(), y.size(), a.n_steps));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  CommonOptions common;
  std::string checkpoint;
  std::string manifest;
  std::string out_csv = "metrics.csv";
  int n_steps = 0;
  std::uint64_t seed = 0;
  bool self_check = false;
};

int cmd_eval(const EvalArgs& a) {
  const RunConfig cfg = resolve(a.common);
  const int n_steps = a.n_steps > 0 ? a.n_steps : cfg.eval.n_steps;
  std::optional<VocoderNet<float>> net;
  bool distilled = false;
  if (!a.self_check) {
    if (a.checkpoint.empty()) throw IngestionError("--checkpoint is required unless --self-check");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    net.emplace(network_from_checkpoint<float>(ck, ck.network));
    distilled = ck.distilled;
    if (cfg.mel.hop_length != ck.network.hop()) throw InvariantError("mel hop does not match the checkpoint");
  }
  ExternalTools cfg_tools;
  cfg_tools.commands = cfg.eval.tools;
  const ExternalTools tools = ExternalTools::from_env().merged(cfg_tools);
  for (auto m : {ExternalMetric::kPesq, ExternalMetric::kPeriodicity, ExternalMetric::kVuvF1}) {
    const auto it = tools.commands.find(metric_name(m));
    info("tool " + metric_name(m) + ": " + (it == tools.commands.end() ? "not configured" : it->second));
  }
  const fs::path manifest = a.manifest.empty() ? fs::path(cfg.paths.manifest) : fs::path(a.manifest);
  const auto clip_paths = manifest_paths(manifest);
  const MelExtractor mx(cfg.mel);

  std::vector<MetricRow> rows;
  std::vector<std::vector<double>> refs;
  std::vector<MelSpectrogram> mels;
  std::vector<std::size_t> ok_rows;
  auto generate = [&](std::size_t i) {
    if (a.self_check) return refs[i];
    auto y = synthesize(*net, distilled, mels[i], n_steps, a.seed);
    y.resize(refs[i].size());
    return y;
  };
  for (const auto& path : clip_paths) {
    MetricRow row{path.filename().string(), "ok", std::nullopt};
    try {
      const AudioClip clip = read_wav(path);
      if (clip.sample_rate != cfg.mel.sample_rate) throw IngestionError("sample rate mismatch");
      std::vector<double> x(clip.samples.begin(), clip.samples.end());
      const double sr = silence_ratio(x, cfg.mel.win_length, cfg.mel.hop_length, cfg.eval.silence_gate_db);
      if (sr > cfg.eval.max_silence_ratio) {
        row.status = fmt("skipped: silence ratio %.3f", sr);
        rows.push_back(row);
        continue;
      }
      refs.push_back(std::move(x));
      mels.push_back(mx.extract(std::span<const double>(refs.back())));
      const std::size_t i = refs.size() - 1;
      const auto gen = generate(i);
      MetricReport m;
      m.mstft = mstft_metric(refs[i], gen);
      m.mcd = mcd_dtw(refs[i], gen);
      for (auto k : {ExternalMetric::kPesq, ExternalMetric::kPeriodicity, ExternalMetric::kVuvF1}) {
        const auto r = external_metric_adapter(k, refs[i], gen, tools, cfg.mel.sample_rate);
        if (!r.available() && tools.commands.count(metric_name(k))) info(row.utterance + ": " + r.cause);
        if (k == ExternalMetric::kPesq) m.pesq = r.value;
        if (k == ExternalMetric::kPeriodicity) m.periodicity = r.value;
        if (k == ExternalMetric::kVuvF1) m.vuv_f1 = r.value;
      }
      row.report = m;
      ok_rows.push_back(rows.size());
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
      info(row.utterance + ": " + e.what());
      if (refs.size() > mels.size()) refs.pop_back();
      if (mels.size() > refs.size()) mels.pop_back();
    }
    rows.push_back(std::move(row));
  }
  double rtf = 0.0;
  if (!ok_rows.empty()) {
    std::vector<std::size_t> batch(refs.size());
    std::iota(batch.begin(), batch.end(), 0);
    rtf = measure_rtf(generate, batch, cfg.eval.rtf_repeats, cfg.mel.sample_rate).rtf;
    for (std::size_t r : ok_rows) rows[r].report->rtf = rtf;
    info(fmt("rtf: %.3f", rtf));
  }
  std::vector<std::string> header{
      "checkpoint=" + (a.self_check ? std::string("self-check") : a.checkpoint),
      fmt("n_steps=%d", n_steps), fmt("seed=%llu", static_cast<unsigned long long>(a.seed)),
      fmt("silence_gate_db=%g", cfg.eval.silence_gate_db),
      fmt("max_silence_ratio=%g", cfg.eval.max_silence_ratio),
      fmt("rtf_repeats=%d", cfg.eval.rtf_repeats)};
  if (!fs::path(a.out_csv).parent_path().empty()) fs::create_directories(fs::path(a.out_csv).parent_path());
  std::ofstream out(a.out_csv);
  if (!out) throw IngestionError(a.out_csv + ": cannot open for writing");
  write_metric_table(out, rows, header);
  if (const auto mean = aggregate(rows))
    std::cout << fmt("mean mstft=%.6f mcd=%.4f rtf=%.3f over %zu clips\n", mean->mstft, mean->mcd,
                     mean->rtf, ok_rows.size());
  return 0;
}

// ---------------------------------------------------------------------------
// oracle

struct OracleArgs {
  std::string kind;
  std::vector<double> mu{0.0, 5.0}, s0{1.0, 1.0}, s1{1.0, 0.1};
  int steps = 64;
  int trials = 100000;
  double tol = 0.03;
  int pairs = 20;
  double loss_tol = 1e-5;
  long toy_steps = 2000;
  double toy_ema = 0.95;
  std::uint64_t seed = 0;
};

int oracle_gaussian_flow(const OracleArgs& a) {
  if (a.mu.size() != a.s0.size() || a.mu.size() != a.s1.size())
    throw DomainError("--mu, --s0 and --s1 need the same number of values");
  bool pass = true;
  for (std::size_t i = 0; i < a.mu.size(); ++i) {
    const auto e = analytic_gaussian_flow_check(a.mu[i], a.s0[i], a.s1[i], a.steps, a.trials, a.seed);
    const bool ok = e.mean_err <= a.tol && e.var_err <= a.tol;
    pass = pass && ok;
    std::cout << fmt("gaussian_flow mu=%g s0=%g s1=%g steps=%d trials=%d: mean=%.6f (err %.4f) "
                     "var=%.6f (err %.4f) tol=%.4f %s\n",
                     a.mu[i], a.s0[i], a.s1[i], a.steps, a.trials, e.mean, e.mean_err, e.variance,
                     e.var_err, a.tol, ok ? "PASS" : "FAIL");
  }
  return pass ? 0 : 1;
}

int oracle_loss_equivalence(const OracleArgs& a) {
  std::mt19937_64 rng(a.seed);
  std::uniform_int_distribution<int> len(1024, 4096);
  double worst_mod = 0.0, worst_classic = 0.0, worst_ops = 0.0;
  auto rel = reference::rel_err;
  for (int p = 0; p < a.pairs; ++p) {
    const auto n = static_cast<std::size_t>(len(rng));
    const auto x = reference::noise(n, static_cast<unsigned>(rng()));
    const auto y = reference::noise(n, static_cast<unsigned>(rng()));
    worst_mod = std::max(worst_mod, rel(stft_loss(x, y), reference::modified_stft_loss(x, y)));
    worst_classic = std::max(worst_classic, rel(original_stft_loss(x, y), reference::classic_stft_loss(x, y)));
    const RealGrid mag = stft_grids(x, StftConfig{}, 2).cwiseAbs();
    reference::Grid g(mag.rows(), std::vector<double>(mag.cols()));
    for (Eigen::Index i = 0; i < mag.rows(); ++i)
      for (Eigen::Index j = 0; j < mag.cols(); ++j) g[i][j] = mag(i, j);
    const auto ops = spectro_operators(mag);
    const std::pair<const RealGrid*, reference::Grid> pairs[] = {
        {&ops.d_time, reference::correlate(g, reference::time_kernel(), 1, 1)},
        {&ops.d_freq, reference::correlate(g, reference::freq_kernel(), 1, 1)},
        {&ops.laplacian, reference::correlate(g, reference::lap_kernel(), 1, 1)}};
    for (const auto& [mine, ref] : pairs) {
      double num = 0.0, den = 0.0;
      for (Eigen::Index i = 0; i < mine->rows(); ++i)
        for (Eigen::Index j = 0; j < mine->cols(); ++j) {
          num = std::max(num, std::abs((*mine)(i, j) - ref[i][j]));
          den = std::max(den, std::abs(ref[i][j]));
        }
      worst_ops = std::max(worst_ops, den > 0.0 ? num / den : num);
    }
  }
  const bool ok = worst_mod <= a.loss_tol && worst_classic <= a.loss_tol && worst_ops <= a.loss_tol;
  std::cout << fmt("loss_equivalence pairs=%d: stft_loss rel %.3g, original_stft_loss rel %.3g, "
                   "operators rel %.3g, tol %.1g %s\n",
                   a.pairs, worst_mod, worst_classic, worst_ops, a.loss_tol, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int oracle_distill_toy(const OracleArgs& a) {
  ToyDistillConfig cfg;
  cfg.steps = a.toy_steps;
  cfg.distill.ema_decay = a.toy_ema;
  cfg.eval_trials = a.trials;
  cfg.seed = a.seed;
  const auto r = distill_toy(cfg);
  const bool ok = r.variance_ratio() < 1.0;
  std::cout << fmt("distill_toy steps=%ld ema=%g: teacher 1-step var err %.4f, student 1-step var "
                   "err %.4f, ratio %.4f %s\n",
                   cfg.steps, a.toy_ema, r.teacher_one_step.var_err, r.student_one_step.var_err,
                   r.variance_ratio(), ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int cmd_oracle(const OracleArgs& a) {
  if (a.kind == "gaussian_flow") return oracle_gaussian_flow(a);
  if (a.kind == "loss_equivalence") return oracle_loss_equivalence(a);
  if (a.kind == "distill_toy") return oracle_distill_toy(a);
  throw DomainError("unknown oracle '" + a.kind + "'");
}

// ---------------------------------------------------------------------------
// plot-spectrograms

struct PlotArgs {
  std::vector<std::string> inputs;
  std::string out = "spectrograms.ppm";
  double range_db = 80.0;
};

std::array<unsigned char, 3> colormap(double v) {
  // Dark purple through red and orange to pale yellow.
  static const double stops[5][3] = {
      {0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}};
  v = std::clamp(v, 0.0, 1.0) * 4.0;
  const int k = std::min(3, static_cast<int>(v));
  const double f = v - k;
  std::array<unsigned char, 3> c{};
  for (int i = 0; i < 3; ++i)
    c[i] = static_cast<unsigned char>(std::lround(stops[k][i] + f * (stops[k + 1][i] - stops[k][i])));
  return c;
}

int cmd_plot(const PlotArgs& a) {
  if (a.inputs.empty()) throw DomainError("no input files");
  const Stft stft(1024, 256, 1024, FramingMode::kCentered);
  std::vector<RealGrid> panels;
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& in : a.inputs) {
    const AudioClip c = read_wav(in);
    std::vector<double> x(c.samples.begin(), c.samples.end());
    if (x.size() < 1024) x.resize(1024, 0.0);
    RealGrid db = stft.forward(x).cwiseAbs().unaryExpr([](double m) { return 20.0 * std::log10(std::max(m, 1e-10)); });
    top = std::max(top, db.maxCoeff());
    panels.push_back(std::move(db));
  }
  const double bottom = top - a.range_db;
  const int gap = 4;
  const auto rows = static_cast<int>(panels[0].rows());
  int width = 0, max_cols = 0;
  for (const auto& p : panels) max_cols = std::max(max_cols, static_cast<int>(p.cols()));
  width = static_cast<int>(panels.size()) * max_cols + gap * (static_cast<int>(panels.size()) - 1);
  std::vector<unsigned char> img(static_cast<std::size_t>(width) * rows * 3, 255);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const int x0 = static_cast<int>(p) * (max_cols + gap);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < panels[p].cols(); ++c) {
        const auto col = colormap((panels[p](rows - 1 - r, c) - bottom) / (top - bottom));
        std::copy(col.begin(), col.end(), img.begin() + (static_cast<std::size_t>(r) * width + x0 + c) * 3);
      }
  }
  std::ofstream out(a.out, std::ios::binary);
  if (!out) throw IngestionError(a.out + ": cannot open for writing");
  out << "P6\n" << width << " " << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (!out) throw IngestionError(a.out + ": write failed");
  info(fmt("%zu panels, %d x %d, shared scale %.1f..%.1f dB -> %s", panels.size(), width, rows, bottom,
           top, a.out.c_str()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowvoc: flow-matching vocoder"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Flow-matching training (resumes from the latest checkpoint)");
  add_common(t, train.common);
  t->add_option("--stop-after", train.stop_after, "Stop (and checkpoint) once this step is reached");
  t->add_option("--tag", train.tag, "Also keep the final checkpoint under this tag");

  DistillArgs distill;
  auto* d = app.add_subcommand("distill", "Consistency distillation of a trained checkpoint");
  add_common(d, distill.common);
  d->add_option("--teacher", distill.teacher, "Teacher checkpoint")->required();
  d->add_option("--stop-after", distill.stop_after, "Stop (and checkpoint) once this step is reached");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Synthesize audio from mel (.npy) or audio (.wav) inputs");
  add_common(s, synth.common);
  s->add_option("--checkpoint", synth.checkpoint, "Checkpoint")->required();
  s->add_option("inputs", synth.inputs, "Input .wav or .npy (log-mel, n_mels x frames) files")->required();
  s->add_option("-n,--steps", synth.n_steps, "Euler steps")->capture_default_str();
  s->add_option("-o,--out-dir", synth.out_dir, "Output directory")->capture_default_str();
  s->add_option("--seed", synth.seed, "Prior noise seed")->capture_default_str();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Copy-synthesis metrics over a manifest");
  add_common(e, eval.common);
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint");
  e->add_option("--manifest", eval.manifest, "Manifest of reference clips (default: paths.manifest)");
  e->add_option("-o,--out", eval.out_csv, "Output CSV")->capture_default_str();
  e->add_option("-n,--steps", eval.n_steps, "Euler steps (default: eval.n_steps)");
  e->add_option("--seed", eval.seed, "Prior noise seed")->capture_default_str();
  e->add_flag("--self-check", eval.self_check, "Score every reference against itself");

  OracleArgs oracle;
  auto* o = app.add_subcommand("oracle", "Analytic self-checks (no data needed)");
  o->add_option("kind", oracle.kind, "gaussian_flow | loss_equivalence | distill_toy")
      ->required()
      ->check(CLI::IsMember({"gaussian_flow", "loss_equivalence", "distill_toy"}));
  o->add_option("--mu", oracle.mu, "Target means")->capture_default_str();
  o->add_option("--s0", oracle.s0, "Prior std devs")->capture_default_str();
  o->add_option("--s1", oracle.s1, "Target std devs")->capture_default_str();
  o->add_option("--steps", oracle.steps, "Euler steps")->capture_default_str();
  o->add_option("--trials", oracle.trials, "Trajectories")->capture_default_str();
  o->add_option("--tol", oracle.tol, "Relative tolerance on moments")->capture_default_str();
  o->add_option("--pairs", oracle.pairs, "Random input pairs")->capture_default_str();
  o->add_option("--loss-tol", oracle.loss_tol, "Relative tolerance vs the brute-force losses")->capture_default_str();
  o->add_option("--toy-steps", oracle.toy_steps, "Toy distillation steps")->capture_default_str();
  o->add_option("--toy-ema", oracle.toy_ema, "Toy distillation EMA decay")->capture_default_str();
  o->add_option("--seed", oracle.seed, "Seed")->capture_default_str();

  PlotArgs plot;
  auto* p = app.add_subcommand("plot-spectrograms", "Side-by-side log-magnitude spectrograms (PPM)");
  p->add_option("inputs", plot.inputs, "Reference then generated WAV files")->required();
  p->add_option("-o,--out", plot.out, "Output image (.ppm)")->capture_default_str();
  p->add_option("--range-db", plot.range_db, "Dynamic range below the global peak")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    if (t->parsed()) return cmd_train(train);
    if (d->parsed()) return cmd_distill(distill);
    if (s->parsed()) return cmd_synth(synth);
    if (e->parsed()) return cmd_eval(eval);
    if (o->parsed()) return cmd_oracle(oracle);
    if (p->parsed()) return cmd_plot(plot);
  } catch (const std::exception& ex) {
    std::cerr << "flowvoc: error: " << ex.what() << std::endl;
    return 2;
  }
  return 2;
}
