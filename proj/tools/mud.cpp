// Command line front end: run sweeps, sanity-check the library, and turn
// result CSVs into gnuplot-ready blocks.
#include <unistd.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mud/mud.hpp"

namespace {

int g_failures = 0;

void check(bool ok, const std::string& label) {
  std::cout << (ok ? "ok      " : "FAILED  ") << label << "\n";
  if (!ok) ++g_failures;
}

// Deterministic spot checks with no statistical budget: a broken build
// fails these in well under a second.
int selftest() {
  using namespace mud;

  const CodeSpec code;
  const FrameSpec frame;

  {
    BitVec impulse(8, 0);
    impulse[0] = 1;
    const BitVec want{1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 1};
    const auto out = conv_encode(impulse, code);
    check(BitVec(out.begin(), out.begin() + 14) == want &&
              std::all_of(out.begin() + 14, out.end(),
                          [](std::uint8_t b) { return b == 0; }),
          "encoder impulse response");
  }
  {
    const auto perm = make_permutation(InterleaverSpec{8, 42});
    check(perm == std::vector<std::uint32_t>{3, 1, 6, 2, 4, 0, 7, 5},
          "pinned interleaver permutation");
  }
  {
    const auto llr = qpsk_demap_soft(cplx{-3.0, -3.0}, 1.0);
    check(llr[0] == -6.0 && llr[1] == -6.0, "qpsk soft demapping");
  }
  {
    SplitMix64 g(123);
    BitVec msg(40);
    for (auto& b : msg) b = g.bit();
    const auto coded = conv_encode(msg, code);
    std::vector<double> llrs(coded.size());
    for (std::size_t i = 0; i < coded.size(); ++i)
      llrs[i] = coded[i] ? -4.0 : 4.0;
    check(viterbi_decode(llrs, code) == msg, "viterbi noiseless round-trip");
    check(bcjr_decode(llrs, 1.0, code).bits == msg,
          "log-MAP noiseless round-trip");
  }
  {
    const LinkSet links = LinkSet::make(5, frame, code, 1);
    ExperimentConfig cfg;
    cfg.mu = 0.25;
    const auto oc = run_frame(cfg, links, 0,
                              std::numeric_limits<double>::infinity(), 0);
    bool clean = oc.delay_error_samples == 0;
    for (const auto e : oc.stage_errors) clean = clean && e == 0;
    check(clean, "noiseless multiuser frame decodes exactly");
  }
  {
    // Reference coupling values: diagonal 1, off-diagonal 0.25, so genie
    // cancellation leaves x_k and combining scales it by 1.25.
    const std::size_t k_users = 5;
    const LinkSet links = LinkSet::make(k_users, frame, code, 2);
    const auto chan = make_channel(k_users, 0.25,
                                   std::vector<double>(k_users, 0.0), {},
                                   std::numeric_limits<double>::infinity(),
                                   frame, 3);
    std::vector<std::vector<cplx>> streams(k_users);
    SplitMix64 pay(7);
    for (std::size_t u = 0; u < k_users; ++u) {
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
    double worst_cancel = 0.0, worst_combine = 0.0;
    for (std::size_t k = 0; k < k_users; ++k) {
      const auto cleaned =
          cancel_interference(rx.beams[k], k, chan.coupling, streams);
      const auto combined =
          combine_signals(rx.beams, cleaned, k, chan.coupling, streams);
      for (std::size_t j = 0; j < cleaned.size(); ++j) {
        worst_cancel =
            std::max(worst_cancel, std::abs(cleaned[j] - streams[k][j]));
        worst_combine = std::max(worst_combine,
                                 std::abs(combined[j] - 1.25 * streams[k][j]));
      }
    }
    check(worst_cancel < 1e-9, "genie cancellation is exact");
    check(worst_combine < 1e-9, "combining gain matches 1.25");
  }
  {
    ExperimentConfig cfg;
    cfg.sweep = {4.0, 4.0, 1.0};
    cfg.frames_per_point = 2;
    cfg.workers = 1;
    const auto rep = run_experiment(cfg);
    std::ostringstream os;
    emit_report(rep, ReportFormat::csv, os);
    std::istringstream is(os.str());
    check(parse_report_csv(is).rows == rep.rows, "csv round-trip");
  }

  std::cout << (g_failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  return g_failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asynchronous multibeam uplink simulator"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo BER sweep");
  std::string config_path;
  std::string format = "csv";
  sim->add_option("--config", config_path, "flat key = value config file")
      ->check(CLI::ExistingFile);
  sim->add_option("--format", format, "csv or table")
      ->check(CLI::IsMember({"csv", "table"}));

  // Every override funnels through the same key = value parser as the
  // config file, so values and error messages stay consistent.
  std::map<std::string, std::string> overrides;
  const auto add_override = [&](const char* flag, const char* key,
                                const char* help) {
    sim->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { overrides[key] = v; },
        help);
  };
  add_override("--snr-min", "snr_min", "lowest Es/N0 in dB");
  add_override("--snr-max", "snr_max", "highest Es/N0 in dB");
  add_override("--snr-step", "snr_step", "sweep step in dB");
  add_override("--frames", "frames", "frames per SNR point");
  add_override("--stages", "stages", "detection stages to run");
  add_override("--decoder", "decoder", "viterbi or bcjr");
  add_override("--combining", "combining", "signal combining: on or off");
  add_override("--snr-mode", "snr_mode", "genie or estimated");
  add_override("--mu", "mu", "co-channel interference coefficient");
  add_override("--users", "users", "number of users / beams");
  add_override("--seed", "seed", "master RNG seed");
  add_override("--out", "out", "write the report here instead of stdout");
  add_override("--workers", "workers", "worker threads (0 = all cores)");

  auto* self = app.add_subcommand("selftest", "run built-in sanity checks");

  auto* plot = app.add_subcommand("plotdata",
                                  "rewrite a result CSV as gnuplot blocks");
  std::string plot_in, plot_out;
  plot->add_option("--in", plot_in, "result CSV to read")
      ->required()
      ->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (self->parsed()) return selftest();

    if (plot->parsed()) {
      std::ifstream is(plot_in);
      if (!is) throw std::runtime_error("cannot open '" + plot_in + "'");
      const auto report = mud::parse_report_csv(is);
      if (plot_out.empty()) {
        mud::write_plotdata(report, std::cout);
      } else {
        std::ofstream os(plot_out);
        if (!os)
          throw std::runtime_error("cannot open '" + plot_out +
                                   "' for writing");
        mud::write_plotdata(report, os);
      }
      return 0;
    }

    mud::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = mud::load_config_file(config_path);
    for (const auto& [key, value] : overrides)
      mud::apply_config_value(cfg, key, value);

    mud::ProgressFn progress;
    if (isatty(2) != 0)
      progress = [](std::size_t done, std::size_t total) {
        if (done % 50 == 0 || done == total)
          std::cerr << '\r' << done << '/' << total << " frames"
                    << (done == total ? "\n" : "") << std::flush;
      };

    const auto report = mud::run_experiment(cfg, progress);
    const auto fmt =
        format == "table" ? mud::ReportFormat::table : mud::ReportFormat::csv;
    if (cfg.out_path.empty())
      mud::emit_report(report, fmt, std::cout);
    else
      mud::write_report_file(report, fmt, cfg.out_path);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
