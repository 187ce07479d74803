// qdspin command-line tool.
//
// Exit codes: 0 success, 1 validation or data failure (including failed
// manifest entries in `run`), 2 usage error.
// Human-readable progress goes to stderr; a JSON summary goes to stdout.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <qdspin/experiments.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qdspin;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  int verbosity = 0;
  std::string config;
};

Globals g;

void log(const std::string& msg) { std::cerr << msg << '\n'; }

void emit(const json& summary) { std::cout << summary.dump(2) << '\n'; }

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Failure("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw Failure(path + ": " + e.what());
  }
}

// --config, then $QDSPIN_CONFIG, then ./qdspin.json, then the built-in scheme.
std::pair<LevelScheme, std::string> load_scheme(const std::string& explicit_path) {
  std::string path = explicit_path;
  if (path.empty()) path = g.config;
  if (path.empty())
    if (const char* env = std::getenv("QDSPIN_CONFIG")) path = env;
  if (path.empty() && fs::exists("qdspin.json")) path = "qdspin.json";
  if (path.empty()) return {default_scheme(), "<built-in>"};
  return {build_scheme(read_json(path)), path};
}

fs::path out_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("QDSPIN_OUT")) return env;
  return "qdspin-out";
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_file(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Failure("cannot write " + p.string());
  f << text;
}

json violations_json(const std::vector<Violation>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back({{"subject", x.subject}, {"rule", x.rule}, {"message", x.message}});
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qdspin: quantum-dot cascade and dark-exciton spin simulator.\n"
               "Units: time in ns, energy in μeV offsets from the reference energy, rates in 1/ns."};
  app.require_subcommand(1);
  app.add_option("--seed", g.seed, "RNG seed (default 1); every run logs the resolved seed");
  app.add_option("--workers", g.workers, "cap on worker threads (default: hardware concurrency)")
      ->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbosity, "more progress output on stderr");
  app.add_option("--config", g.config,
                 "scheme config (JSON). Discovery: --config, $QDSPIN_CONFIG, ./qdspin.json, built-in default");

  // scheme validate / show
  auto* scheme_cmd = app.add_subcommand("scheme", "inspect or validate a level-scheme config");
  scheme_cmd->require_subcommand(1);
  std::string scheme_file;
  auto* validate_cmd = scheme_cmd->add_subcommand("validate", "check a scheme config; exit 1 with violations");
  validate_cmd->add_option("file", scheme_file, "scheme JSON (energies μeV, rates 1/ns, times ns)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* show_cmd = scheme_cmd->add_subcommand("show", "print the resolved scheme as JSON");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "run Gillespie trajectories and write a photon event file");
  double sim_duration = 0.0;
  std::uint32_t sim_traj = 1;
  std::string sim_out, sim_config;
  std::vector<std::string> sim_lines;
  sim_cmd->add_option("--config", sim_config, "scheme config (JSON)");
  sim_cmd->add_option("--seed", g.seed, "RNG seed");
  sim_cmd->add_option("--duration", sim_duration, "simulated time per trajectory (ns)")
      ->required()
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--trajectories", sim_traj, "independent trajectories (default 1)")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--record", sim_lines, "record only these transition ids (default: all radiative)");
  sim_cmd->add_option("--out", sim_out, "event file (binary QDEV format)")->required();

  // detect
  auto* det_cmd = app.add_subcommand("detect", "apply detector channels to an event file");
  std::string det_in, det_channels, det_out, det_config;
  double det_duration = 0.0;
  det_cmd->add_option("--in", det_in, "event file from `simulate`")->required()->check(CLI::ExistingFile);
  det_cmd->add_option("--channels", det_channels,
                      "channel config JSON (jitter_sigma_ns, dead_time_ns, dark_rate_per_ns, efficiency)")
      ->required()
      ->check(CLI::ExistingFile);
  det_cmd->add_option("--config", det_config, "scheme config used to resolve transition ids");
  det_cmd->add_option("--duration", det_duration,
                      "trajectory duration (ns); trajectories are laid end to end. Default: last event time");
  det_cmd->add_option("--seed", g.seed, "RNG seed");
  det_cmd->add_option("--out", det_out, "output directory, one <channel>.bin per channel");

  // correlate
  auto* cor_cmd = app.add_subcommand("correlate", "histogram time differences t_b − t_a of two click streams");
  std::string cor_a, cor_b, cor_out, cor_mode = "all-pairs";
  double cor_bin_ps = 25.0, cor_window = 25.0;
  cor_cmd->add_option("--a", cor_a, "start channel file")->required()->check(CLI::ExistingFile);
  cor_cmd->add_option("--b", cor_b, "stop channel file")->required()->check(CLI::ExistingFile);
  cor_cmd->add_option("--bin", cor_bin_ps, "bin width (ps, default 25)")->check(CLI::PositiveNumber);
  cor_cmd->add_option("--window", cor_window, "half window ±τ_max (ns, default 25)")->check(CLI::PositiveNumber);
  cor_cmd->add_option("--mode", cor_mode, "all-pairs | start-stop")
      ->check(CLI::IsMember({"all-pairs", "start-stop"}));
  cor_cmd->add_option("--out", cor_out, "histogram CSV (tau_center_ns, counts, g2, g2_err)")->required();

  // degree
  auto* deg_cmd = app.add_subcommand("degree", "degree of correlation C(τ) from co/cross histogram CSVs");
  std::vector<std::string> deg_co, deg_cross;
  std::string deg_out;
  deg_cmd->add_option("--co", deg_co, "co-polarized histogram CSV (repeatable; summed)")->required();
  deg_cmd->add_option("--cross", deg_cross, "cross-polarized histogram CSV (repeatable; summed)")->required();
  deg_cmd->add_option("--out", deg_out, "curve CSV (tau_ns, C, C_err, defined)")->required();

  // fit-beat
  auto* fit_cmd = app.add_subcommand("fit-beat", "fit a damped cosine to a C(τ) curve and convert period to FSS");
  std::string fit_in, fit_out;
  FitOptions fit_opt;
  fit_cmd->add_option("--in", fit_in, "curve CSV")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit_out, "fit report JSON (period ns, damping ns, FSS μeV)")->required();
  fit_cmd->add_option("--fit-start", fit_opt.fit_start, "first τ used (ns, default 0.1)");
  fit_cmd->add_option("--fit-end", fit_opt.fit_end, "last τ used (ns, default: end of curve)");

  // spectrum
  auto* spec_cmd = app.add_subcommand("spectrum", "synthesize a polarized spectrum (energy μeV, counts/s/μeV)");
  std::string spec_out, spec_config, spec_events;
  double spec_res = 25.0, spec_span = 0.0;
  spec_cmd->add_option("--config", spec_config, "scheme config (JSON)");
  spec_cmd->add_option("--resolution", spec_res, "instrumental FWHM (μeV, default 25)")->check(CLI::PositiveNumber);
  spec_cmd->add_option("--events", spec_events, "build from an event file instead of stationary rates")
      ->check(CLI::ExistingFile);
  spec_cmd->add_option("--span", spec_span, "total simulated time of --events (ns)");
  spec_cmd->add_option("--seed", g.seed, "RNG seed (event mode)");
  spec_cmd->add_option("--out", spec_out, "spectrum CSV (energy_ueV, I_H, I_V, DOP)")->required();

  // run
  auto* run_cmd = app.add_subcommand("run", "run a canned experiment plan and evaluate its manifest");
  std::string run_plan_name, run_out;
  bool run_no_events = false, run_no_plots = false;
  std::uint64_t run_heralds = 0;
  run_cmd->add_option("--plan", run_plan_name, "plan name (see list-plans)")->required();
  run_cmd->add_option("--seed", g.seed, "RNG seed");
  run_cmd->add_option("--out", run_out, "result bundle directory (default $QDSPIN_OUT or ./qdspin-out/<plan>)");
  run_cmd->add_option("--heralds", run_heralds, "override the plan's herald target (beat plans)");
  run_cmd->add_flag("--no-events", run_no_events, "skip writing events/events.bin");
  run_cmd->add_flag("--no-plots", run_no_plots, "skip SVG plots");

  auto* list_cmd = app.add_subcommand("list-plans", "list canned experiment plans");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render a histogram, curve or spectrum CSV to SVG");
  std::string plot_in, plot_out, plot_kind, plot_title;
  plot_cmd->add_option("--in", plot_in, "input CSV")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--kind", plot_kind, "histogram | curve | spectrum")
      ->required()
      ->check(CLI::IsMember({"histogram", "curve", "spectrum"}));
  plot_cmd->add_option("--out", plot_out, "SVG file")->required();
  plot_cmd->add_option("--title", plot_title, "plot title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*validate_cmd) {
      json j;
      try {
        j = read_json(scheme_file);
        const auto s = build_scheme(j);
        log(scheme_file + ": ok (" + std::to_string(s.states.size()) + " states, " +
            std::to_string(s.transitions.size()) + " transitions)");
        emit({{"file", scheme_file}, {"valid", true}, {"violations", json::array()}});
        return 0;
      } catch (const SchemeValidationError& e) {
        for (const auto& v : e.violations()) log("violation: " + v.subject + ": " + v.message);
        emit({{"file", scheme_file}, {"valid", false}, {"violations", violations_json(e.violations())}});
        return 1;
      } catch (const SchemeError& e) {
        log(std::string("violation: ") + e.what());
        emit({{"file", scheme_file}, {"valid", false}, {"violations", json::array({{{"subject", e.path()}, {"message", e.what()}}})}});
        return 1;
      }
    }

    if (*show_cmd) {
      auto [s, src] = load_scheme("");
      log("scheme from " + src);
      std::cout << to_json(s).dump(2) << '\n';
      return 0;
    }

    if (*sim_cmd) {
      auto [s, src] = load_scheme(sim_config);
      log("simulate: scheme " + src + ", seed " + std::to_string(g.seed));
      EngineConfig cfg;
      cfg.duration = sim_duration;
      cfg.seed = g.seed;
      cfg.scheme = s;
      cfg.trajectories = sim_traj;
      if (!sim_lines.empty()) {
        cfg.record_lines.emplace();
        for (const auto& t : sim_lines) {
          if (!s.transition_index(t)) throw Failure("unknown transition '" + t + "'");
          for (auto l : lines_of(s, t)) cfg.record_lines->push_back(l);
        }
      }
      auto ens = run_ensemble(cfg, g.workers);
      auto events = ens.merged_events();
      ensure_parent(sim_out);
      io::write_events(sim_out, events);
      log("wrote " + std::to_string(events.size()) + " events to " + sim_out);
      emit({{"command", "simulate"},
            {"seed", g.seed},
            {"scheme", src},
            {"duration_ns", sim_duration},
            {"trajectories", sim_traj},
            {"events", events.size()},
            {"heralds", ens.heralds()},
            {"out", sim_out}});
      return 0;
    }

    if (*det_cmd) {
      auto [s, src] = load_scheme(det_config);
      auto events = io::read_events(det_in);
      const auto channels = io::parse_channels(read_json(det_channels), s);
      double duration = det_duration;
      if (!(duration > 0.0))
        for (const auto& e : events) duration = std::max(duration, e.t);
      std::uint32_t n_traj = 0;
      for (auto& e : events) {
        n_traj = std::max(n_traj, e.trajectory_id + 1);
        e.t += e.trajectory_id * duration;
      }
      std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
      const TimeSpan span{0.0, duration * std::max(1u, n_traj)};
      const fs::path dir = out_dir(det_out);
      fs::create_directories(dir);
      log("detect: seed " + std::to_string(g.seed) + ", span " + std::to_string(span.end) + " ns");
      json chans = json::array();
      for (std::size_t c = 0; c < channels.size(); ++c) {
        Rng rng = make_rng(g.seed, {tag(Stream::detection), c});
        const auto stream = apply_detector(events, channels[c], rng, span);
        const auto path = dir / (channels[c].id + ".bin");
        io::write_detections(path.string(), stream, span);
        chans.push_back({{"id", channels[c].id}, {"clicks", stream.t.size()}, {"file", path.string()}});
        log("  " + channels[c].id + ": " + std::to_string(stream.t.size()) + " clicks");
      }
      emit({{"command", "detect"}, {"seed", g.seed}, {"span_ns", span.end}, {"channels", chans}});
      return 0;
    }

    if (*cor_cmd) {
      const auto a = io::read_detections(cor_a);
      const auto b = io::read_detections(cor_b);
      const TimeSpan span{std::max(a.span.begin, b.span.begin), std::min(a.span.end, b.span.end)};
      if (!(span.end > span.begin)) throw Failure("channel files do not overlap in time");
      CorrelationPair pair{a.stream.channel, b.stream.channel, cor_window, cor_bin_ps * 1e-3,
                           cor_mode == "start-stop" ? CorrelationMode::start_stop : CorrelationMode::all_pairs};
      auto h = cross_correlate(a.stream.t, b.stream.t, pair, span.end - span.begin);
      ensure_parent(cor_out);
      std::ofstream f(cor_out);
      io::write_histogram_csv(f, h, {{"start", pair.start}, {"stop", pair.stop}, {"mode", cor_mode}});
      std::uint64_t total = 0;
      for (auto c : h.counts) total += c;
      log("correlate: " + std::to_string(total) + " coincidences in " + std::to_string(h.size()) + " bins");
      emit({{"command", "correlate"},
            {"start", pair.start},
            {"stop", pair.stop},
            {"bins", h.size()},
            {"coincidences", total},
            {"n_start", h.n_start},
            {"n_stop", h.n_stop},
            {"span_ns", h.span},
            {"out", cor_out}});
      return 0;
    }

    if (*deg_cmd) {
      std::vector<CorrelationHistogram> co, cross;
      for (const auto& p : deg_co) co.push_back(io::histogram_from_table(io::read_csv(p)));
      for (const auto& p : deg_cross) cross.push_back(io::histogram_from_table(io::read_csv(p)));
      const auto c = degree_of_correlation(co, cross);
      ensure_parent(deg_out);
      std::ofstream f(deg_out);
      io::write_curve_csv(f, c);
      emit({{"command", "degree"}, {"points", c.size()}, {"defined", c.defined_count()}, {"out", deg_out}});
      return 0;
    }

    if (*fit_cmd) {
      const auto curve = io::curve_from_table(io::read_csv(fit_in));
      const auto f = fit_damped_cosine(curve, std::nullopt, fit_opt);
      const auto rep = io::fit_report(f);
      write_file(fit_out, rep.dump(2) + "\n");
      std::ostringstream msg;
      msg << "fit: period " << f.period << " ± " << f.period_err() << " ns, damping " << f.damping_time << " ns";
      if (f.fss) msg << ", FSS " << *f.fss << " ± " << *f.fss_err << " μeV";
      log(msg.str());
      emit({{"command", "fit-beat"}, {"report", rep}, {"out", fit_out}});
      return 0;
    }

    if (*spec_cmd) {
      auto [s, src] = load_scheme(spec_config);
      Spectrum sp;
      if (!spec_events.empty()) {
        if (!(spec_span > 0.0)) throw CLI::ValidationError("--span", "required (ns > 0) with --events");
        const auto events = io::read_events(spec_events);
        Rng rng = make_rng(g.seed, {tag(Stream::detection), 0xffff});
        sp = synth_spectrum(s, events, spec_span, spec_res, rng);
      } else {
        sp = synth_spectrum(s, spec_res);
      }
      std::ostringstream os;
      io::write_spectrum_csv(os, sp, &s);
      write_file(spec_out, os.str());
      json lines = json::array();
      for (const auto& l : sp.lines)
        lines.push_back({{"line", l.label},
                         {"center_ueV", l.center},
                         {"I_H", l.intensity_H},
                         {"I_V", l.intensity_V},
                         {"dop", std::isfinite(l.dop()) ? json(l.dop()) : json(nullptr)}});
      log("spectrum: " + std::to_string(sp.lines.size()) + " lines from " + src);
      emit({{"command", "spectrum"}, {"scheme", src}, {"resolution_ueV", spec_res}, {"lines", lines}, {"out", spec_out}});
      return 0;
    }

    if (*run_cmd) {
      experiments::ExperimentPlan plan;
      try {
        plan = experiments::make_plan(run_plan_name);
      } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n" << run_cmd->help();
        return 2;
      }
      if (run_heralds) plan.target_heralds = run_heralds;
      experiments::RunOptions opt;
      opt.seed = g.seed;
      opt.workers = g.workers;
      opt.out = run_out.empty() ? out_dir("") / plan.name : fs::path(run_out);
      opt.write_events = !run_no_events;
      opt.write_plots = !run_no_plots;
      log("run " + plan.name + ": seed " + std::to_string(g.seed) + ", output " + opt.out->string());
      const auto res = experiments::run_plan(plan, opt);
      for (const auto& o : res.outcomes) {
        std::ostringstream line;
        line << (o.pass ? "  PASS " : "  FAIL ") << o.entry.id << ": " << o.entry.metric << " = " << o.value;
        log(line.str());
      }
      auto rep = res.report();
      rep["out"] = opt.out->string();
      emit(rep);
      return res.passed() ? 0 : 1;
    }

    if (*list_cmd) {
      json a = json::array();
      for (const auto& p : experiments::list_plans()) {
        log(p.name + "  " + p.description);
        a.push_back({{"name", p.name}, {"description", p.description}});
      }
      emit({{"plans", a}});
      return 0;
    }

    if (*plot_cmd) {
      const auto svg = plot::render(io::read_csv(plot_in), plot::parse_kind(plot_kind), plot_title);
      write_file(plot_out, svg);
      emit({{"command", "plot"}, {"kind", plot_kind}, {"out", plot_out}});
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const SchemeValidationError& e) {
    for (const auto& v : e.violations()) log("violation: " + v.subject + ": " + v.message);
    return 1;
  } catch (const experiments::StageError& e) {
    log(std::string("error ") + e.what());
    return 1;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return 0;
}
