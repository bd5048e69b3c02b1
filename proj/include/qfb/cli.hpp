#pragma once

// Command-line front end: `qfb simulate|ensemble|exit-time|ode`.
// Settings are layered defaults < --preset < --config file < flags, validated
// once, echoed as canonical JSON next to the outputs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qfb/montecarlo.hpp"

namespace qfb::cli {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kIoError = 1, kConfigError = 2, kNumericalFailure = 3 };

class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SimConfig {
    std::string preset;
    double J = 1.0;
    double gamma = 0.1;
    Index target = 3;
    /// Eigenstate index, or the path of a JSON matrix file {"re": [[..]], "im": [[..]]}.
    std::variant<Index, std::string> initial = Index{1};
    double eta = 1.0;
    double dt = 1e-3;
    double T = 10.0;
    std::size_t M = 1;
    std::uint64_t seed = 0;
    std::string output = ".";
    Index stride = 100;
    std::string control = "mh";  ///< "mh" or "constant:<u>"
    double gamma_a = 0.1;
    double t_cap = 100.0;
    double dt_ode = 1e-3;
    double eps_conv = 0.01;
    unsigned threads = 0;  ///< 0: $QFB_THREADS, else hardware concurrency
};

/// fig1 / fig2: J = 10, target 11 from rho_(1); eta = 0.3 and T = 40 make the
/// effect of gamma visible on a handful of paths. acceptance-n3: J = 1.
inline SimConfig preset_config(const std::string& name) {
    SimConfig c;
    c.preset = name;
    if (name == "fig1" || name == "fig2") {
        c.J = 10.0;
        c.gamma = name == "fig1" ? 0.04 : 0.4;
        c.target = 11;
        c.initial = Index{1};
        c.eta = 0.3;
        c.dt = 1e-3;
        c.T = 40.0;
        c.M = name == "fig1" ? 3 : 10;
        c.stride = 100;
    } else if (name == "acceptance-n3") {
        c.J = 1.0;
        c.gamma = 0.1;
        c.target = 3;
        c.initial = Index{1};
        c.eta = 1.0;
        c.dt = 1e-3;
        c.T = 50.0;
        c.M = 100;
        c.stride = 100;
    } else {
        throw ConfigError("preset: unknown preset '" + name + "' (expected fig1, fig2 or acceptance-n3)");
    }
    return c;
}

struct ControlSpec {
    bool switching = true;
    double u = 1.0;
};

inline ControlSpec parse_control(const std::string& s) {
    if (s == "mh") return {true, 1.0};
    const std::string prefix = "constant:";
    if (s.rfind(prefix, 0) == 0) {
        const std::string num = s.substr(prefix.size());
        char* end = nullptr;
        const double u = std::strtod(num.c_str(), &end);
        if (!num.empty() && end == num.c_str() + num.size() && std::isfinite(u)) return {false, u};
    }
    throw ConfigError("control: expected 'mh' or 'constant:<u>', got '" + s + "'");
}

inline json to_json(const SimConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["J"] = c.J;
    j["gamma"] = c.gamma;
    j["target"] = c.target;
    if (const auto* k = std::get_if<Index>(&c.initial)) j["initial"] = *k;
    else j["initial"] = std::get<std::string>(c.initial);
    j["eta"] = c.eta;
    j["dt"] = c.dt;
    j["T"] = c.T;
    j["M"] = c.M;
    j["seed"] = c.seed;
    j["output"] = c.output;
    j["stride"] = c.stride;
    j["control"] = c.control;
    j["gamma_a"] = c.gamma_a;
    j["t_cap"] = c.t_cap;
    j["dt_ode"] = c.dt_ode;
    j["eps_conv"] = c.eps_conv;
    j["threads"] = c.threads;
    return j;
}

/// Canonical serialization: sorted keys, two-space indent, trailing newline.
inline std::string canonical(const SimConfig& c) { return to_json(c).dump(2) + "\n"; }

namespace detail {
template <class T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(key) + ": wrong type (" + j.at(key).dump() + ")");
    }
}
}  // namespace detail

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline SimConfig config_from_json(const json& j, SimConfig base = {}) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    static const char* known[] = {"preset", "J",      "gamma",  "target",  "initial", "eta",
                                  "dt",     "T",      "M",      "seed",    "output",  "stride",
                                  "control", "gamma_a", "t_cap", "dt_ode", "eps_conv", "threads"};
    for (const auto& item : j.items()) {
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return item.key() == k; }) == std::end(known)) {
            throw ConfigError("config: unknown key '" + item.key() + "'");
        }
    }
    SimConfig c = base;
    detail::read_field(j, "preset", c.preset);
    detail::read_field(j, "J", c.J);
    detail::read_field(j, "gamma", c.gamma);
    detail::read_field(j, "target", c.target);
    if (j.contains("initial")) {
        const json& v = j.at("initial");
        if (v.is_number_integer()) c.initial = v.get<Index>();
        else if (v.is_string()) c.initial = v.get<std::string>();
        else throw ConfigError("initial: expected an eigenstate index or a matrix file path");
    }
    detail::read_field(j, "eta", c.eta);
    detail::read_field(j, "dt", c.dt);
    detail::read_field(j, "T", c.T);
    detail::read_field(j, "M", c.M);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "output", c.output);
    detail::read_field(j, "stride", c.stride);
    detail::read_field(j, "control", c.control);
    detail::read_field(j, "gamma_a", c.gamma_a);
    detail::read_field(j, "t_cap", c.t_cap);
    detail::read_field(j, "dt_ode", c.dt_ode);
    detail::read_field(j, "eps_conv", c.eps_conv);
    detail::read_field(j, "threads", c.threads);
    return c;
}

inline SimConfig config_from_file(const std::string& path, SimConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    try {
        return config_from_json(j, base);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline void validate(const SimConfig& c) {
    auto fail = [](const std::string& field, const std::string& rule, double got) {
        std::ostringstream os;
        os << field << ": " << rule << " (got " << got << ")";
        throw ConfigError(os.str());
    };
    const double twice = 2.0 * c.J;
    if (!(twice >= 1.0) || std::abs(twice - std::round(twice)) > 1e-12)
        fail("J", "must be a positive integer or half-integer", c.J);
    const auto n = static_cast<Index>(std::lround(twice)) + 1;
    if (!(c.gamma > 0.0) || !std::isfinite(c.gamma)) fail("gamma", "must be > 0", c.gamma);
    if (c.target < 1 || c.target > n) fail("target", "must lie in [1, 2J+1]", static_cast<double>(c.target));
    if (const auto* k = std::get_if<Index>(&c.initial); k && (*k < 1 || *k > n))
        fail("initial", "eigenstate index must lie in [1, 2J+1]", static_cast<double>(*k));
    if (!(c.eta > 0.0 && c.eta <= 1.0)) fail("eta", "must lie in (0, 1]", c.eta);
    if (!(c.dt > 0.0) || !std::isfinite(c.dt)) fail("dt", "must be > 0", c.dt);
    if (!(c.T > 0.0) || !std::isfinite(c.T)) fail("T", "must be > 0", c.T);
    if (c.M < 1) fail("M", "must be >= 1", static_cast<double>(c.M));
    if (c.stride < 1) fail("stride", "must be >= 1", static_cast<double>(c.stride));
    parse_control(c.control);
    if (!(c.gamma_a > 0.0 && c.gamma_a < 1.0)) fail("gamma_a", "must lie in (0, 1)", c.gamma_a);
    if (!(c.t_cap > 0.0) || !std::isfinite(c.t_cap)) fail("t_cap", "must be > 0", c.t_cap);
    if (!(c.dt_ode > 0.0) || !std::isfinite(c.dt_ode)) fail("dt_ode", "must be > 0", c.dt_ode);
    if (!(c.eps_conv > 0.0 && c.eps_conv < 1.0)) fail("eps_conv", "must lie in (0, 1)", c.eps_conv);
    if (c.output.empty()) throw ConfigError("output: must not be empty");
}

/// Reads a density matrix from {"re": [[...]], "im": [[...]]}; "im" may be omitted.
inline QuantumState load_state(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("initial: cannot open matrix file '" + path + "'");
    try {
        const json j = json::parse(in);
        const auto re = j.at("re").get<std::vector<std::vector<double>>>();
        std::vector<std::vector<double>> im;
        if (j.contains("im")) im = j.at("im").get<std::vector<std::vector<double>>>();
        const auto n = static_cast<Index>(re.size());
        Matrix m = Matrix::Zero(n, n);
        for (Index r = 0; r < n; ++r) {
            if (static_cast<Index>(re[r].size()) != n) throw ConfigError("initial: matrix is not square");
            for (Index c = 0; c < n; ++c) {
                const double imag = im.empty() ? 0.0 : im.at(r).at(c);
                m(r, c) = Complex(re[r][c], imag);
            }
        }
        return QuantumState::from_matrix(m);
    } catch (const json::exception& e) {
        throw ConfigError("initial: " + path + ": " + e.what());
    } catch (const std::out_of_range&) {
        throw ConfigError("initial: " + path + ": 'im' has the wrong shape");
    } catch (const InvalidArgument& e) {
        throw ConfigError("initial: " + path + ": " + e.what());
    }
}

inline unsigned resolve_threads(unsigned configured) {
    if (configured > 0) return configured;
    if (const char* env = std::getenv("QFB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return 0;
}

/// Full-precision decimal rendering of a double.
inline std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {
struct Context {
    SimConfig cfg;
    std::shared_ptr<const SpinOperators> ops;
    QuantumState rho0;
    SdeStepConfig step;
    std::filesystem::path out_dir;
};

inline Context prepare(const SimConfig& cfg) {
    validate(cfg);
    auto ops = std::make_shared<const SpinOperators>(make_spin_operators(cfg.J));
    QuantumState rho0 = std::holds_alternative<Index>(cfg.initial)
                            ? eigenstate(*ops, std::get<Index>(cfg.initial))
                            : load_state(std::get<std::string>(cfg.initial));
    if (rho0.dim() != ops->dim) throw ConfigError("initial: matrix dimension does not match 2J+1");
    SdeStepConfig step;
    step.dt = cfg.dt;
    step.eta = cfg.eta;
    std::filesystem::path out = cfg.output;
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.output + "': " + ec.message());
    return {cfg, std::move(ops), std::move(rho0), step, out};
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
    return f;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    auto f = open_out(p);
    f << text;
    if (!f) throw IoError("failed writing '" + p.string() + "'");
}

inline ControlPolicy make_policy(const Context& ctx) {
    const ControlSpec spec = parse_control(ctx.cfg.control);
    if (spec.switching) return new_controller(ctx.cfg.gamma, ctx.cfg.target, ctx.ops, ctx.rho0);
    return ConstantControl{spec.u, ctx.cfg.target, ctx.ops};
}

inline void warn_gamma(const Context& ctx, std::ostream& err) {
    if (parse_control(ctx.cfg.control).switching &&
        ctx.cfg.gamma >= 1.0 / static_cast<double>(ctx.ops->dim)) {
        err << "warning: gamma = " << ctx.cfg.gamma << " >= 1/N = " << 1.0 / static_cast<double>(ctx.ops->dim)
            << "; global stabilization is not guaranteed\n";
    }
}

inline json nullable(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
}  // namespace detail

inline std::string trajectory_csv(const TrajectoryRecord& r) {
    std::string s = "t,V,u,purity,mode\n";
    for (std::size_t k = 0; k < r.times.size(); ++k) {
        s += num(r.times[k]) + ',' + num(r.V[k]) + ',' + num(r.u[k]) + ',' + num(r.purity[k]) + ',' +
             std::string(to_string(r.mode[k])) + '\n';
    }
    return s;
}

/// One CSV per path, seeds seed .. seed + M - 1.
inline int cmd_simulate(const SimConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto ctx = detail::prepare(cfg);
    detail::warn_gamma(ctx, err);
    detail::write_text(ctx.out_dir / "config.json", canonical(cfg));
    const ControlPolicy policy = detail::make_policy(ctx);
    TrajectoryOptions opts{cfg.stride, false, cfg.eps_conv};
    std::size_t converged = 0;
    for (std::size_t i = 0; i < cfg.M; ++i) {
        const std::uint64_t seed = cfg.seed + i;
        const auto rec = simulate_trajectory(ctx.rho0, policy, cfg.T, ctx.step, seed, opts);
        const auto path = ctx.out_dir / ("trajectory_seed" + std::to_string(seed) + ".csv");
        detail::write_text(path, trajectory_csv(rec));
        converged += rec.converged ? 1 : 0;
        out << "seed " << seed << ": final V = " << num(rec.V.back())
            << (rec.converged ? " (converged)" : " (not converged)") << " -> " << path.string() << '\n';
    }
    out << "converged " << converged << " / " << cfg.M << '\n';
    return kOk;
}

inline int cmd_ensemble(const SimConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto ctx = detail::prepare(cfg);
    detail::warn_gamma(ctx, err);
    detail::write_text(ctx.out_dir / "config.json", canonical(cfg));
    EnsembleOptions opts;
    opts.record_stride = cfg.stride;
    opts.eps_conv = cfg.eps_conv;
    opts.threads = resolve_threads(cfg.threads);
    const auto stats = run_ensemble(ctx.rho0, detail::make_policy(ctx), cfg.T, ctx.step, cfg.M, cfg.seed, opts);

    std::string csv = "t,mean_V,conv_frac\n";
    for (std::size_t k = 0; k < stats.times.size(); ++k)
        csv += num(stats.times[k]) + ',' + num(stats.mean_V[k]) + ',' + num(stats.conv_fraction[k]) + '\n';
    detail::write_text(ctx.out_dir / "ensemble.csv", csv);

    json summary;
    summary["convergence_fraction"] = stats.convergence_fraction;
    summary["M"] = stats.M;
    summary["completed"] = stats.completed;
    summary["seed"] = stats.base_seed;
    summary["eps_conv"] = stats.eps_conv;
    summary["final_mean_V"] = stats.mean_V.back();
    summary["T"] = stats.times.back();
    json failures = json::array();
    for (const auto& f : stats.failures)
        failures.push_back({{"index", f.index}, {"time", detail::nullable(f.time)}, {"message", f.message}});
    summary["failures"] = failures;
    detail::write_text(ctx.out_dir / "ensemble_summary.json", summary.dump(2) + "\n");
    out << "convergence fraction " << num(stats.convergence_fraction) << " over " << stats.completed
        << " paths; final mean V = " << num(stats.mean_V.back()) << '\n';
    return kOk;
}

inline json exit_time_json(const ExitTimeReport& r) {
    json j;
    j["gamma_a"] = r.gamma_a;
    j["t_cap"] = r.t_cap;
    j["M"] = r.M;
    j["samples"] = r.samples;
    j["censored"] = r.censored;
    j["inconclusive"] = r.inconclusive;
    j["mean"] = detail::nullable(r.mean);
    j["std_error"] = detail::nullable(r.std_error);
    j["t0"] = detail::nullable(r.t0);
    j["p_exceed"] = detail::nullable(r.p_exceed);
    j["dynkin_bound"] = detail::nullable(r.dynkin_bound);
    return j;
}

/// Exit times from {V > 1 - gamma_a} under u = 1.
inline int cmd_exit_time(const SimConfig& cfg, std::ostream& out, std::ostream&) {
    const auto ctx = detail::prepare(cfg);
    detail::write_text(ctx.out_dir / "config.json", canonical(cfg));
    ExitTimeOptions opts;
    opts.threads = resolve_threads(cfg.threads);
    const auto rep = estimate_exit_time(cfg.gamma_a, ctx.rho0, cfg.target, cfg.t_cap, ctx.step, cfg.M,
                                        cfg.seed, ctx.ops, opts);
    detail::write_text(ctx.out_dir / "exit_time.json", exit_time_json(rep).dump(2) + "\n");
    if (rep.inconclusive) {
        out << "inconclusive: all " << rep.M << " paths censored at t_cap = " << num(rep.t_cap) << '\n';
    } else {
        out << "mean exit time " << num(rep.mean) << " +- " << num(rep.std_error) << ", dynkin bound "
            << num(rep.dynkin_bound) << ", censored " << rep.censored << " / " << rep.M << '\n';
    }
    return kOk;
}

/// Ensemble dynamics under the constant drive from --control constant:<u>.
inline int cmd_ode(const SimConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto ctx = detail::prepare(cfg);
    const ControlSpec spec = parse_control(cfg.control);
    if (spec.switching) throw ConfigError("control: ode needs a constant drive, e.g. --control constant:1");
    if (spec.u == 0.0) err << "warning: u = 0 leaves every diagonal state at rest\n";
    detail::write_text(ctx.out_dir / "config.json", canonical(cfg));
    const double u = spec.u;
    const auto traj = integrate_ensemble(ctx.rho0, [u](double) { return u; }, cfg.T, cfg.dt_ode, *ctx.ops,
                                         cfg.stride);
    const Matrix mixed = maximally_mixed(ctx.ops->dim).matrix();
    std::string csv = "t,Q,dist_mixed,V\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        const auto& s = traj.states[k];
        csv += num(traj.times[k]) + ',' + num(lyapunov_Q(s)) + ',' + num((s.matrix() - mixed).norm()) + ',' +
               num(distance_V(s, cfg.target)) + '\n';
    }
    detail::write_text(ctx.out_dir / "ode.csv", csv);
    out << "final |rho_bar - I/N|_F = " << num((traj.states.back().matrix() - mixed).norm()) << '\n';
    return kOk;
}

/// Parses `args` (without the program name) and runs the selected subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"Switching feedback stabilization of spin-J systems under continuous measurement", "qfb"};
    app.require_subcommand(1);

    struct Overrides {
        std::optional<std::string> preset, config, initial, output, control;
        std::optional<double> J, gamma, eta, dt, T, gamma_a, t_cap, dt_ode, eps_conv;
        std::optional<Index> target, stride;
        std::optional<std::size_t> M;
        std::optional<std::uint64_t> seed;
        std::optional<unsigned> threads;
    } ov;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--preset", ov.preset, "fig1 | fig2 | acceptance-n3");
        sub->add_option("--config", ov.config, "JSON configuration file");
        sub->add_option("--J", ov.J, "angular momentum J (N = 2J + 1)");
        sub->add_option("--gamma", ov.gamma, "switching parameter");
        sub->add_option("--target", ov.target, "target eigenstate index f (1-based)");
        sub->add_option("--initial", ov.initial, "initial eigenstate index or matrix JSON file");
        sub->add_option("--eta", ov.eta, "detector efficiency in (0, 1]");
        sub->add_option("--dt", ov.dt, "SDE time step");
        sub->add_option("--T", ov.T, "horizon");
        sub->add_option("--M", ov.M, "number of trajectories");
        sub->add_option("--seed", ov.seed, "base seed");
        sub->add_option("--output,-o", ov.output, "output directory");
        sub->add_option("--stride", ov.stride, "record every k-th step");
        sub->add_option("--control", ov.control, "mh | constant:<u>");
        sub->add_option("--gamma-a", ov.gamma_a, "exit-time region parameter");
        sub->add_option("--t-cap", ov.t_cap, "exit-time horizon");
        sub->add_option("--dt-ode", ov.dt_ode, "ensemble ODE step");
        sub->add_option("--eps-conv", ov.eps_conv, "convergence threshold on V");
        sub->add_option("--threads", ov.threads, "worker threads (0: $QFB_THREADS or all cores)");
    };
    auto* sim = app.add_subcommand("simulate", "sample paths, one CSV per seed");
    auto* ens = app.add_subcommand("ensemble", "ensemble statistics");
    auto* ext = app.add_subcommand("exit-time", "exit times under u = 1 and the Dynkin bound");
    auto* ode = app.add_subcommand("ode", "ensemble-averaged dynamics");
    for (auto* s : {sim, ens, ext, ode}) add_common(s);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }

    try {
        SimConfig cfg = ov.preset ? preset_config(*ov.preset) : SimConfig{};
        if (ov.config) cfg = config_from_file(*ov.config, cfg);
        if (ov.J) cfg.J = *ov.J;
        if (ov.gamma) cfg.gamma = *ov.gamma;
        if (ov.target) cfg.target = *ov.target;
        if (ov.initial) {
            const std::string& s = *ov.initial;
            const bool numeric = !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
            cfg.initial = numeric ? std::variant<Index, std::string>(static_cast<Index>(std::stoll(s)))
                                  : std::variant<Index, std::string>(s);
        }
        if (ov.eta) cfg.eta = *ov.eta;
        if (ov.dt) cfg.dt = *ov.dt;
        if (ov.T) cfg.T = *ov.T;
        if (ov.M) cfg.M = *ov.M;
        if (ov.seed) cfg.seed = *ov.seed;
        if (ov.output) cfg.output = *ov.output;
        if (ov.stride) cfg.stride = *ov.stride;
        if (ov.control) cfg.control = *ov.control;
        if (ov.gamma_a) cfg.gamma_a = *ov.gamma_a;
        if (ov.t_cap) cfg.t_cap = *ov.t_cap;
        if (ov.dt_ode) cfg.dt_ode = *ov.dt_ode;
        if (ov.eps_conv) cfg.eps_conv = *ov.eps_conv;
        if (ov.threads) cfg.threads = *ov.threads;

        if (sim->parsed()) return cmd_simulate(cfg, out, err);
        if (ens->parsed()) return cmd_ensemble(cfg, out, err);
        if (ext->parsed()) return cmd_exit_time(cfg, out, err);
        return cmd_ode(cfg, out, err);
    } catch (const InvalidArgument& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericalFailure& e) {
        err << "numerical failure";
        if (std::isfinite(e.time())) err << " at t = " << e.time();
        err << ": " << e.what() << '\n';
        return kNumericalFailure;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << '\n';
        return kIoError;
    }
}

}  // namespace qfb::cli
