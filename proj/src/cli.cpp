#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "nnsd/csv.hpp"
#include "nnsd/io.hpp"
#include "nnsd/simulation.hpp"

namespace nnsd {

using nlohmann::json;

namespace {

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
        else if (c == '"') c = '\'';
    return s;
}

int report_error(const char* code, const std::string& msg, int status) {
    std::cerr << "error: code=" << code << " msg=\"" << one_line(msg) << "\"\n";
    return status;
}

std::string join_path(const std::string& dir, const char* name) { return (std::filesystem::path(dir) / name).string(); }

void make_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw InputError("cannot create directory '" + dir + "': " + ec.message());
}

std::string edge_list_csv(const std::vector<std::string>& ids, const BinaryMatrix& b) {
    std::ostringstream os;
    os << "id_i,id_j\n";
    for (Index i = 0; i < b.rows(); ++i)
        for (Index j = i + 1; j < b.cols(); ++j)
            if (b(i, j)) os << ids[static_cast<std::size_t>(i)] << ',' << ids[static_cast<std::size_t>(j)] << '\n';
    return os.str();
}

// Units file on the modelling scale (identity transform) plus the config that fits it.
void write_units_bundle(const std::string& dir, const Geometry& g, const Vector& y, const Vector& var_y,
                        const std::vector<std::string>& covariate_names) {
    make_dir(dir);
    std::ostringstream os;
    os << "id,x,y,response,se";
    for (const auto& c : covariate_names) os << ',' << c;
    os << '\n';
    for (Index i = 0; i < g.size(); ++i) {
        os << g.unit_ids[static_cast<std::size_t>(i)] << ',' << format_real(g.centroids(i, 0)) << ','
           << format_real(g.centroids(i, 1)) << ',' << format_real(y(i)) << ','
           << format_real(std::sqrt(var_y(var_y.size() == 1 ? 0 : i)));
        for (Index c = 0; c < g.covariates.cols(); ++c) os << ',' << format_real(g.covariates(i, c));
        os << '\n';
    }
    write_text(join_path(dir, "units.csv"), os.str());
    json cfg;
    cfg["units_file"] = join_path(dir, "units.csv");
    if (g.geo_adjacency) {
        write_text(join_path(dir, "adjacency.csv"), edge_list_csv(g.unit_ids, *g.geo_adjacency));
        cfg["adjacency_file"] = join_path(dir, "adjacency.csv");
    }
    cfg["columns"] = {{"response", "response"}, {"se", "se"}, {"transform", "identity"}, {"covariates", covariate_names}};
    write_text(join_path(dir, "fit_config.json"), cfg.dump(2) + "\n");
}

std::vector<std::string> default_covariate_names(Index k) {
    std::vector<std::string> names;
    for (Index c = 0; c < k; ++c) names.push_back(k == 1 ? "log_housing_cost" : "x" + std::to_string(c + 1));
    return names;
}

ScenarioSpec parse_scenario(const std::string& text, std::uint64_t master, std::size_t index) {
    ScenarioSpec s;
    if (text == "1" || text == "2" || text == "3") {
        s = table2_scenario(std::stoi(text));
    } else if (text.rfind("gamma=", 0) == 0) {
        try {
            s.gamma_true = std::stod(text.substr(6));
        } catch (const std::exception&) {
            throw ConfigError("bad scenario '" + text + "'");
        }
        s.name = text;
    } else {
        throw ConfigError("scenario must be 1, 2, 3 or gamma=<value> (got '" + text + "')");
    }
    s.seed = derive_seed(master, static_cast<std::uint64_t>(index));
    s.validate();
    return s;
}

std::vector<Variant> parse_variants(const std::string& list) {
    std::vector<Variant> out;
    for (const auto& v : split_line(list, ','))
        if (!v.empty()) out.push_back(parse_variant(v));
    if (out.empty()) throw ConfigError("no variants given");
    return out;
}

int run_fit(const std::optional<std::string>& config_path, const json& overrides, bool verbose) {
    const RunConfig cfg = parse_config(config_path, overrides);
    const SpatialDomain domain = load_domain(cfg.units_file, cfg.adjacency_file, cfg.columns);
    const auto chains = run_chains(domain, cfg.hp, cfg.chain, cfg.n_chains, cfg.parallel);
    DiagnosticsReport report;
    try {
        report = diagnose(chains, cfg.rhat_threshold);
    } catch (const NumericalError& e) {
        report.mpsrf = std::numeric_limits<double>::quiet_NaN();
        report.threshold = cfg.rhat_threshold;
        report.pass = false;
        std::cerr << "warning: code=diagnostics msg=\"" << one_line(e.what()) << "\"\n";
    }
    const PosteriorSummary summary = posterior_summary(chains, domain.unit_ids, &report);
    write_outputs(cfg.output_dir, cfg, domain, chains, report, summary);
    if (verbose)
        for (const auto& c : chains)
            for (const auto& [name, counter] : c.acceptance)
                if (counter.proposed > 0)
                    std::cerr << "chain " << c.chain_index << " acceptance " << name << " " << counter.rate() << "\n";
    std::cout << "fit: out=" << cfg.output_dir << " mpsrf=" << format_real(report.mpsrf)
              << " converged=" << (report.pass ? 1 : 0) << "\n";
    if (!report.pass) {
        std::cerr << "warning: code=not_converged mpsrf=" << format_real(report.mpsrf)
                  << " threshold=" << format_real(report.threshold) << "\n";
        return kExitNotConverged;
    }
    return kExitOk;
}

int run_score(const std::string& truth_path, const std::string& est_path, const std::string& truth_col,
              const std::string& est_col) {
    const Table truth = read_table(truth_path);
    const Table est = read_table(est_path);
    if (truth.header.size() < 2 || est.header.size() < 2) throw InputError("score files need an id and a value column");
    const auto value_col = [](const Table& t, const std::string& named, const char* preferred) {
        if (!named.empty()) return t.require(named);
        const int p = t.find(preferred);
        return p >= 0 ? p : 1;
    };
    const int tc = value_col(truth, truth_col, "y");
    const int ec = value_col(est, est_col, "post_median");
    std::map<std::string, double> fitted;
    for (const auto& row : est.rows) fitted[row[0]] = parse_real(row[static_cast<std::size_t>(ec)], est_path);
    Vector t(static_cast<Index>(truth.rows.size())), f(static_cast<Index>(truth.rows.size()));
    for (std::size_t r = 0; r < truth.rows.size(); ++r) {
        const auto it = fitted.find(truth.rows[r][0]);
        if (it == fitted.end()) throw InputError("unit '" + truth.rows[r][0] + "' missing from " + est_path);
        t(static_cast<Index>(r)) = parse_real(truth.rows[r][static_cast<std::size_t>(tc)], truth_path);
        f(static_cast<Index>(r)) = it->second;
    }
    const Score s = score(t, f);
    std::cout << "mse=" << format_real(s.mse) << " mae=" << format_real(s.mae) << "\n";
    return kExitOk;
}

int run_diagnose(const std::string& path, double threshold) {
    std::vector<std::string> names;
    const auto chains = read_traces(path, names);
    const DiagnosticsReport r = diagnose(chains, names, threshold);
    std::cout << "mpsrf=" << format_real(r.mpsrf) << " converged=" << (r.pass ? 1 : 0) << " chains=" << r.m
              << " draws=" << r.n << "\n";
    for (std::size_t k = 0; k < r.names.size(); ++k)
        std::cout << "psrf " << r.names[k] << " " << format_real(r.psrf(static_cast<Index>(k))) << " ess "
                  << format_real(r.ess(static_cast<Index>(k))) << "\n";
    return r.pass ? kExitOk : kExitNotConverged;
}

} // namespace

int cli_dispatch(int argc, const char* const* argv) {
    CLI::App app{"Bayesian areal models with learned neighborhoods"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Extra detail on stderr");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a model and write the output bundle");
    std::string config_path, units, adjacency, variant, out_dir;
    Index iterations = 0, burn_in = 0, thin = 0;
    int n_chains = 0;
    std::uint64_t seed = 0;
    double threshold = kDefaultRhatThreshold;
    bool store_positions = false, serial = false;
    auto* o_config = fit->add_option("-c,--config", config_path, "JSON config file");
    auto* o_units = fit->add_option("--units", units, "Units file");
    auto* o_adj = fit->add_option("--adjacency", adjacency, "Edge list of geographic neighbors");
    auto* o_variant = fit->add_option("--variant", variant, "nnsd, nn, sd or icar");
    auto* o_iter = fit->add_option("--iterations", iterations);
    auto* o_burn = fit->add_option("--burn-in", burn_in);
    auto* o_thin = fit->add_option("--thin", thin);
    auto* o_chains = fit->add_option("--chains", n_chains);
    auto* o_seed = fit->add_option("--seed", seed);
    auto* o_out = fit->add_option("-o,--out", out_dir, "Output directory");
    auto* o_thr = fit->add_option("--threshold", threshold, "mpsrf threshold");
    auto* o_store = fit->add_flag("--store-positions", store_positions, "Also write every latent position draw");
    auto* o_serial = fit->add_flag("--serial", serial, "Run chains one after another");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a scenario dataset, pseudo-data or the empirical stand-in");
    std::string sim_scenario, sim_units, sim_config, sim_out;
    bool sim_pseudo = false, sim_empirical = false;
    Index sim_n = 67;
    std::uint64_t sim_seed = 1, sim_geometry_seed = 0;
    sim->add_option("--scenario", sim_scenario, "1, 2, 3 or gamma=<value>");
    sim->add_flag("--pseudo", sim_pseudo, "Pseudo-data around an existing units file");
    sim->add_flag("--empirical", sim_empirical, "Synthetic stand-in for a survey file");
    sim->add_option("--units", sim_units, "Units file (with --pseudo)");
    sim->add_option("-c,--config", sim_config, "Config naming the units file and columns (with --pseudo)");
    sim->add_option("--n", sim_n, "Number of synthetic units");
    sim->add_option("--seed", sim_seed);
    auto* o_gseed = sim->add_option("--geometry-seed", sim_geometry_seed);
    sim->add_option("-o,--out", sim_out, "Output directory")->required();

    // score
    auto* sc = app.add_subcommand("score", "MSE and MAE of estimates against truth");
    std::string truth_file, est_file, truth_col, est_col;
    sc->add_option("truth", truth_file)->required();
    sc->add_option("estimates", est_file)->required();
    sc->add_option("--truth-col", truth_col);
    sc->add_option("--est-col", est_col);

    // diagnose
    auto* dg = app.add_subcommand("diagnose", "Recompute convergence diagnostics from traces.csv");
    std::string traces_file;
    double dg_threshold = kDefaultRhatThreshold;
    dg->add_option("traces", traces_file)->required();
    dg->add_option("--threshold", dg_threshold);

    // compare
    auto* cmp = app.add_subcommand("compare", "Score model variants on simulated data");
    std::vector<std::string> cmp_scenarios;
    std::string cmp_variants = "icar,nn,sd,nnsd", cmp_out;
    int cmp_replicates = 10, cmp_chains = 2;
    Index cmp_n = 67, cmp_iterations = 4000, cmp_burn = 2000;
    std::uint64_t cmp_seed = 1;
    bool cmp_empirical = false, cmp_serial = false;
    cmp->add_option("--scenario", cmp_scenarios, "1, 2, 3 or gamma=<value>; repeatable");
    cmp->add_flag("--empirical", cmp_empirical, "Empirical study on the synthetic stand-in");
    cmp->add_option("--variants", cmp_variants, "Comma-separated variants");
    cmp->add_option("--replicates", cmp_replicates);
    cmp->add_option("--seed", cmp_seed);
    cmp->add_option("--n", cmp_n, "Number of synthetic units");
    cmp->add_option("--iterations", cmp_iterations);
    cmp->add_option("--burn-in", cmp_burn);
    cmp->add_option("--chains", cmp_chains);
    cmp->add_flag("--serial", cmp_serial);
    cmp->add_option("-o,--out", cmp_out, "Also write the table to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage", e.what(), kExitUsage);
    }

    try {
        if (*fit) {
            json ov = json::object();
            if (*o_units) ov["units_file"] = units;
            if (*o_adj) ov["adjacency_file"] = adjacency;
            if (*o_variant) ov["variant"] = variant;
            if (*o_iter) ov["iterations"] = iterations;
            if (*o_burn) ov["burn_in"] = burn_in;
            if (*o_thin) ov["thin"] = thin;
            if (*o_chains) ov["n_chains"] = n_chains;
            if (*o_seed) ov["seed"] = seed;
            if (*o_out) ov["output_dir"] = out_dir;
            if (*o_thr) ov["rhat_threshold"] = threshold;
            if (*o_store) ov["store_positions"] = store_positions;
            if (*o_serial) ov["parallel"] = !serial;
            return run_fit(*o_config ? std::optional<std::string>(config_path) : std::nullopt, ov, verbose);
        }
        if (*sim) {
            const int modes = (sim_scenario.empty() ? 0 : 1) + (sim_pseudo ? 1 : 0) + (sim_empirical ? 1 : 0);
            if (modes != 1) return report_error("usage", "simulate needs exactly one of --scenario, --pseudo, --empirical", kExitUsage);
            const std::uint64_t gseed = *o_gseed ? sim_geometry_seed : sim_seed;
            if (!sim_scenario.empty()) {
                ScenarioSpec spec = parse_scenario(sim_scenario, sim_seed, 0);
                const Geometry g = synthetic_geometry(sim_n, gseed);
                Rng rng(spec.seed);
                const ScenarioData data = gen_scenario(spec, g, rng);
                write_units_bundle(sim_out, g, data.y, Vector::Constant(1, spec.sigma2_y_true), default_covariate_names(1));
                std::ostringstream tr;
                tr << "id,y,mu,eps\n";
                for (Index i = 0; i < g.size(); ++i)
                    tr << g.unit_ids[static_cast<std::size_t>(i)] << ',' << format_real(data.y(i)) << ','
                       << format_real(data.mu(i)) << ',' << format_real(data.eps(i)) << '\n';
                write_text(join_path(sim_out, "truth.csv"), tr.str());
                write_text(join_path(sim_out, "true_edges.csv"), edge_list_csv(g.unit_ids, data.adjacency.matrix()));
            } else if (sim_empirical) {
                const EmpiricalData e = empirical_standin(sim_n, gseed);
                write_units_bundle(sim_out, e.geometry, e.y, e.var_y, default_covariate_names(1));
            } else {
                json ov = json::object();
                if (!sim_units.empty()) ov["units_file"] = sim_units;
                const RunConfig cfg = parse_config(sim_config.empty() ? std::nullopt : std::optional<std::string>(sim_config), ov);
                const SpatialDomain d = load_domain(cfg.units_file, cfg.adjacency_file, cfg.columns);
                Rng rng(sim_seed);
                const Vector pseudo = gen_pseudo_data(d.y, d.var_y, rng);
                const Geometry g = geometry_from_domain(d);
                const auto names = cfg.columns.covariates.empty() ? default_covariate_names(g.covariates.cols()) : cfg.columns.covariates;
                write_units_bundle(sim_out, g, pseudo, d.var_y, names);
                std::ostringstream tr;
                tr << "id,y\n";
                for (Index i = 0; i < d.size(); ++i)
                    tr << d.unit_ids[static_cast<std::size_t>(i)] << ',' << format_real(pseudo(i)) << '\n';
                write_text(join_path(sim_out, "truth.csv"), tr.str());
            }
            std::cout << "simulate: out=" << sim_out << "\n";
            return kExitOk;
        }
        if (*sc) return run_score(truth_file, est_file, truth_col, est_col);
        if (*dg) return run_diagnose(traces_file, dg_threshold);
        if (*cmp) {
            FitSettings fs = desk_fit_settings();
            fs.chain.iterations = cmp_iterations;
            fs.chain.burn_in = cmp_burn;
            fs.n_chains = cmp_chains;
            fs.parallel = !cmp_serial;
            fs.chain.validate();
            if (cmp_chains < 1) throw ConfigError("chains must be at least 1");
            const auto variants = parse_variants(cmp_variants);
            ScoreTable table;
            if (cmp_empirical) {
                if (!cmp_scenarios.empty()) return report_error("usage", "--empirical and --scenario are exclusive", kExitUsage);
                table = run_empirical_study(empirical_standin(cmp_n, cmp_seed), variants, cmp_replicates, fs,
                                            derive_seed(cmp_seed, 1));
            } else {
                if (cmp_scenarios.empty()) cmp_scenarios = {"1", "2", "3"};
                std::vector<ScenarioSpec> specs;
                for (std::size_t k = 0; k < cmp_scenarios.size(); ++k)
                    specs.push_back(parse_scenario(cmp_scenarios[k], cmp_seed, k));
                table = run_comparison(specs, variants, cmp_replicates, fs, synthetic_geometry(cmp_n, cmp_seed));
            }
            const std::string csv = table.to_csv();
            std::cout << csv;
            if (!cmp_out.empty()) write_text(cmp_out, csv);
            for (const auto& c : table.cells)
                if (c.failures > 0)
                    std::cerr << "warning: code=cell_failed scenario=" << c.scenario << " variant=" << to_string(c.variant)
                              << " failures=" << c.failures << " msg=\"" << one_line(c.last_error) << "\"\n";
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        return report_error("config", e.what(), kExitInput);
    } catch (const InputError& e) {
        return report_error("input", e.what(), kExitInput);
    } catch (const NumericalError& e) {
        return report_error("numerical", e.what(), kExitRuntime);
    } catch (const std::exception& e) {
        return report_error("runtime", e.what(), kExitRuntime);
    }
    return report_error("usage", "no subcommand", kExitUsage);
}

} // namespace nnsd
