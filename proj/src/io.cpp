#include "nnsd/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "nnsd/csv.hpp"

namespace nnsd {

using nlohmann::json;

namespace {

template <class T>
T get_field(const json& j, const std::string& key, const std::string& path) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + path + "' has the wrong type");
    }
}

void collect_unknown(const json& j, const std::set<std::string>& allowed, const std::string& prefix,
                     std::vector<std::string>& unknown) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) unknown.push_back(prefix + it.key());
}

std::string na_or_real(double v) { return std::isfinite(v) ? format_real(v) : "NA"; }

std::string summary_line(const SummaryRow& r) {
    return r.parameter + ',' + format_real(r.mean) + ',' + format_real(r.median) + ',' + format_real(r.sd) + ',' +
           format_real(r.q025) + ',' + format_real(r.q975) + ',' + na_or_real(r.psrf) + '\n';
}

} // namespace

void RunConfig::validate() const {
    hp.validate();
    chain.validate();
    if (n_chains < 1) throw ConfigError("n_chains must be at least 1 (got " + std::to_string(n_chains) + ")");
    if (!(rhat_threshold > 1.0)) throw ConfigError("rhat_threshold must exceed 1");
    if (units_file.empty()) throw ConfigError("units_file is required");
    if (columns.response_transform != "log" && columns.response_transform != "identity")
        throw ConfigError("columns.transform must be 'log' or 'identity'");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

json to_json(const RunConfig& c) {
    json j;
    j["variant"] = to_string(c.hp.variant);
    j["iterations"] = c.chain.iterations;
    j["burn_in"] = c.chain.burn_in;
    j["thin"] = c.chain.thin;
    j["n_chains"] = c.n_chains;
    j["seed"] = c.chain.seed;
    j["n_proposals"] = c.chain.n_proposals;
    j["adapt"] = c.chain.adapt;
    j["target_acceptance"] = c.chain.target_acceptance;
    j["store_positions"] = c.chain.store_positions;
    j["parallel"] = c.parallel;
    j["rhat_threshold"] = c.rhat_threshold;
    j["steps"] = {{"alpha", c.chain.steps.alpha}, {"gamma", c.chain.steps.gamma}, {"position", c.chain.steps.position}};
    j["hyper"] = {{"sigma2_alpha", c.hp.sigma2_alpha}, {"sigma2_beta", c.hp.sigma2_beta},
                  {"sigma2_delta", c.hp.sigma2_delta}, {"sigma2_z", c.hp.sigma2_z},
                  {"a_mu", c.hp.a_mu},                 {"b_mu", c.hp.b_mu},
                  {"a_eps", c.hp.a_eps},               {"b_eps", c.hp.b_eps}};
    j["units_file"] = c.units_file;
    j["adjacency_file"] = c.adjacency_file ? json(*c.adjacency_file) : json(nullptr);
    j["output_dir"] = c.output_dir;
    j["columns"] = {{"id", c.columns.id},
                    {"x", c.columns.centroid_x},
                    {"y", c.columns.centroid_y},
                    {"response", c.columns.response},
                    {"se", c.columns.response_se},
                    {"transform", c.columns.response_transform},
                    {"covariates", c.columns.covariates},
                    {"position_covariates", c.columns.position_covariates},
                    {"delimiter", std::string(1, c.columns.delimiter)}};
    return j;
}

RunConfig apply_json(const json& j, RunConfig c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> top = {
        "variant", "iterations", "burn_in", "thin", "n_chains", "seed", "n_proposals", "adapt", "target_acceptance",
        "store_positions", "parallel", "rhat_threshold", "steps", "hyper", "units_file", "adjacency_file",
        "output_dir", "columns"};
    static const std::set<std::string> steps = {"alpha", "gamma", "position"};
    static const std::set<std::string> hyper = {"sigma2_alpha", "sigma2_beta", "sigma2_delta", "sigma2_z",
                                                "a_mu",         "b_mu",        "a_eps",        "b_eps"};
    static const std::set<std::string> columns = {"id", "x", "y", "response", "se", "transform", "covariates",
                                                  "position_covariates", "delimiter"};
    std::vector<std::string> unknown;
    collect_unknown(j, top, "", unknown);
    for (const char* section : {"steps", "hyper", "columns"}) {
        if (!j.contains(section)) continue;
        if (!j.at(section).is_object()) throw ConfigError(std::string("config field '") + section + "' must be an object");
        collect_unknown(j.at(section), std::string(section) == "steps" ? steps : std::string(section) == "hyper" ? hyper : columns,
                        std::string(section) + ".", unknown);
    }
    if (!unknown.empty()) {
        std::string list;
        for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config keys: " + list);
    }

    if (j.contains("variant")) c.hp.variant = parse_variant(get_field<std::string>(j, "variant", "variant"));
    if (j.contains("iterations")) c.chain.iterations = get_field<Index>(j, "iterations", "iterations");
    if (j.contains("burn_in")) c.chain.burn_in = get_field<Index>(j, "burn_in", "burn_in");
    if (j.contains("thin")) c.chain.thin = get_field<Index>(j, "thin", "thin");
    if (j.contains("n_chains")) c.n_chains = get_field<int>(j, "n_chains", "n_chains");
    if (j.contains("seed")) c.chain.seed = get_field<std::uint64_t>(j, "seed", "seed");
    if (j.contains("n_proposals")) c.chain.n_proposals = get_field<Index>(j, "n_proposals", "n_proposals");
    if (j.contains("adapt")) c.chain.adapt = get_field<bool>(j, "adapt", "adapt");
    if (j.contains("target_acceptance"))
        c.chain.target_acceptance = get_field<double>(j, "target_acceptance", "target_acceptance");
    if (j.contains("store_positions")) c.chain.store_positions = get_field<bool>(j, "store_positions", "store_positions");
    if (j.contains("parallel")) c.parallel = get_field<bool>(j, "parallel", "parallel");
    if (j.contains("rhat_threshold")) c.rhat_threshold = get_field<double>(j, "rhat_threshold", "rhat_threshold");
    if (j.contains("units_file")) c.units_file = get_field<std::string>(j, "units_file", "units_file");
    if (j.contains("adjacency_file")) {
        if (j.at("adjacency_file").is_null())
            c.adjacency_file.reset();
        else
            c.adjacency_file = get_field<std::string>(j, "adjacency_file", "adjacency_file");
    }
    if (j.contains("output_dir")) c.output_dir = get_field<std::string>(j, "output_dir", "output_dir");
    if (j.contains("steps")) {
        const json& s = j.at("steps");
        if (s.contains("alpha")) c.chain.steps.alpha = get_field<double>(s, "alpha", "steps.alpha");
        if (s.contains("gamma")) c.chain.steps.gamma = get_field<double>(s, "gamma", "steps.gamma");
        if (s.contains("position")) c.chain.steps.position = get_field<double>(s, "position", "steps.position");
    }
    if (j.contains("hyper")) {
        const json& h = j.at("hyper");
        const std::pair<const char*, double*> fields[] = {
            {"sigma2_alpha", &c.hp.sigma2_alpha}, {"sigma2_beta", &c.hp.sigma2_beta}, {"sigma2_delta", &c.hp.sigma2_delta},
            {"sigma2_z", &c.hp.sigma2_z},         {"a_mu", &c.hp.a_mu},               {"b_mu", &c.hp.b_mu},
            {"a_eps", &c.hp.a_eps},               {"b_eps", &c.hp.b_eps}};
        for (const auto& [key, dst] : fields)
            if (h.contains(key)) *dst = get_field<double>(h, key, std::string("hyper.") + key);
    }
    if (j.contains("columns")) {
        const json& k = j.at("columns");
        const std::pair<const char*, std::string*> fields[] = {
            {"id", &c.columns.id},       {"x", &c.columns.centroid_x},        {"y", &c.columns.centroid_y},
            {"response", &c.columns.response}, {"se", &c.columns.response_se}, {"transform", &c.columns.response_transform}};
        for (const auto& [key, dst] : fields)
            if (k.contains(key)) *dst = get_field<std::string>(k, key, std::string("columns.") + key);
        if (k.contains("covariates"))
            c.columns.covariates = get_field<std::vector<std::string>>(k, "covariates", "columns.covariates");
        if (k.contains("position_covariates"))
            c.columns.position_covariates =
                get_field<std::vector<std::string>>(k, "position_covariates", "columns.position_covariates");
        if (k.contains("delimiter")) {
            const auto d = get_field<std::string>(k, "delimiter", "columns.delimiter");
            if (d.size() != 1) throw ConfigError("columns.delimiter must be a single character");
            c.columns.delimiter = d[0];
        }
    }
    return c;
}

RunConfig parse_config(const std::optional<std::string>& path, const json& overrides) {
    RunConfig c;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw InputError("cannot read config file '" + *path + "'");
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file '" + *path + "' is not valid JSON: " + e.what());
        }
        c = apply_json(j, c);
    }
    c = apply_json(overrides, c);
    c.validate();
    return c;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
    if (!out) throw InputError("write failed for '" + path + "'");
}

void write_outputs(const std::string& dir, const RunConfig& config, const SpatialDomain& domain,
                   const std::vector<ChainDraws>& chains, const DiagnosticsReport& report,
                   const PosteriorSummary& summary) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());
    const auto file = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
    const Index n = domain.size();

    std::ostringstream ps;
    ps << "parameter,mean,median,sd,q025,q975,psrf\n";
    for (const auto& r : summary.scalars) ps << summary_line(r);
    write_text(file("posterior_summary.csv"), ps.str());

    std::ostringstream ue;
    ue << "unit_id,post_median,post_sd,design_se,pct_se_reduction\n";
    for (Index i = 0; i < n; ++i) {
        const SummaryRow& r = summary.units[static_cast<std::size_t>(i)];
        const double design_se = std::sqrt(domain.var_y(i));
        ue << domain.unit_ids[static_cast<std::size_t>(i)] << ',' << format_real(r.median) << ',' << format_real(r.sd)
           << ',' << format_real(design_se) << ',' << format_real(100.0 * (1.0 - r.sd / design_se)) << '\n';
    }
    write_text(file("unit_estimates.csv"), ue.str());

    std::ostringstream ep;
    ep << "id_i,id_j,inclusion_freq\n";
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            ep << domain.unit_ids[static_cast<std::size_t>(i)] << ',' << domain.unit_ids[static_cast<std::size_t>(j)]
               << ',' << format_real(summary.edge_inclusion(i, j)) << '\n';
    write_text(file("edge_probs.csv"), ep.str());

    std::ostringstream lp;
    lp << "unit_id,z1,z2\n";
    for (Index i = 0; i < n; ++i)
        lp << domain.unit_ids[static_cast<std::size_t>(i)] << ',' << format_real(summary.position_mean(i, 0)) << ','
           << format_real(summary.position_mean(i, 1)) << '\n';
    write_text(file("latent_positions.csv"), lp.str());

    std::ostringstream tr;
    tr << "chain,draw";
    for (const auto& name : chains.front().scalar_names) tr << ',' << name;
    tr << '\n';
    for (const auto& c : chains)
        for (Index t = 0; t < c.n_draws(); ++t) {
            tr << c.chain_index << ',' << t;
            for (Index k = 0; k < c.scalars.cols(); ++k) tr << ',' << format_real(c.scalars(t, k));
            tr << '\n';
        }
    write_text(file("traces.csv"), tr.str());

    if (config.chain.store_positions) {
        std::ostringstream pd;
        pd << "chain,draw,unit_id,z1,z2\n";
        for (const auto& c : chains)
            for (std::size_t t = 0; t < c.position_draws.size(); ++t)
                for (Index i = 0; i < n; ++i)
                    pd << c.chain_index << ',' << t << ',' << domain.unit_ids[static_cast<std::size_t>(i)] << ','
                       << format_real(c.position_draws[t](i, 0)) << ',' << format_real(c.position_draws[t](i, 1)) << '\n';
        write_text(file("position_draws.csv"), pd.str());
    }

    std::ostringstream dg;
    dg << "quantity,value\n";
    dg << "mpsrf," << format_real(report.mpsrf) << '\n';
    dg << "threshold," << format_real(report.threshold) << '\n';
    dg << "converged," << (report.pass ? 1 : 0) << '\n';
    dg << "chains," << report.m << '\n';
    dg << "draws_per_chain," << report.n << '\n';
    for (std::size_t k = 0; k < report.names.size(); ++k) {
        dg << "psrf:" << report.names[k] << ',' << format_real(report.psrf(static_cast<Index>(k))) << '\n';
        dg << "ess:" << report.names[k] << ',' << format_real(report.ess(static_cast<Index>(k))) << '\n';
    }
    for (const auto& name : report.dropped) dg << "constant:" << name << ",1\n";
    for (const auto& c : chains)
        for (const auto& [name, counter] : c.acceptance)
            if (counter.proposed > 0)
                dg << "acceptance:" << c.chain_index << ':' << name << ',' << format_real(counter.rate()) << '\n';
    write_text(file("diagnostics.csv"), dg.str());

    write_text(file("resolved_config.json"), to_json(config).dump(2) + "\n");
}

std::vector<Matrix> read_traces(const std::string& path, std::vector<std::string>& names) {
    const Table t = read_table(path);
    const int chain_col = t.require("chain");
    const int draw_col = t.require("draw");
    names.clear();
    std::vector<int> cols;
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (static_cast<int>(c) != chain_col && static_cast<int>(c) != draw_col) {
            names.push_back(t.header[c]);
            cols.push_back(static_cast<int>(c));
        }
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> rows;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& key = t.rows[r][static_cast<std::size_t>(chain_col)];
        if (!rows.count(key)) order.push_back(key);
        rows[key].push_back(r);
    }
    std::vector<Matrix> out;
    for (const auto& key : order) {
        const auto& idx = rows[key];
        Matrix m(static_cast<Index>(idx.size()), static_cast<Index>(cols.size()));
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < cols.size(); ++c)
                m(static_cast<Index>(r), static_cast<Index>(c)) =
                    parse_real(t.rows[idx[r]][static_cast<std::size_t>(cols[c])], path + ": " + names[c]);
        out.push_back(std::move(m));
    }
    if (out.empty()) throw InputError("no draws in '" + path + "'");
    return out;
}

} // namespace nnsd
