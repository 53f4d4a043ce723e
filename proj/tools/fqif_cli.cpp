// Command-line front end: `simulate` runs the Monte-Carlo study, `fit`
// estimates a model from a long-format CSV, `fpca` dumps the estimated
// eigensystem of the residual covariance.

#include "fqif/fqif.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace fqif;
using nlohmann::json;

BandwidthPolicy parse_bandwidth(const std::string& arg) {
    if (arg == "gcv") return BandwidthPolicy::gcv();
    return BandwidthPolicy::fixed(std::stod(arg));
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    return out;
}

int cmd_simulate(const std::string& scenario_label, int n, int m, int reps,
                 const std::vector<std::string>& method_labels, std::uint64_t seed, int grid,
                 const std::string& bandwidth_arg, const std::string& out_path,
                 const std::string& emit_data_dir, const std::string& format, double fve_tau, int threads) {
    StudyConfig config;
    config.scenario = parse_scenario(scenario_label);
    config.n = n;
    config.m = m;
    config.replications = reps;
    config.seed = seed;
    config.grid_size = grid;
    config.bandwidth = parse_bandwidth(bandwidth_arg);
    config.threads = threads;
    for (const auto& label : method_labels) config.methods.push_back(parse_method(label, fve_tau));
    config.validate();

    if (!emit_data_dir.empty()) {
        std::filesystem::create_directories(emit_data_dir);
        for (int b = 0; b < reps; ++b) {
            auto [dataset, truth] = gen_dataset(config.scenario, n, m, config.beta_true, seed,
                                                static_cast<std::uint64_t>(b) + 1);
            char name[32];
            std::snprintf(name, sizeof(name), "rep_%04d.csv", b + 1);
            auto out = open_out((std::filesystem::path(emit_data_dir) / name).string());
            write_csv(dataset, out);
        }
    }

    const Report report = run_study(config);
    const ReportFormat fmt = format == "md" ? ReportFormat::markdown : ReportFormat::csv;
    if (out_path.empty()) {
        emit_report(report, fmt, std::cout);
    } else {
        auto out = open_out(out_path);
        emit_report(report, fmt, out);
    }

    for (const auto& method : config.methods) {
        bool any_success = false;
        for (const auto& row : report)
            if (row.method == method.label() && row.successes > 0) any_success = true;
        if (!any_success) {
            std::cerr << "method " << method.label() << " had zero successful replications\n";
            return 3;
        }
    }
    return 0;
}

int cmd_fit(const std::string& data_path, const std::string& method_arg, const std::string& kappa_arg,
            double fve_tau, const std::string& bandwidth_arg, int grid, const std::string& out_path,
            bool dump_sandwich) {
    std::ifstream in(data_path);
    if (!in) throw std::runtime_error("cannot open data file: " + data_path);
    const auto dataset = load_csv(in);

    MethodSpec method;
    if (method_arg == "init") method.kind = MethodKind::Init;
    else if (method_arg == "cs") method.kind = MethodKind::LdaCS;
    else if (method_arg == "ar1") method.kind = MethodKind::LdaAR;
    else if (method_arg == "fda") {
        method.kind = MethodKind::Fda;
        method.kappa = kappa_arg == "auto" ? 0 : std::stoi(kappa_arg);
        method.fve_tau = fve_tau;
    } else {
        throw std::invalid_argument("unknown method: " + method_arg + " (expected fda, cs, ar1 or init)");
    }

    const BandwidthPolicy bandwidth = parse_bandwidth(bandwidth_arg);
    const auto result = fit_method(dataset, method, grid, bandwidth, nullptr, /*with_variance=*/true);

    auto out = open_out(out_path);
    out << "coefficient,estimate,std_error\n";
    for (int k = 0; k < dataset.p; ++k) {
        out << (k + 1) << ',' << detail::fmt_full(result.fit.beta_hat[k]) << ',';
        if (result.variance) out << detail::fmt_full(result.variance->std_errors[k]);
        else out << "NA";
        out << "\n";
    }

    json sidecar;
    sidecar["method"] = method.label();
    sidecar["converged"] = result.fit.converged || method.kind == MethodKind::Init;
    sidecar["iterations"] = result.fit.iterations;
    sidecar["halving_events"] = result.fit.halving_events;
    sidecar["q_value"] = result.fit.q_value;
    sidecar["objective_trace"] = result.fit.objective_trace;
    sidecar["ridge_flag"] = result.fit.ridge_flag;
    sidecar["n_subjects"] = dataset.num_subjects();
    sidecar["total_pairs"] = dataset.total_pairs;
    if (method.kind == MethodKind::Fda) {
        sidecar["kappa0"] = result.kappa0;
        sidecar["fve_at_kappa0"] = result.fve;
    }
    // Theorem-style standard errors exist for the FPCA basis; the CS/AR
    // sandwich is the same construction with M_k in place of Phi_k.
    if (result.variance && method.kind != MethodKind::Fda && method.kind != MethodKind::Init)
        sidecar["std_error_kind"] = "analogue";
    if (dump_sandwich && result.variance) {
        auto mat_to_json = [](const MatrixXd& mat) {
            json rows = json::array();
            for (int i = 0; i < mat.rows(); ++i) {
                json row = json::array();
                for (int j = 0; j < mat.cols(); ++j) row.push_back(mat(i, j));
                rows.push_back(row);
            }
            return rows;
        };
        sidecar["a_hat"] = mat_to_json(result.variance->a_hat);
        sidecar["b_hat"] = mat_to_json(result.variance->b_hat);
        sidecar["sigma"] = mat_to_json(result.variance->sigma);
    }
    auto side = open_out(out_path + ".json");
    side << sidecar.dump(2) << "\n";
    return 0;
}

int cmd_fpca(const std::string& data_path, const std::string& bandwidth_arg, int grid,
             const std::string& out_path) {
    std::ifstream in(data_path);
    if (!in) throw std::runtime_error("cannot open data file: " + data_path);
    const auto dataset = load_csv(in);
    const auto pipeline = run_fpca_pipeline(dataset, grid, parse_bandwidth(bandwidth_arg));
    auto out = open_out(out_path);
    write_eigensystem_csv(*pipeline.eigsys, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QIF estimation for dense functional responses with FPCA-derived score bases"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "run a Monte-Carlo study");
    std::string scenario = "bm", sim_bandwidth = "gcv", sim_out, emit_data, format = "csv";
    std::vector<std::string> methods{"init", "ldaCS", "ldaAR", "fda-3"};
    int n = 100, m = 100, reps = 100, sim_grid = 51, threads = 0;
    std::uint64_t seed = 1;
    double sim_fve = 0.85;
    sim->add_option("--scenario", scenario, "bm,lp1,lp2,lp3,ou1,ou3,pe1,pe2,pe5,rq1,rq2,rq5");
    sim->add_option("--n", n, "subjects per replication");
    sim->add_option("--m", m, "observations per subject");
    sim->add_option("--reps", reps, "number of replications");
    sim->add_option("--methods", methods, "init,ldaCS,ldaAR,fda-<k>,fda-auto")->delimiter(',');
    sim->add_option("--seed", seed, "study seed");
    sim->add_option("--grid", sim_grid, "FPCA grid size G");
    sim->add_option("--bandwidth", sim_bandwidth, "fixed h or 'gcv'");
    sim->add_option("--fve", sim_fve, "FVE threshold for fda-auto");
    sim->add_option("--out", sim_out, "report path (default stdout)");
    sim->add_option("--emit-data", emit_data, "also write each replication's dataset CSV here");
    sim->add_option("--format", format, "csv or md")->check(CLI::IsMember({"csv", "md"}));
    sim->add_option("--threads", threads, "worker threads (0 = all cores)");

    // fit
    auto* fit = app.add_subcommand("fit", "fit a model to a long-format CSV");
    std::string data_path, fit_method_arg = "fda", kappa = "auto", fit_bandwidth = "gcv", fit_out = "fit.csv";
    int fit_grid = 51;
    double fit_fve = 0.85;
    bool dump_sandwich = false;
    fit->add_option("--data", data_path, "input CSV (subject_id,time,y,x1,...)")->required();
    fit->add_option("--method", fit_method_arg, "fda, cs, ar1 or init");
    fit->add_option("--kappa", kappa, "number of eigenfunctions, or 'auto'");
    fit->add_option("--fve", fit_fve, "FVE threshold when --kappa auto");
    fit->add_option("--bandwidth", fit_bandwidth, "fixed h or 'gcv'");
    fit->add_option("--grid", fit_grid, "FPCA grid size G");
    fit->add_option("--out", fit_out, "output CSV (JSON sidecar written alongside)");
    fit->add_flag("--dump-sandwich", dump_sandwich, "include A_hat/B_hat in the sidecar");

    // fpca
    auto* fpca_cmd = app.add_subcommand("fpca", "dump the residual-covariance eigensystem");
    std::string fpca_data, fpca_bandwidth = "gcv", fpca_out = "fpca.csv";
    int fpca_grid = 51;
    fpca_cmd->add_option("--data", fpca_data, "input CSV")->required();
    fpca_cmd->add_option("--bandwidth", fpca_bandwidth, "fixed h or 'gcv'");
    fpca_cmd->add_option("--grid", fpca_grid, "grid size G");
    fpca_cmd->add_option("--out", fpca_out, "output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed())
            return cmd_simulate(scenario, n, m, reps, methods, seed, sim_grid, sim_bandwidth, sim_out,
                                emit_data, format, sim_fve, threads);
        if (fit->parsed())
            return cmd_fit(data_path, fit_method_arg, kappa, fit_fve, fit_bandwidth, fit_grid, fit_out,
                           dump_sandwich);
        if (fpca_cmd->parsed()) return cmd_fpca(fpca_data, fpca_bandwidth, fpca_grid, fpca_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
