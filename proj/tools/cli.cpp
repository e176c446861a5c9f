#include "cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <pthread.h>

#include "qdawg/compiler.hpp"
#include "qdawg/diagram.hpp"
#include "qdawg/run_store.hpp"
#include "qdawg/sequences.hpp"
#include "qdawg/service.hpp"

namespace qdawg::cli {

namespace fs = std::filesystem;

namespace {

/// Raised for problems the operator can fix: bad arguments, unreadable or invalid inputs.
struct Invalid {
    std::string message;
    std::string report;
};

MeasurementKind kind_arg(const std::string& name) {
    if (auto k = parse_measurement_kind(name)) return *k;
    std::string known;
    for (auto k : kAllMeasurementKinds) known += (known.empty() ? "" : ", ") + std::string(to_string(k));
    throw Invalid{"unknown measurement kind '" + name + "' (expected one of: " + known + ")", {}};
}

std::string read_input(const fs::path& path) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw Invalid{"cannot read '" + path.string() + "'", {}};
    return read_file(path);
}

/// A config argument is a file path; `demo_<kind>` names the built-in demo
/// config when no such file exists.
ExperimentConfig load_config(MeasurementKind kind, const std::string& arg) {
    std::error_code ec;
    if (!fs::exists(arg, ec) && arg == "demo_" + std::string(to_string(kind))) return demo_config(kind);
    try {
        return ExperimentConfig::parse(kind, read_input(arg));
    } catch (const ParseError& e) {
        throw Invalid{arg + ": " + e.what(), {}};
    }
}

NvEnsembleParams load_physics(const std::string& arg) {
    std::error_code ec;
    if (arg.empty() || (arg == "demo" && !fs::exists(arg, ec))) return demo_physics();
    try {
        auto p = NvEnsembleParams::parse(read_input(arg));
        p.validate();
        return p;
    } catch (const Error& e) {
        throw Invalid{arg + ": " + e.what(), {}};
    }
}

/// Full pre-flight: schema validation, sequence construction and timing legality.
void check_config(MeasurementKind kind, const ExperimentConfig& config) {
    try {
        (void)compile(build(kind, config));
    } catch (const ConfigError& e) {
        throw Invalid{e.report().ok ? e.what() : "invalid config", e.report().to_text()};
    } catch (const Error& e) {
        throw Invalid{e.what(), {}};
    }
}

void write_output(const std::string& path, const std::string& bytes, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << bytes;
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file_atomic(p, bytes);
}

struct RunArgs {
    std::string kind, config, physics = "demo", out;
    std::uint64_t seed = 0;
};

int cmd_run(const RunArgs& a, std::ostream& out) {
    const auto kind = kind_arg(a.kind);
    const auto config = load_config(kind, a.config);
    check_config(kind, config);
    const auto physics = load_physics(a.physics);

    DataStore store(fs::absolute(a.out.empty() ? default_data_dir() : fs::path(a.out)));
    UlidGenerator ids;
    RunManifest m;
    m.run_id = ids.next();
    while (store.manifest(m.run_id)) m.run_id = ids.next();
    m.kind = kind;
    m.config = config;
    m.physics = physics.to_kv();
    m.seed = a.seed;
    m.output_path = store.result_path(m.run_id).string();
    store.create(m);

    m.advance(RunStatus::Running);
    m.started = utc_timestamp();
    store.save_manifest(m);
    try {
        const auto result = run(kind, config, physics, a.seed);
        store.save_result(m.run_id, result);
        m.advance(RunStatus::Done);
        m.finished = utc_timestamp();
        store.save_manifest(m);
        out << "run_id = " << m.run_id << "\nstatus = done\nresult = " << m.output_path << "\n";
        if (result.fit) out << "[fit]\n" << fit_to_text(*result.fit);
        return kExitOk;
    } catch (...) {
        m.advance(RunStatus::Failed);
        m.finished = utc_timestamp();
        try {
            throw;
        } catch (const std::exception& e) {
            m.error = e.what();
        } catch (...) {
            m.error = "unknown error";
        }
        store.save_manifest(m);
        throw;
    }
}

int cmd_diagram(const std::string& kind_name, const std::string& config_arg, const std::string& labels,
                const std::string& out_path, std::ostream& out) {
    const auto kind = kind_arg(kind_name);
    const auto mode = parse_label_mode(labels);
    if (!mode) throw Invalid{"--labels must be names or values", {}};
    const auto config = load_config(kind, config_arg);
    check_config(kind, config);
    write_output(out_path, serialize_diagram(render_diagram(build(kind, config), *mode)), out);
    return kExitOk;
}

int cmd_fit(const std::string& path, const std::string& model_name, const std::string& out_path, std::ostream& out) {
    MeasurementResult r;
    try {
        r = MeasurementResult::parse(read_input(path));
    } catch (const ParseError& e) {
        throw Invalid{path + ": " + e.what(), {}};
    }
    std::optional<FitModel> model;
    if (model_name != "auto") {
        model = parse_fit_model(model_name);
        if (!model) throw Invalid{"unknown fit model '" + model_name + "'", {}};
    }
    // The kind's own analysis adds derived quantities (pi_time, t2, ...); use it
    // whenever it applies the requested model.
    auto analyzed = r;
    analyze(analyzed);
    std::optional<FitResult> fit;
    if (analyzed.fit && (!model || analyzed.fit->model == *model)) {
        fit = analyzed.fit;
    } else if (model) {
        const auto& x = r.axis.values;
        switch (*model) {
            case FitModel::LorentzianDips: fit = fit_odmr(x, r.signal); break;
            case FitModel::DampedCosine: fit = fit_rabi(x, r.signal); break;
            case FitModel::DecayingExponential: fit = fit_decay(x, r.signal, false); break;
            case FitModel::StretchedExponential: fit = fit_decay(x, r.signal, true); break;
        }
    } else {
        throw Invalid{"no default fit model for " + std::string(to_string(r.kind)) + " results; pass --model", {}};
    }
    write_output(out_path, fit_to_text(*fit), out);
    return fit->converged ? kExitOk : kExitInternal;
}

std::pair<std::string, int> split_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw Invalid{"--bind expects addr:port", {}};
    int port = -1;
    try {
        std::size_t used = 0;
        port = std::stoi(bind.substr(colon + 1), &used);
        if (used != bind.size() - colon - 1) port = -1;
    } catch (const std::exception&) {
    }
    if (port < 0 || port > 65535) throw Invalid{"invalid port in --bind '" + bind + "'", {}};
    return {bind.substr(0, colon), port};
}

int cmd_serve(const std::string& data, const std::string& bind, std::ostream& out) {
    const auto [host, port] = split_bind(bind);
    // Block the stop signals before any thread starts so only the waiter below sees them.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    ServiceOptions opt;
    if (!data.empty()) opt.data_dir = data;
    Service svc(opt);
    for (const auto& id : svc.recovered()) out << "recovered: " << id << " marked failed\n";
    int bound = 0;
    try {
        bound = svc.listen(host, port);
    } catch (const std::runtime_error& e) {
        throw Invalid{e.what(), {}};
    }
    out << "listening on " << host << ":" << bound << "\n" << std::flush;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        svc.stop();
    });
    svc.wait();
    // Wake the waiter if the service stopped for another reason.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    pthread_sigmask(SIG_UNBLOCK, &stop_signals, nullptr);
    return kExitOk;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hardware-free NV-center measurement stack", "qdawg"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "Execute a measurement and persist result + manifest");
    run_cmd->add_option("kind", run_args.kind, "Measurement kind")->required();
    run_cmd->add_option("--config", run_args.config, "Config file, or demo_<kind>")->required();
    run_cmd->add_option("--physics", run_args.physics, "Physics file, or demo")->capture_default_str();
    run_cmd->add_option("--seed", run_args.seed, "Random seed")->capture_default_str();
    run_cmd->add_option("--out", run_args.out, "Data directory (default $QDAWG_DATA_DIR or ./qdawg-data)");

    std::string kind, config, labels = "names", out_path;
    auto* diagram_cmd = app.add_subcommand("diagram", "Render the pulse-sequence diagram as SVG");
    diagram_cmd->add_option("kind", kind, "Measurement kind")->required();
    diagram_cmd->add_option("--config", config, "Config file, or demo_<kind>")->required();
    diagram_cmd->add_option("--labels", labels, "names | values")->capture_default_str();
    diagram_cmd->add_option("--out", out_path, "Output path (default stdout)");

    std::string data, bind = "127.0.0.1:8080";
    auto* serve_cmd = app.add_subcommand("serve", "Run the control service");
    serve_cmd->add_option("--data", data, "Data directory (default $QDAWG_DATA_DIR or ./qdawg-data)");
    serve_cmd->add_option("--bind", bind, "addr:port; port 0 picks a free port")->capture_default_str();

    std::string result_path, model = "auto";
    auto* fit_cmd = app.add_subcommand("fit", "Fit a persisted result and print the fit");
    fit_cmd->add_option("result", result_path, "Result file")->required();
    fit_cmd->add_option("--model", model,
                        "auto | lorentzian-dips | damped-cosine | decaying-exponential | stretched-exponential")
        ->capture_default_str();
    fit_cmd->add_option("--out", out_path, "Output path (default stdout)");

    auto* schema_cmd = app.add_subcommand("schema", "Print the config schema of a kind");
    schema_cmd->add_option("kind", kind, "Measurement kind")->required();

    auto* demo_cmd = app.add_subcommand("demo-config", "Print the demo config of a kind");
    demo_cmd->add_option("kind", kind, "Measurement kind")->required();

    app.add_subcommand("demo-physics", "Print the demo physics parameters");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "qdawg: " << e.what() << "\n";
        if (!app.get_subcommands().empty()) err << app.get_subcommands().front()->help();
        return kExitInvalid;
    }

    try {
        if (*run_cmd) return cmd_run(run_args, out);
        if (*diagram_cmd) return cmd_diagram(kind, config, labels, out_path, out);
        if (*serve_cmd) return cmd_serve(data, bind, out);
        if (*fit_cmd) return cmd_fit(result_path, model, out_path, out);
        if (*schema_cmd) {
            out << schema_table(schema(kind_arg(kind)));
            return kExitOk;
        }
        if (*demo_cmd) {
            out << demo_config(kind_arg(kind)).to_text();
            return kExitOk;
        }
        out << demo_physics().to_kv().to_text();
        return kExitOk;
    } catch (const Invalid& e) {
        err << "qdawg: " << e.message << "\n" << e.report;
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "qdawg: internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace qdawg::cli
