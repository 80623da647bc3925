// cardiotel: validation study, gateway, simulated device, recorder and demo.

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "cardiotel/error.h"
#include "cardiotel/gateway.h"
#include "cardiotel/net.h"
#include "cardiotel/server.h"
#include "cardiotel/sim.h"
#include "cardiotel/validation.h"
#include "cardiotel/workbook.h"
#include "demo.h"

using namespace cardiotel;

namespace {

int exit_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::pairing: return 3;
    case ErrorCode::io: return 4;
    case ErrorCode::orchestration:
    case ErrorCode::auth:
    case ErrorCode::transport: return 5;
    default: return 2;
    }
}

// Blocks the given signals in this and every later thread so one thread can
// collect them with sigwait.
sigset_t block_signals(std::initializer_list<int> signals) {
    sigset_t set;
    sigemptyset(&set);
    for (int s : signals) sigaddset(&set, s);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    return set;
}

int cmd_validate(const std::string& pairs, int tolerance, const std::string& out_dir) {
    const auto set = validation::load_paired_csv(std::filesystem::path(pairs));
    const auto report = validation::run_validation(set, tolerance);
    validation::emit_report(report, out_dir);
    validation::write_summary_csv(std::cout, report.summary, !report.differences.empty());
    return 0;
}

int cmd_serve(const std::string& config_path, const std::string& listen_override) {
    const auto signals = block_signals({SIGINT, SIGTERM, SIGHUP});
    auto cfg = gateway::load_gateway_config(config_path);
    if (!listen_override.empty()) cfg.listen = listen_override;
    gateway::Gateway gw(cfg);
    gateway::GatewayServer server(gw, net::parse_endpoint(cfg.listen));
    server.start();
    std::cout << "listening on " << server.local_endpoint().str() << std::endl;
    for (;;) {
        int sig = 0;
        sigwait(&signals, &sig);
        if (sig != SIGHUP) break;
        try {
            gw.reload_thresholds();
            std::cerr << "thresholds reloaded" << std::endl;
        } catch (const Error& e) {
            std::cerr << "threshold reload failed, keeping previous: " << e.what() << std::endl;
        }
    }
    server.stop();
    return 0;
}

struct DeviceArgs {
    std::string scenario;
    std::string endpoint = "127.0.0.1:7070";
    std::string token;
    std::int64_t ticks = 0;
    int tick_ms = 150;
    bool no_pace = false;
    std::string transcript;
};

int cmd_device_run(const DeviceArgs& a) {
    auto script = a.scenario.empty() ? sim::default_script() : sim::load_scenario(a.scenario);
    sim::DeviceOptions opt;
    opt.token = a.token;
    opt.tick_ms = a.tick_ms;
    opt.ticks = a.ticks;
    opt.pace = !a.no_pace;
    opt.on_status = [](const sim::DeviceStatus& st) {
        using K = sim::DeviceStatus::Kind;
        if (st.kind == K::TransportLost)
            std::cerr << "tick " << st.tick << ": transport lost (attempt " << st.attempt << "): " << st.detail << '\n';
        else if (st.kind == K::Reconnected)
            std::cerr << "tick " << st.tick << ": reconnected\n";
        else if (st.kind == K::Rejected)
            std::cerr << "tick " << st.tick << ": rejected: " << st.detail << '\n';
    };
    auto stream = sim::run_device(std::move(script), sim::make_tcp_transport(a.endpoint), opt);
    const auto result = stream->wait();
    if (!a.transcript.empty()) {
        std::ofstream out(a.transcript, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + a.transcript);
        for (const auto& line : result.transcript) out << line << '\n';
    }
    std::cout << "accepted " << result.accepted << " samples, " << result.transport_failures
              << " transport failures\n";
    return 0;
}

struct RecordArgs {
    std::string config;
    std::string map;
    std::string out;
    std::string endpoint = "127.0.0.1:7070";
    std::string token;
    std::string prefix = "/deviceData";
    std::int64_t duration_ms = 0;
    bool rotate = false;
};

int cmd_record(const RecordArgs& a) {
    const auto signals = block_signals({SIGINT, SIGTERM});
    const auto cfg = a.config.empty() ? recorder::WorkbookConfig{} : recorder::load_workbook_config(a.config);
    const auto channel_map = recorder::parse_channel_map(a.map, cfg.data_channels);
    recorder::WorkbookOptions wopt;
    wopt.rotate = a.rotate;
    auto workbook = recorder::Workbook::open(cfg, a.out, wopt);

    net::GatewayClient client(net::parse_endpoint(a.endpoint));
    const auto reply = client.request({{"op", "sub"}, {"prefix", a.prefix}, {"token", a.token}});
    if (!reply.value("ok", false)) {
        const auto code = reply.value("error", std::string("validation"));
        fail(code == "auth" ? ErrorCode::auth : ErrorCode::validation, "subscribe rejected: " + reply.dump());
    }
    recorder::RecordingSession session(workbook, channel_map,
                                       [&](std::chrono::milliseconds t) { return client.next_event(t); });

    if (a.duration_ms > 0) {
        timespec ts{static_cast<time_t>(a.duration_ms / 1000), static_cast<long>(a.duration_ms % 1000) * 1000000};
        sigtimedwait(&signals, nullptr, &ts);
    } else {
        int sig = 0;
        sigwait(&signals, &sig);
    }
    session.stop();
    const auto rows = workbook.export_csv(std::filesystem::path(a.out + ".csv"));
    std::cout << "recorded " << rows << " rows to " << a.out << ".csv\n";
    return 0;
}

int cmd_token_new(const std::string& device, const std::string& config_path) {
    const auto cfg = gateway::load_gateway_config(config_path);
    gateway::DeviceTokens tokens(cfg.token_store_path());
    std::cout << tokens.provision(device) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cardiotel: vital-signs telemetry gateway, simulator and validation tools"};
    app.require_subcommand(1);

    std::string pairs, out_dir;
    int tolerance = kDefaultNearTolerance;
    auto* validate = app.add_subcommand("validate", "Compare paired kit/clinic readings");
    validate->add_option("--pairs", pairs, "Paired readings CSV")->required();
    validate->add_option("--tolerance", tolerance, "Near tolerance")->capture_default_str();
    validate->add_option("--out", out_dir, "Report directory")->required();

    std::string serve_config, serve_listen;
    auto* serve = app.add_subcommand("serve", "Run the gateway");
    serve->add_option("--config", serve_config, "Gateway config JSON");
    serve->add_option("--listen", serve_listen, "Override the listen address");

    DeviceArgs dev;
    auto* device = app.add_subcommand("device", "Simulated sensor kit");
    device->require_subcommand(1);
    auto* device_run = device->add_subcommand("run", "Stream a scenario to a gateway");
    device_run->add_option("--scenario", dev.scenario, "Scenario JSON");
    device_run->add_option("--endpoint", dev.endpoint, "Gateway host:port")->capture_default_str();
    device_run->add_option("--token", dev.token, "Device token")->required();
    device_run->add_option("--ticks", dev.ticks, "Number of ticks")->required();
    device_run->add_option("--tick-ms", dev.tick_ms, "Tick interval")->capture_default_str();
    device_run->add_flag("--no-pace", dev.no_pace, "Send as fast as the gateway acks");
    device_run->add_option("--transcript", dev.transcript, "Write first-attempt payloads here");

    RecordArgs rec;
    auto* record = app.add_subcommand("record", "Record gateway paths into a workbook");
    record->add_option("--config", rec.config, "Workbook config JSON");
    record->add_option("--map", rec.map, "path=chN,...")->required();
    record->add_option("--out", rec.out, "Workbook name")->required();
    record->add_option("--endpoint", rec.endpoint, "Gateway host:port")->capture_default_str();
    record->add_option("--token", rec.token, "Session or device token")->required();
    record->add_option("--prefix", rec.prefix, "Subscription prefix")->capture_default_str();
    record->add_option("--duration-ms", rec.duration_ms, "Stop after this long (default: on SIGINT)");
    record->add_flag("--rotate", rec.rotate, "Archive full workbooks instead of evicting rows");

    tools::DemoOptions demo_opt;
    std::string demo_scenario;
    bool demo_no_pace = false;
    auto* demo = app.add_subcommand("demo", "Gateway, device, recorder and alerts end to end");
    demo->add_option("--ticks", demo_opt.ticks, "Device ticks")->capture_default_str();
    demo->add_option("--listen", demo_opt.listen, "Gateway address")->capture_default_str();
    demo->add_option("--out", demo_opt.out_dir, "Output directory")->capture_default_str();
    demo->add_option("--scenario", demo_scenario, "Scenario JSON (default: built-in desaturation)");
    demo->add_flag("--no-pace", demo_no_pace, "Do not pace ticks in real time");

    std::string token_device, token_config;
    auto* token = app.add_subcommand("token", "Device tokens");
    token->require_subcommand(1);
    auto* token_new = token->add_subcommand("new", "Provision a device token");
    token_new->add_option("--device", token_device, "Device id")->required();
    token_new->add_option("--config", token_config, "Gateway config JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*validate) return cmd_validate(pairs, tolerance, out_dir);
        if (*serve) return cmd_serve(serve_config, serve_listen);
        if (*device_run) return cmd_device_run(dev);
        if (*record) return cmd_record(rec);
        if (*demo) {
            if (!demo_scenario.empty()) demo_opt.scenario = demo_scenario;
            demo_opt.pace = !demo_no_pace;
            return tools::run_demo(demo_opt, std::cout, std::cerr);
        }
        if (*token_new) return cmd_token_new(token_device, token_config);
    } catch (const Error& e) {
        std::cerr << "cardiotel: " << to_string(e.code()) << ": " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "cardiotel: io: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "cardiotel: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
