#include "demo.h"

#include <fstream>
#include <thread>

#include "cardiotel/error.h"
#include "cardiotel/gateway.h"
#include "cardiotel/net.h"
#include "cardiotel/server.h"
#include "cardiotel/sim.h"
#include "cardiotel/workbook.h"

namespace cardiotel::tools {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kDevice = "dev1";

sim::ScenarioScript desaturation_script() {
    auto s = sim::default_script();
    s.patient_id = std::string(kDevice);
    s.seed = 20240601;
    s[sim::SimMetric::SpO2] = {97, 1};
    s[sim::SimMetric::Temp] = {98.6, 0.2};
    s[sim::SimMetric::SBP] = {120, 3};
    s[sim::SimMetric::DBP] = {80, 2};
    s[sim::SimMetric::HR] = {75, 3};
    for (auto m : {sim::SimMetric::Ecg, sim::SimMetric::P, sim::SimMetric::Q, sim::SimMetric::R,
                   sim::SimMetric::S, sim::SimMetric::T})
        s[m].jitter = 2;
    s.events.push_back({3000, 600000, sim::SimMetric::SpO2, 88, 3000});
    return s;
}

// Ten recorded channels: the five scalar vitals without temperature, then
// the ECG feature vector.
const std::vector<std::string_view> kRecordedLeaves = {"spo2", "hr", "sbp", "dbp", "ecg_base",
                                                       "p",    "q",  "r",   "s",   "t"};

struct StageFailure {
    std::string stage;
    std::string message;
};

template <typename F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw StageFailure{name, e.what()};
    }
}

} // namespace

int run_demo(const DemoOptions& opt, std::ostream& out, std::ostream& err) {
    try {
        if (opt.ticks < 0) throw StageFailure{"config", "--ticks must be non-negative"};
        const auto script = stage("config", [&] {
            return opt.scenario ? sim::load_scenario(opt.scenario->string()) : desaturation_script();
        });

        // The demo owns these paths and starts from a clean slate each run.
        const fs::path data_dir = opt.out_dir / "gateway";
        const fs::path wb_name = opt.out_dir / "workbook";
        stage("config", [&] {
            fs::create_directories(opt.out_dir);
            fs::remove_all(data_dir);
            for (const char* suffix : {".manifest.json", ".journal.csv", ".csv"})
                fs::remove(fs::path(wb_name.string() + suffix));
            return 0;
        });

        gateway::GatewayConfig cfg;
        cfg.listen = opt.listen;
        cfg.data_dir = data_dir;
        cfg.password_hash = "min";
        auto gw = stage("gateway", [&] { return std::make_unique<gateway::Gateway>(cfg); });
        auto server = stage("gateway", [&] {
            auto s = std::make_unique<gateway::GatewayServer>(*gw, net::parse_endpoint(cfg.listen));
            s->start();
            return s;
        });
        const auto endpoint = server->local_endpoint();
        out << "[gateway] listening on " << endpoint.str() << '\n';

        struct Credentials {
            std::string device_token;
            std::string session;
        };
        const auto creds = stage("provision", [&] {
            Credentials c;
            c.device_token = gw->provision_device(std::string(kDevice));
            gw->register_user("Demo Clinician", "demo@example.com", "0000", "demo-password", "demo-password");
            c.session = gw->login("demo@example.com", "demo-password").token;
            return c;
        });
        out << "[provision] device " << kDevice << " token issued\n";

        recorder::WorkbookConfig wb_cfg;
        wb_cfg.data_interval_ms = opt.tick_ms;
        auto workbook = stage("recorder", [&] { return recorder::Workbook::open(wb_cfg, wb_name); });
        auto client = stage("recorder", [&] {
            auto c = std::make_unique<net::GatewayClient>(endpoint);
            const auto reply =
                c->request({{"op", "sub"}, {"prefix", "/deviceData/" + std::string(kDevice)}, {"token", creds.session}});
            if (!reply.value("ok", false)) fail(ErrorCode::orchestration, "subscribe rejected: " + reply.dump());
            return c;
        });
        std::map<std::string, int> channel_map;
        for (std::size_t i = 0; i < kRecordedLeaves.size(); ++i)
            channel_map[gateway::vitals_path(std::string(kDevice), kRecordedLeaves[i])] = static_cast<int>(i) + 1;
        std::atomic<std::int64_t> recorded_seq{0};
        auto session = stage("recorder", [&] {
            return std::make_unique<recorder::RecordingSession>(
                workbook, channel_map, [&](std::chrono::milliseconds timeout) {
                    auto ev = client->next_event(timeout);
                    if (ev && ev->contains("seq") && (*ev)["seq"].is_number_integer())
                        recorded_seq = (*ev)["seq"].get<std::int64_t>();
                    return ev;
                });
        });
        out << "[recorder] " << kRecordedLeaves.size() << " channels, interval " << wb_cfg.data_interval_ms
            << " ms, capacity " << wb_cfg.data_rows << " rows\n";

        const auto result = stage("device", [&] {
            sim::DeviceOptions dopt;
            dopt.token = creds.device_token;
            dopt.tick_ms = opt.tick_ms;
            dopt.ticks = opt.ticks;
            dopt.pace = opt.pace;
            dopt.on_status = [&](const sim::DeviceStatus& st) {
                if (st.kind == sim::DeviceStatus::Kind::TransportLost)
                    err << "[device] transport lost at tick " << st.tick << ": " << st.detail << '\n';
            };
            auto stream = sim::run_device(script, sim::make_tcp_transport(endpoint.str()), dopt);
            return stream->wait();
        });
        out << "[device] " << result.accepted << " samples accepted\n";

        stage("recorder", [&] {
            // Every acked write is already queued for the subscriber; wait
            // until the recorder has seen the last one.
            const auto target = gw->last_seq();
            const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
            while (recorded_seq < target && std::chrono::steady_clock::now() < deadline)
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            if (recorded_seq < target) fail(ErrorCode::orchestration, "recorder fell behind the gateway");
            session->stop();
            return workbook.export_csv(fs::path(wb_name.string() + ".csv"));
        });
        out << "[recorder] " << workbook.size() << " rows written to " << wb_name.string() << ".csv\n";

        stage("alerts", [&] {
            std::ofstream file(opt.out_dir / "alerts.csv", std::ios::binary | std::ios::trunc);
            if (!file) fail(ErrorCode::io, "cannot write alerts.csv");
            gw->export_alerts_csv(file);
            out << "[alerts]\n";
            gw->export_alerts_csv(out);
            return 0;
        });

        session.reset();
        client.reset();
        server->stop();
        return 0;
    } catch (const StageFailure& f) {
        err << "demo: stage " << f.stage << " failed: " << f.message << '\n';
        return 5;
    }
}

} // namespace cardiotel::tools
