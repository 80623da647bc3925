#pragma once

// Deterministic emulator of the three-sensor kit: scripted vitals, synthetic
// ECG frames, fiducial extraction and a paced device loop that streams
// ingest batches to a gateway.

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cardiotel/model.h"

namespace cardiotel::sim {

enum class SimMetric { SpO2, Temp, SBP, DBP, HR, Ecg, P, Q, R, S, T };

inline constexpr std::size_t kSimMetricCount = 11;

std::string_view to_string(SimMetric metric);
SimMetric sim_metric_from_string(std::string_view name);

struct MetricBaseline {
    double mean = 0.0;
    // Uniform jitter half-width. Integer metrics draw whole units; temperature
    // draws on the tenths grid.
    double jitter = 0.0;
};

struct ScenarioEvent {
    std::int64_t onset_ms = 0;
    std::int64_t duration_ms = 0;
    SimMetric metric = SimMetric::SpO2;
    double target = 0.0;
    std::int64_t ramp_ms = 0;
};

struct ScenarioScript {
    std::string patient_id = "dev1";
    std::uint64_t seed = 0;
    std::array<MetricBaseline, kSimMetricCount> baseline{};
    std::vector<ScenarioEvent> events;

    MetricBaseline& operator[](SimMetric m) { return baseline[static_cast<std::size_t>(m)]; }
    const MetricBaseline& operator[](SimMetric m) const {
        return baseline[static_cast<std::size_t>(m)];
    }
};

// Baseline taken from the first kit reading of the clinical comparison:
// spo2 95, 100 F, 120/90, hr 70, ecg 254 / 450 119 701 88 76, no jitter.
ScenarioScript default_script();

// Throws Error{config} on unordered events, negative jitter or a baseline
// that would not form a valid VitalSample.
void validate(const ScenarioScript& script);

void to_json(nlohmann::json& j, const ScenarioScript& s);
void from_json(const nlohmann::json& j, ScenarioScript& s);
ScenarioScript load_scenario(const std::string& path);

// Sample at scenario time t_ms; a pure function of (script, t_ms). Output is
// clamped into the VitalSample domain.
VitalSample generate_sample(const ScenarioScript& script, std::int64_t t_ms);

struct EcgMorphology {
    int ecg_base = 0;
    int p = 0;
    int q = 0;
    int r = 0;
    int s = 0;
    int t = 0;
    int hr = 60;
    int noise_amplitude = 0;

    int beat_period_ms() const;
    EcgFeatures fiducials() const { return {ecg_base, p, q, r, s, t}; }
};

inline constexpr int kAdcMax = 1023;

struct EcgFrame {
    int interval_ms = 0;
    std::vector<int> samples;
};

// Fractional position of each deflection within a beat.
inline constexpr double kOffsetP = 0.15;
inline constexpr double kOffsetQ = 0.36;
inline constexpr double kOffsetR = 0.40;
inline constexpr double kOffsetS = 0.44;
inline constexpr double kOffsetT = 0.70;

// Beats must span at least this many samples so neighbouring deflections
// stay separable.
inline constexpr int kMinSamplesPerBeat = 100;

void validate(const EcgMorphology& m, int interval_ms);

EcgFrame synth_ecg_frame(const EcgMorphology& m, int n_samples, int interval_ms,
                         std::uint64_t seed);

// Times (ms from frame start) of detected R peaks.
std::vector<double> r_peak_times_ms(const EcgFrame& frame);

// Per-beat extrema averaged over complete beats; ecg_base is the median
// sample. Throws Error{extraction} when no R peak or complete beat is found.
EcgFeatures extract_fiducials(const EcgFrame& frame);

// --- device loop ---------------------------------------------------------

// One request/response exchange with a gateway. Implementations throw
// Error{transport} on connection loss.
class DeviceTransport {
public:
    virtual ~DeviceTransport() = default;
    virtual void connect() = 0;
    virtual std::string exchange(const std::string& line) = 0;
    virtual void disconnect() {}
};

// Newline-delimited JSON over TCP.
std::unique_ptr<DeviceTransport> make_tcp_transport(const std::string& endpoint);

// Wire payload for the tick at scenario time t_ms.
std::string ingest_payload(const ScenarioScript& script, const std::string& token,
                           std::int64_t t_ms);

struct DeviceStatus {
    enum class Kind { Accepted, TransportLost, Reconnected, Rejected };
    Kind kind;
    std::int64_t tick = 0;
    int attempt = 0;
    std::string detail;
};

struct DeviceOptions {
    std::string token;
    int tick_ms = 150;
    std::int64_t ticks = 0;
    // Real-time pacing; tests disable it.
    bool pace = true;
    std::chrono::milliseconds backoff_initial{20};
    std::chrono::milliseconds backoff_max{2000};
    // Consecutive transport failures tolerated before giving up.
    int max_attempts = 30;
    std::function<void(const DeviceStatus&)> on_status;
};

struct DeviceRunResult {
    std::int64_t accepted = 0;
    std::int64_t transport_failures = 0;
    // First-attempt payload of every tick, in order.
    std::vector<std::string> transcript;
};

// Handle to a running device. The worker thread is joined on destruction.
class DeviceStream {
public:
    DeviceStream(ScenarioScript script, std::unique_ptr<DeviceTransport> transport,
                 DeviceOptions options);
    ~DeviceStream();
    DeviceStream(const DeviceStream&) = delete;
    DeviceStream& operator=(const DeviceStream&) = delete;

    void stop();
    // Blocks until the run finishes; rethrows a terminal error.
    DeviceRunResult wait();

private:
    void run();

    ScenarioScript script_;
    std::unique_ptr<DeviceTransport> transport_;
    DeviceOptions options_;
    std::atomic<bool> stop_{false};
    std::mutex mu_;
    std::condition_variable cv_;
    DeviceRunResult result_;
    std::exception_ptr error_;
    std::thread worker_;
};

std::unique_ptr<DeviceStream> run_device(ScenarioScript script,
                                         std::unique_ptr<DeviceTransport> transport,
                                         DeviceOptions options);

} // namespace cardiotel::sim
