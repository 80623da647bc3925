#include <algorithm>
#include <cmath>
#include <fstream>

#include "cardiotel/error.h"
#include "cardiotel/sim.h"

namespace cardiotel::sim {

namespace {

constexpr std::array<std::string_view, kSimMetricCount> kMetricNames = {
    "spo2", "temp", "sbp", "dbp", "hr", "ecg", "p", "q", "r", "s", "t"};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform integer in [-half, half], keyed on (seed, t, stream).
long long jitter_draw(std::uint64_t seed, std::int64_t t_ms, std::size_t stream, long long half) {
    if (half <= 0) return 0;
    const std::uint64_t key =
        splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(t_ms) * kSimMetricCount + stream));
    const auto span = static_cast<std::uint64_t>(2 * half + 1);
    return static_cast<long long>(key % span) - half;
}

double scripted_value(const ScenarioScript& script, SimMetric metric, std::int64_t t_ms) {
    double value = script[metric].mean;
    for (const auto& ev : script.events) {
        if (ev.metric != metric) continue;
        if (t_ms < ev.onset_ms || t_ms >= ev.onset_ms + ev.duration_ms) continue;
        const double elapsed = static_cast<double>(t_ms - ev.onset_ms);
        const double frac =
            ev.ramp_ms <= 0 ? 1.0 : std::min(1.0, elapsed / static_cast<double>(ev.ramp_ms));
        value += (ev.target - value) * frac;
    }
    return value;
}

VitalSample sample_from_means(const ScenarioScript& s) {
    auto whole = [&](SimMetric m) { return static_cast<int>(std::lround(s[m].mean)); };
    VitalSample v;
    v.patient_id = s.patient_id;
    v.spo2 = whole(SimMetric::SpO2);
    v.temp_f = std::round(s[SimMetric::Temp].mean * 10.0) / 10.0;
    v.sbp = whole(SimMetric::SBP);
    v.dbp = whole(SimMetric::DBP);
    v.hr = whole(SimMetric::HR);
    v.ecg = {whole(SimMetric::Ecg), whole(SimMetric::P), whole(SimMetric::Q),
             whole(SimMetric::R),   whole(SimMetric::S), whole(SimMetric::T)};
    return v;
}

} // namespace

std::string_view to_string(SimMetric metric) {
    return kMetricNames[static_cast<std::size_t>(metric)];
}

SimMetric sim_metric_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
        if (kMetricNames[i] == name) return static_cast<SimMetric>(i);
    }
    fail(ErrorCode::config, "unknown scenario metric '" + std::string(name) + "'");
}

ScenarioScript default_script() {
    ScenarioScript s;
    s[SimMetric::SpO2] = {95, 0};
    s[SimMetric::Temp] = {100, 0};
    s[SimMetric::SBP] = {120, 0};
    s[SimMetric::DBP] = {90, 0};
    s[SimMetric::HR] = {70, 0};
    s[SimMetric::Ecg] = {254, 0};
    s[SimMetric::P] = {450, 0};
    s[SimMetric::Q] = {119, 0};
    s[SimMetric::R] = {701, 0};
    s[SimMetric::S] = {88, 0};
    s[SimMetric::T] = {76, 0};
    return s;
}

void validate(const ScenarioScript& s) {
    for (std::size_t i = 0; i < kSimMetricCount; ++i) {
        if (!(s.baseline[i].jitter >= 0.0) || !std::isfinite(s.baseline[i].mean))
            fail(ErrorCode::config, "scenario: invalid baseline for " + std::string(kMetricNames[i]));
    }
    try {
        validate(sample_from_means(s));
    } catch (const Error& e) {
        fail(ErrorCode::config, std::string("scenario baseline: ") + e.what());
    }
    std::int64_t last_onset = 0;
    for (const auto& ev : s.events) {
        if (ev.onset_ms < last_onset)
            fail(ErrorCode::config, "scenario: events must be ordered by onset_ms");
        if (ev.duration_ms <= 0 || ev.ramp_ms < 0 || !std::isfinite(ev.target))
            fail(ErrorCode::config, "scenario: event needs duration_ms > 0 and ramp_ms >= 0");
        last_onset = ev.onset_ms;
    }
}

void to_json(nlohmann::json& j, const ScenarioScript& s) {
    j = nlohmann::json::object();
    j["patient_id"] = s.patient_id;
    j["seed"] = s.seed;
    auto& base = j["baseline"];
    for (std::size_t i = 0; i < kSimMetricCount; ++i) {
        base[std::string(kMetricNames[i])] = {{"mean", s.baseline[i].mean},
                                              {"jitter", s.baseline[i].jitter}};
    }
    j["events"] = nlohmann::json::array();
    for (const auto& ev : s.events) {
        j["events"].push_back({{"onset_ms", ev.onset_ms},
                               {"duration_ms", ev.duration_ms},
                               {"metric", to_string(ev.metric)},
                               {"target", ev.target},
                               {"ramp_ms", ev.ramp_ms}});
    }
}

void from_json(const nlohmann::json& j, ScenarioScript& s) {
    s = default_script();
    s.patient_id = j.value("patient_id", s.patient_id);
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("baseline")) {
        for (const auto& [name, entry] : j.at("baseline").items()) {
            auto& b = s[sim_metric_from_string(name)];
            if (entry.is_number()) {
                b.mean = entry.get<double>();
                b.jitter = 0.0;
            } else {
                b.mean = entry.at("mean").get<double>();
                b.jitter = entry.value("jitter", 0.0);
            }
        }
    }
    s.events.clear();
    for (const auto& ev : j.value("events", nlohmann::json::array())) {
        s.events.push_back({ev.at("onset_ms").get<std::int64_t>(),
                            ev.at("duration_ms").get<std::int64_t>(),
                            sim_metric_from_string(ev.at("metric").get<std::string>()),
                            ev.at("target").get<double>(), ev.value("ramp_ms", std::int64_t{0})});
    }
}

ScenarioScript load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open scenario " + path);
    ScenarioScript script;
    try {
        script = nlohmann::json::parse(in).get<ScenarioScript>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::config, "scenario " + path + ": " + e.what());
    }
    validate(script);
    return script;
}

VitalSample generate_sample(const ScenarioScript& script, std::int64_t t_ms) {
    if (t_ms < 0) fail(ErrorCode::validation, "scenario time must be non-negative");
    validate(script);

    auto whole = [&](SimMetric m) {
        const auto i = static_cast<std::size_t>(m);
        const auto half = static_cast<long long>(std::floor(script.baseline[i].jitter));
        return std::llround(scripted_value(script, m, t_ms)) +
               jitter_draw(script.seed, t_ms, i, half);
    };
    auto clamp = [](long long v, long long lo, long long hi) {
        return static_cast<int>(std::clamp(v, lo, hi));
    };

    VitalSample v;
    v.patient_id = script.patient_id;
    v.ts = t_ms;
    v.spo2 = clamp(whole(SimMetric::SpO2), 0, 100);

    const auto temp_idx = static_cast<std::size_t>(SimMetric::Temp);
    const auto temp_half = std::llround(script.baseline[temp_idx].jitter * 10.0);
    const long long tenths = std::llround(scripted_value(script, SimMetric::Temp, t_ms) * 10.0) +
                             jitter_draw(script.seed, t_ms, temp_idx, temp_half);
    v.temp_f = static_cast<double>(std::clamp(tenths, -670LL, 2570LL)) / 10.0;

    v.sbp = clamp(whole(SimMetric::SBP), 2, 400);
    v.dbp = clamp(whole(SimMetric::DBP), 0, v.sbp - 1);
    v.hr = clamp(whole(SimMetric::HR), 1, 400);

    auto& e = v.ecg;
    e.ecg_base = clamp(whole(SimMetric::Ecg), 0, kAdcMax);
    e.p = clamp(whole(SimMetric::P), 0, kAdcMax);
    e.q = clamp(whole(SimMetric::Q), 0, kAdcMax);
    e.r = clamp(whole(SimMetric::R), 0, kAdcMax);
    e.s = clamp(whole(SimMetric::S), 0, kAdcMax);
    e.t = clamp(whole(SimMetric::T), 0, kAdcMax);
    e.r = std::max({e.r, e.p, e.q, e.s, e.t});
    return v;
}

} // namespace cardiotel::sim
