#include <algorithm>
#include <cmath>
#include <numeric>

#include "cardiotel/error.h"
#include "cardiotel/sim.h"

namespace cardiotel::sim {

namespace {

// Gaussian tail width as a fraction of the beat period, truncated at
// kTailCut sigmas and renormalised so the bump reaches zero continuously.
constexpr double kSigmaFrac = 0.003;
constexpr double kTailCut = 2.5;

// Window boundaries relative to the R peak, in beat periods. Each boundary
// is the midpoint between adjacent deflections (the preceding T sits at
// -0.70, the following P at +0.75).
constexpr double kWinPStart = ((kOffsetT - 1.0 - kOffsetR) + (kOffsetP - kOffsetR)) / 2.0;
constexpr double kWinPQ = ((kOffsetP - kOffsetR) + (kOffsetQ - kOffsetR)) / 2.0;
constexpr double kWinQR = (kOffsetQ - kOffsetR) / 2.0;
constexpr double kWinRS = (kOffsetS - kOffsetR) / 2.0;
constexpr double kWinST = ((kOffsetS - kOffsetR) + (kOffsetT - kOffsetR)) / 2.0;
constexpr double kWinTEnd = ((kOffsetT - kOffsetR) + (1.0 + kOffsetP - kOffsetR)) / 2.0;

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double bump(double dist_ms, double plateau_ms, double sigma_ms) {
    const double d = std::fabs(dist_ms) - plateau_ms;
    if (d <= 0.0) return 1.0;
    if (d > kTailCut * sigma_ms) return 0.0;
    const double cut = std::exp(-kTailCut * kTailCut / 2.0);
    return (std::exp(-d * d / (2.0 * sigma_ms * sigma_ms)) - cut) / (1.0 - cut);
}

int median_of(std::vector<int> v) {
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

struct PeakScan {
    int base = 0;
    int noise = 0;
    std::vector<double> r_index; // fractional sample index of each R peak
};

PeakScan scan_r_peaks(const EcgFrame& frame) {
    const auto& x = frame.samples;
    if (x.empty() || frame.interval_ms <= 0)
        fail(ErrorCode::extraction, "empty ECG frame");

    PeakScan scan;
    scan.base = median_of(x);

    std::vector<int> dev(x.size());
    std::transform(x.begin(), x.end(), dev.begin(),
                   [&](int v) { return std::abs(v - scan.base); });
    const int med_dev = median_of(dev);
    scan.noise = med_dev > 0 ? 2 * med_dev + 1 : 0;

    const int gmax = *std::max_element(x.begin(), x.end());
    if (gmax - scan.base <= 2 * scan.noise)
        fail(ErrorCode::extraction, "no detectable R peak");

    const int threshold = std::max(gmax - 2 * scan.noise, scan.base + (gmax - scan.base) / 2 + 1);
    // Samples above threshold closer than this belong to the same peak; it is
    // the shortest beat period we accept (300 bpm) halved.
    const double gap_samples = 100.0 / frame.interval_ms;

    std::size_t first = 0, last = 0;
    bool open = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < threshold) continue;
        if (open && static_cast<double>(i - last) > gap_samples) {
            scan.r_index.push_back((static_cast<double>(first) + static_cast<double>(last)) / 2.0);
            open = false;
        }
        if (!open) {
            first = i;
            open = true;
        }
        last = i;
    }
    if (open) scan.r_index.push_back((static_cast<double>(first) + static_cast<double>(last)) / 2.0);
    return scan;
}

// Sample in [lo, hi) furthest from the base line, keeping its sign.
int signed_extremum(const std::vector<int>& x, long lo, long hi, int base) {
    lo = std::max(lo, 0L);
    hi = std::min(hi, static_cast<long>(x.size()));
    int best = base;
    for (long i = lo; i < hi; ++i) {
        if (std::abs(x[static_cast<std::size_t>(i)] - base) > std::abs(best - base))
            best = x[static_cast<std::size_t>(i)];
    }
    return best;
}

} // namespace

int EcgMorphology::beat_period_ms() const {
    if (hr <= 0) fail(ErrorCode::validation, "ecg morphology needs hr > 0");
    return static_cast<int>(std::lround(60000.0 / hr));
}

void validate(const EcgMorphology& m, int interval_ms) {
    auto bad = [](const std::string& what) { fail(ErrorCode::validation, "ecg morphology: " + what); };
    for (int v : {m.ecg_base, m.p, m.q, m.r, m.s, m.t}) {
        if (v < 0 || v > kAdcMax) bad("levels must lie in 0..1023");
    }
    if (m.r <= std::max({m.p, m.q, m.s, m.t, m.ecg_base})) bad("r must exceed p, q, s, t and the base line");
    if (m.noise_amplitude < 0) bad("noise amplitude must be non-negative");
    if (interval_ms <= 0) bad("sample interval must be positive");
    if (m.beat_period_ms() < kMinSamplesPerBeat * interval_ms)
        bad("sample interval too coarse for the beat period");
}

EcgFrame synth_ecg_frame(const EcgMorphology& m, int n_samples, int interval_ms,
                         std::uint64_t seed) {
    if (n_samples <= 0) fail(ErrorCode::validation, "frame needs at least one sample");
    validate(m, interval_ms);

    const double period = m.beat_period_ms();
    const double plateau = interval_ms / 2.0 + 1e-9 * period;
    const double sigma = kSigmaFrac * period;
    const std::array<std::pair<double, int>, 5> waves = {{
        {kOffsetP * period, m.p},
        {kOffsetQ * period, m.q},
        {kOffsetR * period, m.r},
        {kOffsetS * period, m.s},
        {kOffsetT * period, m.t},
    }};

    EcgFrame frame;
    frame.interval_ms = interval_ms;
    frame.samples.reserve(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        const double phase = std::fmod(static_cast<double>(i) * interval_ms, period);
        double level = m.ecg_base;
        for (const auto& [center, amp] : waves)
            level += (amp - m.ecg_base) * bump(phase - center, plateau, sigma);
        long value = std::lround(level);
        if (m.noise_amplitude > 0) {
            const auto span = static_cast<std::uint64_t>(2 * m.noise_amplitude + 1);
            value += static_cast<long>(mix(seed ^ mix(static_cast<std::uint64_t>(i))) % span) -
                     m.noise_amplitude;
        }
        frame.samples.push_back(static_cast<int>(std::clamp(value, 0L, static_cast<long>(kAdcMax))));
    }
    return frame;
}

std::vector<double> r_peak_times_ms(const EcgFrame& frame) {
    auto scan = scan_r_peaks(frame);
    for (auto& r : scan.r_index) r *= frame.interval_ms;
    return scan.r_index;
}

EcgFeatures extract_fiducials(const EcgFrame& frame) {
    const auto scan = scan_r_peaks(frame);
    const auto& x = frame.samples;
    const auto& rs = scan.r_index;

    // Beat period in samples: median R-R spacing, or the whole frame when it
    // holds a single beat.
    double period = static_cast<double>(x.size());
    if (rs.size() >= 2) {
        std::vector<double> rr;
        for (std::size_t i = 1; i < rs.size(); ++i) rr.push_back(rs[i] - rs[i - 1]);
        std::nth_element(rr.begin(), rr.begin() + static_cast<std::ptrdiff_t>(rr.size() / 2), rr.end());
        period = rr[rr.size() / 2];
    }

    // A beat is complete when its P and T deflections lie inside the frame.
    const double reach_before = (kOffsetR - kOffsetP + 0.02) * period;
    const double reach_after = (kOffsetT - kOffsetR + 0.02) * period;
    auto at = [&](double r, double frac) { return std::lround(r + frac * period); };

    std::array<double, 5> sums{};
    int beats = 0;
    for (double r : rs) {
        if (r - reach_before < 0.0 || r + reach_after > static_cast<double>(x.size() - 1)) continue;
        sums[0] += signed_extremum(x, at(r, kWinPStart), at(r, kWinPQ), scan.base);
        sums[1] += signed_extremum(x, at(r, kWinPQ), at(r, kWinQR), scan.base);
        const long r_lo = std::max(at(r, kWinQR), 0L);
        const long r_hi = std::min(at(r, kWinRS) + 1, static_cast<long>(x.size()));
        sums[2] += *std::max_element(x.begin() + r_lo, x.begin() + r_hi);
        sums[3] += signed_extremum(x, at(r, kWinRS) + 1, at(r, kWinST) + 1, scan.base);
        sums[4] += signed_extremum(x, at(r, kWinST) + 1, at(r, kWinTEnd) + 1, scan.base);
        ++beats;
    }
    if (beats == 0) fail(ErrorCode::extraction, "no complete beat in frame");

    auto avg = [&](std::size_t k) { return static_cast<int>(std::lround(sums[k] / beats)); };
    return {scan.base, avg(0), avg(1), avg(2), avg(3), avg(4)};
}

} // namespace cardiotel::sim
