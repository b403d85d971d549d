#include "lrmem/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lrmem {
namespace {

// Kernel weights below exp(-kMaxExponent) are treated as zero. At 60 the
// discarded mass is < 9e-27 per model, far below the 1e-12 denominator
// floor, so windowed sums match full sums to double precision.
constexpr double kMaxExponent = 60.0;

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

double sign_of(double v) {
    if (v > 0.0) return 1.0;
    if (v < 0.0) return -1.0;
    return 0.0;
}

} // namespace

double kernel_weight(const LocalModel& model, double z) {
    const double t = (z - model.center) / model.width;
    return std::exp(-0.5 * t * t);
}

LearningRateMemory::LearningRateMemory(int model_count, double clip_bound,
                                       double eta_init, double overlap,
                                       double rate_max)
    : clip_bound_(clip_bound),
      eta_init_(eta_init),
      overlap_(overlap),
      rate_max_(rate_max) {
    if (model_count < 2) throw std::invalid_argument("model_count must be at least 2");
    if (!(clip_bound > 0.0)) throw std::invalid_argument("clip_bound must be positive");
    if (!(eta_init > 0.0)) throw std::invalid_argument("eta_init must be positive");
    if (!(overlap > 0.0)) throw std::invalid_argument("overlap must be positive");
    if (!(rate_max > 0.0)) throw std::invalid_argument("rate_max must be positive");
    spacing_ = 2.0 * clip_bound / (model_count - 1);
    width_ = overlap * spacing_;
    rates_.assign(static_cast<std::size_t>(model_count),
                  std::min(eta_init, rate_max));
}

std::pair<int, int> LearningRateMemory::active_window(double z) const {
    const double radius = width_ * std::sqrt(2.0 * kMaxExponent);
    const int last = model_count() - 1;
    int lo = static_cast<int>(std::ceil((z - radius + clip_bound_) / spacing_));
    int hi = static_cast<int>(std::floor((z + radius + clip_bound_) / spacing_));
    lo = std::clamp(lo, 0, last);
    hi = std::clamp(hi, 0, last);
    return {lo, hi};
}

double LearningRateMemory::predict_rate(double z) const {
    const auto [lo, hi] = active_window(z);
    const double inv_width = 1.0 / width_;
    double num = 0.0;
    double den = 0.0;
    for (int m = lo; m <= hi; ++m) {
        const double t = (z - center(m)) * inv_width;
        const double w = std::exp(-0.5 * t * t);
        num += w * rates_[m];
        den += w;
    }
    return num / (den + kDenominatorFloor);
}

std::vector<double> LearningRateMemory::predict_rates(std::span<const double> grad) const {
    std::vector<double> out(grad.size());
    predict_rates(grad, out);
    return out;
}

void LearningRateMemory::predict_rates(std::span<const double> grad,
                                       std::span<double> out) const {
    if (grad.size() != out.size()) throw std::invalid_argument("output size mismatch");
    for (std::size_t d = 0; d < grad.size(); ++d) out[d] = predict_rate(grad[d]);
}

MemorySignal LearningRateMemory::pooled_signal(std::span<const double> z_prev,
                                               std::span<const double> z_curr,
                                               SignalRule rule) const {
    if (z_prev.size() != z_curr.size())
        throw std::invalid_argument("gradient size mismatch");
    MemorySignal signal(rates_.size(), 0.0);
    if (z_prev.empty()) return signal;
    const double inv_width = 1.0 / width_;
    for (std::size_t d = 0; d < z_prev.size(); ++d) {
        const double product = z_curr[d] * z_prev[d];
        const double agreement =
            rule == SignalRule::ClippedProduct ? clamp_unit(product) : sign_of(product);
        if (agreement == 0.0) continue;
        const auto [lo, hi] = active_window(z_prev[d]);
        for (int m = lo; m <= hi; ++m) {
            const double t = (z_prev[d] - center(m)) * inv_width;
            signal[m] += agreement * std::exp(-0.5 * t * t);
        }
    }
    const double inv_count = 1.0 / static_cast<double>(z_prev.size());
    for (double& s : signal) s *= inv_count;
    return signal;
}

void LearningRateMemory::apply_update(std::span<const double> delta) {
    if (delta.size() != rates_.size())
        throw std::invalid_argument("update size mismatch");
    for (std::size_t m = 0; m < rates_.size(); ++m)
        rates_[m] = std::clamp(rates_[m] + delta[m], 0.0, rate_max_);
}

MemorySnapshot snapshot(const LearningRateMemory& memory) {
    MemorySnapshot snap;
    snap.version = 1;
    snap.model_count = memory.model_count();
    snap.clip_bound = memory.clip_bound();
    snap.eta_init = memory.eta_init();
    snap.overlap = memory.overlap();
    snap.theta = memory.rates();
    return snap;
}

LearningRateMemory restore(const MemorySnapshot& snap, double rate_max) {
    if (snap.version != 1) throw std::runtime_error("unsupported snapshot version");
    if (snap.model_count < 2) throw std::runtime_error("snapshot model count too small");
    if (snap.theta.size() != static_cast<std::size_t>(snap.model_count))
        throw std::runtime_error("snapshot theta length does not match M");
    LearningRateMemory memory(snap.model_count, snap.clip_bound, snap.eta_init,
                              snap.overlap, rate_max);
    // Stored rates obey the receiver's cap but are otherwise carried over
    // bit-exactly, so a transfer does not perturb the memory.
    for (std::size_t m = 0; m < snap.theta.size(); ++m)
        memory.rates_[m] = std::clamp(snap.theta[m], 0.0, rate_max);
    return memory;
}

std::string snapshot_to_json(const MemorySnapshot& snap) {
    nlohmann::json j;
    j["version"] = snap.version;
    j["M"] = snap.model_count;
    j["clip_bound"] = snap.clip_bound;
    j["eta_init"] = snap.eta_init;
    j["overlap"] = snap.overlap;
    j["theta"] = snap.theta;
    return j.dump(2) + "\n";
}

MemorySnapshot snapshot_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("snapshot parse error: ") + e.what());
    }
    for (const char* field : {"version", "M", "clip_bound", "eta_init", "overlap", "theta"}) {
        if (!j.contains(field))
            throw std::runtime_error(std::string("snapshot missing field: ") + field);
    }
    MemorySnapshot snap;
    snap.version = j.at("version").get<int>();
    snap.model_count = j.at("M").get<int>();
    snap.clip_bound = j.at("clip_bound").get<double>();
    snap.eta_init = j.at("eta_init").get<double>();
    snap.overlap = j.at("overlap").get<double>();
    snap.theta = j.at("theta").get<std::vector<double>>();
    if (snap.version != 1) throw std::runtime_error("unsupported snapshot version");
    if (snap.theta.size() != static_cast<std::size_t>(snap.model_count))
        throw std::runtime_error("snapshot theta length does not match M");
    return snap;
}

void save_snapshot(const LearningRateMemory& memory, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << snapshot_to_json(snapshot(memory));
    if (!out) throw std::runtime_error("write failed: " + path);
}

LearningRateMemory load_snapshot(const std::string& path, double rate_max) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return restore(snapshot_from_json(buffer.str()), rate_max);
}

} // namespace lrmem
