#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrmem/data.hpp"
#include "lrmem/models.hpp"
#include "lrmem/optim.hpp"

namespace lrmem {

enum class OptimizerVariant { Gd, MetaGd, MetaGdMemAdam, Adam, MetaAdam };

std::string to_string(OptimizerVariant variant);
OptimizerVariant parse_variant(const std::string& name);

struct OptimizerSettings {
    OptimizerVariant variant = OptimizerVariant::MetaGd;
    double eta_init = 0.001;
    double meta_rate = 0.005;
    int model_count = 100;
    double clip_bound = 10.0;
    double overlap = 1.0;
    double rate_max = 1.0;
    SignalRule signal_rule = SignalRule::ClippedProduct;
    bool memory_update_enabled = true;
};

enum class TaskKind { Rosenbrock, Classification, Dynamics };

// One stage of a sequential experiment. The reload flags say what carries
// over from the previous task; the first task of a plan must be fresh.
struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::Rosenbrock;
    int steps = 100; // optimization steps; dynamics tasks derive this from the stream
    bool reload_memory = false;
    bool reload_network = false;
    // Rosenbrock start point.
    double start_x = -1.2;
    double start_y = 1.0;
    // Classification: which two digit classes form the task.
    int class_a = 0;
    int class_b = 1;
    // Dynamics: payload variant and stream shape.
    PayloadVariant variant = PayloadVariant::None;
    int batch_size = 10;
    int n_samples = 3000;
};

// Where classification data comes from. With empty paths the harness builds
// the synthetic digit stand-in, so everything runs offline.
struct ClassificationDataConfig {
    std::string images_path;
    std::string labels_path;
    int per_class_cap = 120; // rows kept per class in each binary task
    int synth_classes = 5;
    int synth_side = 8;
    int synth_per_class = 120;
    std::uint64_t dataset_seed = 7;
};

struct ExperimentPlan {
    std::string name = "experiment";
    std::vector<TaskSpec> tasks;
    OptimizerSettings optimizer;
    std::vector<std::uint64_t> seeds;
    MlpSpec network{0, {100, 50, 10}, 0, 0.0}; // in/out dims resolved per task kind
    ClassificationDataConfig data;
    DynamicsGeneratorConfig generator;
    double loss_threshold = 0.1;
    int prefix_batches = 50;
    int iteration_cap = 100;
    bool parallel = false;
};

struct CurvePoint {
    int step = 0;    // 1-based
    double loss = 0; // evaluated before the parameter step
    std::vector<double> group_mean_rates;
    double step_ms = 0;
};

struct ConvergenceCurve {
    std::vector<std::string> group_names;
    std::vector<CurvePoint> points;
    bool diverged = false;
    int diverged_at_step = 0;
};

struct TrialResult {
    std::uint64_t seed = 0;
    int task_index = 0;
    std::string task;
    ConvergenceCurve curve;
    std::map<std::string, MemorySnapshot> final_memories; // empty for memoryless variants
    double final_loss = 0;
};

struct ExperimentReport {
    ExperimentPlan plan; // echoed with resolved dimensions
    std::vector<TrialResult> trials;
    std::string version = "1";
};

// Adapts every optimizer variant to one step interface so the run loop does
// not branch on variant.
class TrialOptimizer {
public:
    explicit TrialOptimizer(const OptimizerSettings& settings);

    bool has_memory() const;
    void register_groups(const ParamGroupList& params);
    void load_memories(const std::map<std::string, MemorySnapshot>& snapshots);
    std::map<std::string, MemorySnapshot> snapshots() const;

    void step(ParamGroupList& params, const ParamGroupList& grads);
    std::vector<double> last_mean_rates(const ParamGroupList& params) const;

private:
    OptimizerSettings settings_;
    std::optional<MetaOptimizer> meta_;
    std::map<std::string, AdamState> adam_;
};

// Runs every (seed, task) trial of the plan. Deterministic given (plan,
// seed) apart from the recorded wall-clock durations; divergence is recorded
// on the curve, not thrown.
ExperimentReport run_experiment(const ExperimentPlan& plan);

// Smallest 1-based step whose loss is below tau; nullopt when none is.
std::optional<int> iterations_to_threshold(const ConvergenceCurve& curve, double tau);

// Mean of the first min(n, len) losses.
double mean_loss_prefix(const ConvergenceCurve& curve, int n);

struct TaskAggregate {
    int task_index = 0;
    std::string task;
    std::vector<double> per_seed_prefix_loss;              // plan seed order
    std::vector<std::optional<int>> per_seed_iterations;
    double mean_prefix_loss = 0;
    double median_iterations_capped = 0;                   // "never" counted as the cap
    std::optional<double> median_iterations_converged;     // "never" excluded
    int never_count = 0;
    int diverged_count = 0;
};

std::vector<TaskAggregate> aggregate(const ExperimentReport& report);

// Plan echo used in the JSON summary; stable field order.
std::string plan_echo_json(const ExperimentPlan& plan);

// One CSV per (seed, task) curve, one JSON snapshot per trained memory, and
// summary.json holding the plan echo plus metrics. Rewrites are
// byte-identical except for the step_ms CSV column.
void write_report(const ExperimentReport& report, const std::string& directory);

// Per-step wall-time statistics of the dynamics-style benchmark.
struct TimingStats {
    double median_ms = 0;
    double p95_ms = 0;
    double mean_ms = 0;
    int steps = 0;
};

struct TimingReport {
    TimingStats meta_base;          // M=200 memory on the [100,50,10] network
    TimingStats meta_double_models; // M doubled
    TimingStats meta_double_params; // parameter count roughly doubled
    TimingStats gd_base;
    int base_param_count = 0;
    int double_param_count = 0;
};

TimingReport timing_probe(int steps = 150, std::uint64_t seed = 1);

// Protocol plan builders shared by the CLI and the test suite.
ExperimentPlan make_rosenbrock_plan(const OptimizerSettings& optimizer, int runs,
                                    int steps, const std::vector<std::uint64_t>& seeds,
                                    bool transfer, double start_x = -1.2,
                                    double start_y = 1.0);
ExperimentPlan make_classification_plan(const OptimizerSettings& optimizer,
                                        bool transfer,
                                        const std::vector<std::uint64_t>& seeds,
                                        const ClassificationDataConfig& data,
                                        int iteration_cap = 100);
ExperimentPlan make_dynamics_plan(const OptimizerSettings& optimizer, bool reload,
                                  const std::vector<std::uint64_t>& seeds,
                                  int n_samples = 3000, int batch_size = 10);

} // namespace lrmem
