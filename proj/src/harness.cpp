#include "lrmem/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "lrmem/rng.hpp"

namespace lrmem {
namespace {

constexpr std::uint64_t kNetStream = 0x100;
constexpr std::uint64_t kDropoutStream = 0x200;
constexpr std::uint64_t kDataStream = 0x300;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool all_finite(const ParamGroupList& groups) {
    for (const auto& g : groups)
        for (double v : g.values)
            if (!std::isfinite(v)) return false;
    return true;
}

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Rosenbrock: return "rosenbrock";
        case TaskKind::Classification: return "classification";
        case TaskKind::Dynamics: return "dynamics";
    }
    return "rosenbrock";
}

MetaOptimizerConfig to_meta_config(const OptimizerSettings& s) {
    MetaOptimizerConfig c;
    c.base = s.variant == OptimizerVariant::MetaAdam ? BaseTransform::Adam
                                                     : BaseTransform::Identity;
    c.updater = s.variant == OptimizerVariant::MetaGdMemAdam
                    ? MemoryUpdaterKind::AdamOnMemory
                    : MemoryUpdaterKind::PlainGd;
    c.eta_init = s.eta_init;
    c.meta_rate = s.meta_rate;
    c.model_count = s.model_count;
    c.clip_bound = s.clip_bound;
    c.overlap = s.overlap;
    c.rate_max = s.rate_max;
    c.memory_update_enabled = s.memory_update_enabled;
    c.signal_rule = s.signal_rule;
    return c;
}

void validate_plan(const ExperimentPlan& plan) {
    if (plan.tasks.empty()) throw std::invalid_argument("plan has no tasks");
    if (plan.seeds.empty()) throw std::invalid_argument("plan has no seeds");
    if (plan.tasks.front().reload_memory || plan.tasks.front().reload_network)
        throw std::invalid_argument("task 1 must start fresh");
    std::set<std::string> names;
    for (const auto& t : plan.tasks) {
        if (t.kind != plan.tasks.front().kind)
            throw std::invalid_argument("plan mixes task kinds");
        if (t.name.empty()) throw std::invalid_argument("task needs a name");
        if (!names.insert(t.name).second)
            throw std::invalid_argument("duplicate task name: " + t.name);
        if (t.kind == TaskKind::Dynamics) {
            if (t.n_samples <= 0) throw std::invalid_argument("n_samples must be positive");
            if (t.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
        } else if (t.steps <= 0) {
            throw std::invalid_argument("steps must be positive");
        }
        if (t.kind == TaskKind::Classification && t.class_a == t.class_b)
            throw std::invalid_argument("classification task needs two distinct classes");
    }
    if (!(plan.loss_threshold > 0.0))
        throw std::invalid_argument("loss_threshold must be positive");
    if (plan.prefix_batches < 1) throw std::invalid_argument("prefix_batches must be positive");
    if (plan.iteration_cap < 1) throw std::invalid_argument("iteration_cap must be positive");
    const auto& o = plan.optimizer;
    if (!(o.eta_init > 0.0)) throw std::invalid_argument("eta_init must be positive");
    if (!(o.meta_rate > 0.0)) throw std::invalid_argument("meta_rate must be positive");
    if (o.model_count < 2) throw std::invalid_argument("model_count must be at least 2");
    if (!(o.clip_bound > 0.0)) throw std::invalid_argument("clip_bound must be positive");
    if (!(o.overlap > 0.0)) throw std::invalid_argument("overlap must be positive");
    if (!(o.rate_max > 0.0)) throw std::invalid_argument("rate_max must be positive");
}

LabeledDataset cap_per_class(const LabeledDataset& dataset, int cap) {
    if (cap <= 0) return dataset;
    std::map<int, int> counts;
    std::vector<int> rows;
    for (std::size_t i = 0; i < dataset.labels.size(); ++i)
        if (counts[dataset.labels[i]]++ < cap) rows.push_back(static_cast<int>(i));
    LabeledDataset out;
    out.num_classes = dataset.num_classes;
    out.features = Matrix(static_cast<int>(rows.size()), dataset.features.cols);
    out.labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int c = 0; c < dataset.features.cols; ++c)
            out.features(static_cast<int>(r), c) = dataset.features(rows[r], c);
        out.labels[r] = dataset.labels[static_cast<std::size_t>(rows[r])];
    }
    return out;
}

struct StepTimer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t0)
            .count();
    }
};

// State threaded through one seed's task chain.
struct ChainState {
    std::map<std::string, MemorySnapshot> memories;
    std::optional<ParamGroupList> params;
    std::optional<CoordinateStats> dynamics_stats;
};

TrialResult run_rosenbrock_task(const ExperimentPlan& plan, const TaskSpec& task,
                                int task_index, std::uint64_t seed, ChainState& chain) {
    TrialResult tr;
    tr.seed = seed;
    tr.task_index = task_index;
    tr.task = task.name;

    RosenbrockObjective objective;
    ParamGroupList point = RosenbrockObjective::make_point(task.start_x, task.start_y);
    if (task.reload_network && chain.params) point = *chain.params;

    TrialOptimizer opt(plan.optimizer);
    if (opt.has_memory()) {
        opt.register_groups(point);
        if (task.reload_memory && !chain.memories.empty())
            opt.load_memories(chain.memories);
    }
    tr.curve.group_names = group_names(point);

    for (int step = 1; step <= task.steps; ++step) {
        StepTimer timer;
        const double loss = objective.value(point);
        ParamGroupList grads = objective.gradient(point);
        if (!std::isfinite(loss) || !all_finite(grads)) {
            tr.curve.diverged = true;
            tr.curve.diverged_at_step = step;
            break;
        }
        opt.step(point, grads);
        tr.curve.points.push_back(
            {step, loss, opt.last_mean_rates(point), timer.elapsed_ms()});
    }

    tr.final_loss = tr.curve.points.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : tr.curve.points.back().loss;
    if (opt.has_memory()) {
        tr.final_memories = opt.snapshots();
        chain.memories = tr.final_memories;
    }
    chain.params = point;
    return tr;
}

TrialResult run_network_task(const ExperimentPlan& plan, const TaskSpec& task,
                             int task_index, std::uint64_t seed,
                             const Batch* full_batch, ChainState& chain) {
    TrialResult tr;
    tr.seed = seed;
    tr.task_index = task_index;
    tr.task = task.name;

    MlpNetwork net(plan.network, derive_seed(seed, kNetStream + task_index));
    if (task.reload_network && chain.params) net.set_params(*chain.params);
    std::mt19937_64 dropout_rng(derive_seed(seed, kDropoutStream + task_index));
    ParamGroupList params = net.params();

    TrialOptimizer opt(plan.optimizer);
    if (opt.has_memory()) {
        opt.register_groups(params);
        if (task.reload_memory && !chain.memories.empty())
            opt.load_memories(chain.memories);
    }
    tr.curve.group_names = group_names(params);

    const LossKind loss_kind = task.kind == TaskKind::Classification
                                   ? LossKind::SoftmaxCrossEntropy
                                   : LossKind::MeanSquaredError;

    std::optional<DynamicsStream> stream;
    std::optional<BatchIterator> batches;
    bool cycle = false; // dynamics passes over its stream once; other data repeats
    int steps = task.steps;
    if (task.kind == TaskKind::Classification) {
        batches.emplace(*full_batch, task.batch_size, false, 0);
        cycle = true;
    } else if (task.kind == TaskKind::Dynamics) {
        const std::uint64_t data_seed = derive_seed(seed, kDataStream);
        stream = synth_dynamics_stream(task.n_samples, task.variant, data_seed,
                                       plan.generator);
        if (!chain.dynamics_stats) {
            if (task.variant == PayloadVariant::None) {
                chain.dynamics_stats = input_statistics(stream->inputs);
            } else {
                const DynamicsStream none = synth_dynamics_stream(
                    task.n_samples, PayloadVariant::None, data_seed, plan.generator);
                chain.dynamics_stats = input_statistics(none.inputs);
            }
        }
        standardize_inputs(stream->inputs, *chain.dynamics_stats);
        batches.emplace(sequential_batches(*stream, task.batch_size));
        steps = batches->batch_count();
    }

    for (int step = 1; step <= steps; ++step) {
        StepTimer timer;
        try {
            const int index = cycle ? (step - 1) % batches->batch_count() : step - 1;
            const Batch batch = batches->batch(index);
            LossResult res = net.loss_and_grad(batch, loss_kind, RunMode::Train,
                                               dropout_rng);
            opt.step(params, res.grads);
            net.set_params(params);
            tr.curve.points.push_back(
                {step, res.loss, opt.last_mean_rates(params), timer.elapsed_ms()});
        } catch (const DivergenceError&) {
            tr.curve.diverged = true;
            tr.curve.diverged_at_step = step;
            break;
        }
    }

    tr.final_loss = tr.curve.points.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : tr.curve.points.back().loss;
    if (opt.has_memory()) {
        tr.final_memories = opt.snapshots();
        chain.memories = tr.final_memories;
    }
    chain.params = params;
    return tr;
}

std::vector<TrialResult> run_chain(const ExperimentPlan& plan, std::uint64_t seed,
                                   const std::vector<Batch>& class_batches) {
    ChainState chain;
    std::vector<TrialResult> results;
    for (std::size_t ti = 0; ti < plan.tasks.size(); ++ti) {
        const TaskSpec& task = plan.tasks[ti];
        if (task.kind == TaskKind::Rosenbrock) {
            results.push_back(
                run_rosenbrock_task(plan, task, static_cast<int>(ti), seed, chain));
        } else {
            const Batch* full =
                task.kind == TaskKind::Classification ? &class_batches[ti] : nullptr;
            results.push_back(
                run_network_task(plan, task, static_cast<int>(ti), seed, full, chain));
        }
    }
    return results;
}

nlohmann::json plan_to_json(const ExperimentPlan& plan) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : plan.tasks) {
        tasks.push_back({{"name", t.name},
                         {"kind", kind_name(t.kind)},
                         {"steps", t.steps},
                         {"reload_memory", t.reload_memory},
                         {"reload_network", t.reload_network},
                         {"start_x", t.start_x},
                         {"start_y", t.start_y},
                         {"class_a", t.class_a},
                         {"class_b", t.class_b},
                         {"variant", to_string(t.variant)},
                         {"batch_size", t.batch_size},
                         {"n_samples", t.n_samples}});
    }
    const auto& o = plan.optimizer;
    const auto& d = plan.data;
    const auto& g = plan.generator;
    return {{"name", plan.name},
            {"tasks", tasks},
            {"optimizer",
             {{"variant", to_string(o.variant)},
              {"eta_init", o.eta_init},
              {"meta_rate", o.meta_rate},
              {"model_count", o.model_count},
              {"clip_bound", o.clip_bound},
              {"overlap", o.overlap},
              {"rate_max", o.rate_max},
              {"signal_rule", o.signal_rule == SignalRule::ClippedProduct
                                  ? "clipped_product"
                                  : "sign_product"},
              {"memory_update_enabled", o.memory_update_enabled}}},
            {"seeds", plan.seeds},
            {"network",
             {{"input_dim", plan.network.input_dim},
              {"hidden", plan.network.hidden},
              {"output_dim", plan.network.output_dim},
              {"dropout", plan.network.dropout}}},
            {"data",
             {{"images_path", d.images_path},
              {"labels_path", d.labels_path},
              {"per_class_cap", d.per_class_cap},
              {"synth_classes", d.synth_classes},
              {"synth_side", d.synth_side},
              {"synth_per_class", d.synth_per_class},
              {"dataset_seed", d.dataset_seed}}},
            {"generator",
             {{"version", g.version},
              {"joints", g.joints},
              {"amp_min", g.amp_min},
              {"amp_max", g.amp_max},
              {"omega_min", g.omega_min},
              {"omega_max", g.omega_max},
              {"input_noise", g.input_noise},
              {"target_noise", g.target_noise},
              {"target_offset", g.target_offset},
              {"payload_gain", g.payload_gain},
              {"c_pose", g.c_pose},
              {"c_cross", g.c_cross},
              {"c_vel", g.c_vel},
              {"c_damp", g.c_damp},
              {"c_inertia", g.c_inertia}}},
            {"loss_threshold", plan.loss_threshold},
            {"prefix_batches", plan.prefix_batches},
            {"iteration_cap", plan.iteration_cap},
            {"parallel", plan.parallel}};
}

nlohmann::json json_num(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

} // namespace

std::string to_string(OptimizerVariant variant) {
    switch (variant) {
        case OptimizerVariant::Gd: return "gd";
        case OptimizerVariant::MetaGd: return "metagd";
        case OptimizerVariant::MetaGdMemAdam: return "metagd-memadam";
        case OptimizerVariant::Adam: return "adam";
        case OptimizerVariant::MetaAdam: return "metaadam";
    }
    return "gd";
}

OptimizerVariant parse_variant(const std::string& name) {
    if (name == "gd") return OptimizerVariant::Gd;
    if (name == "metagd") return OptimizerVariant::MetaGd;
    if (name == "metagd-memadam") return OptimizerVariant::MetaGdMemAdam;
    if (name == "adam") return OptimizerVariant::Adam;
    if (name == "metaadam") return OptimizerVariant::MetaAdam;
    throw std::invalid_argument("unknown optimizer variant: " + name);
}

TrialOptimizer::TrialOptimizer(const OptimizerSettings& settings)
    : settings_(settings) {
    if (has_memory()) meta_.emplace(to_meta_config(settings_));
}

bool TrialOptimizer::has_memory() const {
    return settings_.variant == OptimizerVariant::MetaGd ||
           settings_.variant == OptimizerVariant::MetaGdMemAdam ||
           settings_.variant == OptimizerVariant::MetaAdam;
}

void TrialOptimizer::register_groups(const ParamGroupList& params) {
    if (!meta_) return;
    for (const auto& g : params)
        meta_->register_group(g.name, static_cast<int>(g.values.size()));
}

void TrialOptimizer::load_memories(const std::map<std::string, MemorySnapshot>& snapshots) {
    if (!meta_) return;
    const auto known = meta_->group_names();
    for (const auto& [name, snap] : snapshots)
        if (std::find(known.begin(), known.end(), name) != known.end())
            meta_->load_memory(name, snap);
}

std::map<std::string, MemorySnapshot> TrialOptimizer::snapshots() const {
    if (!meta_) return {};
    return meta_->memory_snapshots();
}

void TrialOptimizer::step(ParamGroupList& params, const ParamGroupList& grads) {
    if (meta_) {
        meta_->step(params, grads);
        return;
    }
    if (params.size() != grads.size())
        throw std::invalid_argument("parameter/gradient group count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        const auto& g = grads[k];
        if (p.values.size() != g.values.size())
            throw std::invalid_argument("group size mismatch: " + p.name);
        if (settings_.variant == OptimizerVariant::Gd) {
            gd_step(p.values, g.values, settings_.eta_init, settings_.clip_bound);
        } else {
            auto it = adam_.find(p.name);
            if (it == adam_.end())
                it = adam_
                         .emplace(p.name,
                                  AdamState(static_cast<int>(p.values.size()),
                                            AdamConfig{settings_.eta_init, 0.9, 0.999,
                                                       1e-8}))
                         .first;
            std::vector<double> z = clip_gradients(g.values, settings_.clip_bound);
            const std::vector<double> delta = it->second.transform(z);
            for (std::size_t i = 0; i < p.values.size(); ++i)
                p.values[i] -= delta[i];
        }
    }
}

std::vector<double> TrialOptimizer::last_mean_rates(const ParamGroupList& params) const {
    if (meta_) return meta_->last_mean_rates();
    return std::vector<double>(params.size(), settings_.eta_init);
}

ExperimentReport run_experiment(const ExperimentPlan& plan_in) {
    ExperimentPlan plan = plan_in;
    validate_plan(plan);

    std::vector<Batch> class_batches(plan.tasks.size());
    if (plan.tasks.front().kind == TaskKind::Classification) {
        const auto& d = plan.data;
        const LabeledDataset base =
            d.images_path.empty()
                ? synth_digits_dataset(d.synth_classes, d.synth_side,
                                       d.synth_per_class, d.dataset_seed)
                : load_idx_dataset(d.images_path, d.labels_path);
        for (std::size_t ti = 0; ti < plan.tasks.size(); ++ti) {
            const auto& t = plan.tasks[ti];
            class_batches[ti] = as_batch(
                cap_per_class(make_binary_task(base, t.class_a, t.class_b),
                              d.per_class_cap));
        }
        plan.network.input_dim = base.features.cols;
        plan.network.output_dim = 2;
    } else if (plan.tasks.front().kind == TaskKind::Dynamics) {
        plan.network.input_dim = 3 * plan.generator.joints;
        plan.network.output_dim = 1;
    }

    ExperimentReport report;
    report.plan = plan;
    if (plan.parallel && plan.seeds.size() > 1) {
        std::vector<std::future<std::vector<TrialResult>>> futures;
        futures.reserve(plan.seeds.size());
        for (std::uint64_t seed : plan.seeds)
            futures.push_back(std::async(std::launch::async, run_chain, std::cref(plan),
                                         seed, std::cref(class_batches)));
        for (auto& f : futures)
            for (auto& tr : f.get()) report.trials.push_back(std::move(tr));
    } else {
        for (std::uint64_t seed : plan.seeds)
            for (auto& tr : run_chain(plan, seed, class_batches))
                report.trials.push_back(std::move(tr));
    }
    return report;
}

std::optional<int> iterations_to_threshold(const ConvergenceCurve& curve, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("threshold must be positive");
    for (const auto& p : curve.points)
        if (p.loss < tau) return p.step;
    return std::nullopt;
}

double mean_loss_prefix(const ConvergenceCurve& curve, int n) {
    if (n < 1) throw std::invalid_argument("prefix length must be positive");
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(n),
                                                curve.points.size());
    if (m == 0) return std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += curve.points[i].loss;
    return sum / static_cast<double>(m);
}

std::vector<TaskAggregate> aggregate(const ExperimentReport& report) {
    const auto& plan = report.plan;
    std::vector<TaskAggregate> out(plan.tasks.size());
    for (std::size_t ti = 0; ti < plan.tasks.size(); ++ti) {
        TaskAggregate& agg = out[ti];
        agg.task_index = static_cast<int>(ti);
        agg.task = plan.tasks[ti].name;
    }
    for (std::uint64_t seed : plan.seeds) {
        for (std::size_t ti = 0; ti < plan.tasks.size(); ++ti) {
            const auto it = std::find_if(
                report.trials.begin(), report.trials.end(), [&](const TrialResult& t) {
                    return t.seed == seed && t.task_index == static_cast<int>(ti);
                });
            if (it == report.trials.end())
                throw std::runtime_error("report is missing a trial");
            TaskAggregate& agg = out[ti];
            agg.per_seed_prefix_loss.push_back(
                mean_loss_prefix(it->curve, plan.prefix_batches));
            agg.per_seed_iterations.push_back(
                iterations_to_threshold(it->curve, plan.loss_threshold));
            if (!agg.per_seed_iterations.back()) ++agg.never_count;
            if (it->curve.diverged) ++agg.diverged_count;
        }
    }
    for (auto& agg : out) {
        agg.mean_prefix_loss =
            std::accumulate(agg.per_seed_prefix_loss.begin(),
                            agg.per_seed_prefix_loss.end(), 0.0) /
            static_cast<double>(agg.per_seed_prefix_loss.size());
        std::vector<double> capped;
        std::vector<double> converged;
        for (const auto& it : agg.per_seed_iterations) {
            capped.push_back(it ? static_cast<double>(*it)
                                : static_cast<double>(report.plan.iteration_cap));
            if (it) converged.push_back(static_cast<double>(*it));
        }
        agg.median_iterations_capped = median(capped);
        if (!converged.empty()) agg.median_iterations_converged = median(converged);
    }
    return out;
}

std::string plan_echo_json(const ExperimentPlan& plan) {
    return plan_to_json(plan).dump(2) + "\n";
}

void write_report(const ExperimentReport& report, const std::string& directory) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) throw std::runtime_error("cannot create directory: " + directory);

    for (const auto& tr : report.trials) {
        const std::string stem = "seed" + std::to_string(tr.seed) + "_task" +
                                 std::to_string(tr.task_index) + "_" + tr.task;
        const std::string csv_path = directory + "/curve_" + stem + ".csv";
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("cannot open for writing: " + csv_path);
        csv << "step,loss";
        for (const auto& g : tr.curve.group_names) csv << ",mean_rate_" << g;
        csv << ",step_ms\n";
        for (const auto& p : tr.curve.points) {
            csv << p.step << ',' << fmt_double(p.loss);
            for (double r : p.group_mean_rates) csv << ',' << fmt_double(r);
            csv << ',' << fmt_double(p.step_ms) << '\n';
        }
        if (!csv) throw std::runtime_error("write failed: " + csv_path);

        for (const auto& [group, snap] : tr.final_memories) {
            const std::string snap_path =
                directory + "/memory_" + stem + "_" + group + ".json";
            std::ofstream out(snap_path);
            if (!out) throw std::runtime_error("cannot open for writing: " + snap_path);
            out << snapshot_to_json(snap);
            if (!out) throw std::runtime_error("write failed: " + snap_path);
        }
    }

    nlohmann::json trials = nlohmann::json::array();
    for (const auto& tr : report.trials) {
        const auto iters =
            iterations_to_threshold(tr.curve, report.plan.loss_threshold);
        trials.push_back(
            {{"seed", tr.seed},
             {"task_index", tr.task_index},
             {"task", tr.task},
             {"steps", tr.curve.points.size()},
             {"final_loss", json_num(tr.final_loss)},
             {"diverged", tr.curve.diverged},
             {"diverged_at_step",
              tr.curve.diverged ? nlohmann::json(tr.curve.diverged_at_step)
                                : nlohmann::json(nullptr)},
             {"iterations_to_threshold",
              iters ? nlohmann::json(*iters) : nlohmann::json(nullptr)},
             {"mean_loss_prefix",
              json_num(mean_loss_prefix(tr.curve, report.plan.prefix_batches))}});
    }

    nlohmann::json aggregates = nlohmann::json::array();
    for (const auto& agg : aggregate(report)) {
        nlohmann::json iters = nlohmann::json::array();
        for (const auto& it : agg.per_seed_iterations)
            iters.push_back(it ? nlohmann::json(*it) : nlohmann::json(nullptr));
        nlohmann::json prefixes = nlohmann::json::array();
        for (double v : agg.per_seed_prefix_loss) prefixes.push_back(json_num(v));
        aggregates.push_back(
            {{"task_index", agg.task_index},
             {"task", agg.task},
             {"per_seed_prefix_loss", prefixes},
             {"per_seed_iterations", iters},
             {"mean_prefix_loss", json_num(agg.mean_prefix_loss)},
             {"median_iterations_capped", agg.median_iterations_capped},
             {"median_iterations_converged",
              agg.median_iterations_converged
                  ? nlohmann::json(*agg.median_iterations_converged)
                  : nlohmann::json(nullptr)},
             {"never_count", agg.never_count},
             {"diverged_count", agg.diverged_count}});
    }

    nlohmann::json summary = {{"version", report.version},
                              {"plan", plan_to_json(report.plan)},
                              {"trials", trials},
                              {"aggregates", aggregates}};
    const std::string summary_path = directory + "/summary.json";
    std::ofstream out(summary_path);
    if (!out) throw std::runtime_error("cannot open for writing: " + summary_path);
    out << summary.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + summary_path);
}

namespace {

int param_count(const MlpSpec& spec) {
    int total = 0;
    int prev = spec.input_dim;
    for (int h : spec.hidden) {
        total += (prev + 1) * h;
        prev = h;
    }
    total += (prev + 1) * spec.output_dim;
    return total;
}

TimingStats time_config(const MlpSpec& spec, const OptimizerSettings& settings,
                        int steps, std::uint64_t seed) {
    DynamicsStream stream =
        synth_dynamics_stream(steps * 10, PayloadVariant::None, seed);
    const CoordinateStats stats = input_statistics(stream.inputs);
    standardize_inputs(stream.inputs, stats);
    BatchIterator batches = sequential_batches(stream, 10);

    MlpNetwork net(spec, derive_seed(seed, kNetStream));
    std::mt19937_64 dropout_rng(derive_seed(seed, kDropoutStream));
    ParamGroupList params = net.params();
    TrialOptimizer opt(settings);

    std::vector<double> durations;
    durations.reserve(static_cast<std::size_t>(steps));
    for (int step = 0; step < steps && step < batches.batch_count(); ++step) {
        const Batch batch = batches.batch(step);
        StepTimer timer;
        LossResult res = net.loss_and_grad(batch, LossKind::MeanSquaredError,
                                           RunMode::Train, dropout_rng);
        opt.step(params, res.grads);
        net.set_params(params);
        durations.push_back(timer.elapsed_ms());
    }

    TimingStats out;
    out.steps = static_cast<int>(durations.size());
    if (durations.empty()) return out;
    out.mean_ms = std::accumulate(durations.begin(), durations.end(), 0.0) /
                  static_cast<double>(durations.size());
    std::sort(durations.begin(), durations.end());
    out.median_ms = median(durations);
    const std::size_t p95 = std::min(
        durations.size() - 1,
        static_cast<std::size_t>(std::ceil(0.95 * durations.size())) - 1);
    out.p95_ms = durations[p95];
    return out;
}

} // namespace

TimingReport timing_probe(int steps, std::uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("steps must be positive");
    MlpSpec base{21, {100, 50, 10}, 1, 0.0};
    MlpSpec doubled{21, {150, 75, 14}, 1, 0.0}; // about twice the parameters

    OptimizerSettings meta;
    meta.variant = OptimizerVariant::MetaGd;
    meta.eta_init = 0.001;
    meta.meta_rate = 0.005;
    meta.model_count = 200;
    meta.clip_bound = 1.0;

    OptimizerSettings meta_more_models = meta;
    meta_more_models.model_count = 400;

    OptimizerSettings gd;
    gd.variant = OptimizerVariant::Gd;
    gd.eta_init = 0.001;
    gd.clip_bound = 1.0;

    TimingReport report;
    report.base_param_count = param_count(base);
    report.double_param_count = param_count(doubled);
    report.meta_base = time_config(base, meta, steps, seed);
    report.meta_double_models = time_config(base, meta_more_models, steps, seed);
    report.meta_double_params = time_config(doubled, meta, steps, seed);
    report.gd_base = time_config(base, gd, steps, seed);
    return report;
}

ExperimentPlan make_rosenbrock_plan(const OptimizerSettings& optimizer, int runs,
                                    int steps, const std::vector<std::uint64_t>& seeds,
                                    bool transfer, double start_x, double start_y) {
    if (runs < 1) throw std::invalid_argument("runs must be positive");
    ExperimentPlan plan;
    plan.name = "rosenbrock";
    plan.optimizer = optimizer;
    plan.seeds = seeds;
    plan.loss_threshold = 1e-2;
    plan.iteration_cap = steps;
    for (int r = 0; r < runs; ++r) {
        TaskSpec task;
        task.name = "run" + std::to_string(r + 1);
        task.kind = TaskKind::Rosenbrock;
        task.steps = steps;
        task.reload_memory = transfer && r > 0;
        task.start_x = start_x;
        task.start_y = start_y;
        plan.tasks.push_back(task);
    }
    return plan;
}

ExperimentPlan make_classification_plan(const OptimizerSettings& optimizer,
                                        bool transfer,
                                        const std::vector<std::uint64_t>& seeds,
                                        const ClassificationDataConfig& data,
                                        int iteration_cap) {
    ExperimentPlan plan;
    plan.name = transfer ? "classify_transfer" : "classify_fresh";
    plan.optimizer = optimizer;
    plan.seeds = seeds;
    plan.data = data;
    plan.loss_threshold = 0.1;
    plan.iteration_cap = iteration_cap;
    const int pairs[3][2] = {{1, 2}, {1, 3}, {1, 4}};
    for (int i = 0; i < 3; ++i) {
        TaskSpec task;
        task.name = "digits_" + std::to_string(pairs[i][0]) + "_" +
                    std::to_string(pairs[i][1]);
        task.kind = TaskKind::Classification;
        task.steps = iteration_cap;
        task.reload_memory = transfer && i > 0;
        task.class_a = pairs[i][0];
        task.class_b = pairs[i][1];
        plan.tasks.push_back(task);
    }
    return plan;
}

ExperimentPlan make_dynamics_plan(const OptimizerSettings& optimizer, bool reload,
                                  const std::vector<std::uint64_t>& seeds,
                                  int n_samples, int batch_size) {
    ExperimentPlan plan;
    plan.name = reload ? "dynamics_reload" : "dynamics_fresh";
    plan.optimizer = optimizer;
    plan.seeds = seeds;
    plan.prefix_batches = 50;
    const PayloadVariant variants[3] = {PayloadVariant::None, PayloadVariant::Light,
                                        PayloadVariant::Heavy};
    for (int i = 0; i < 3; ++i) {
        TaskSpec task;
        task.name = to_string(variants[i]);
        task.kind = TaskKind::Dynamics;
        task.variant = variants[i];
        task.batch_size = batch_size;
        task.n_samples = n_samples;
        task.steps = (n_samples + batch_size - 1) / batch_size;
        task.reload_memory = reload && i > 0;
        task.reload_network = reload && i > 0;
        plan.tasks.push_back(task);
    }
    return plan;
}

} // namespace lrmem
