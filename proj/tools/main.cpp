#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrmem/harness.hpp"
#include "lrmem/memory.hpp"

namespace {

struct CommonOptions {
    std::string variant = "metagd";
    double eta = 0.001;
    double xi = 0.005;
    int models = 100;
    double clip = 10.0;
    double overlap = 1.0;
    double rate_max = 1.0;
    std::vector<std::uint64_t> seeds{1};
    std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--variant", o.variant,
                    "optimizer: gd, metagd, metagd-memadam, adam, metaadam")
        ->capture_default_str();
    cmd->add_option("--eta", o.eta, "initial learning rate")->capture_default_str();
    cmd->add_option("--xi", o.xi, "memory update step size")->capture_default_str();
    cmd->add_option("--models", o.models, "local models per memory")
        ->capture_default_str();
    cmd->add_option("--clip", o.clip, "gradient clip bound")->capture_default_str();
    cmd->add_option("--overlap", o.overlap, "kernel width in units of model spacing")
        ->capture_default_str();
    cmd->add_option("--rate-max", o.rate_max, "upper bound on stored rates")
        ->capture_default_str();
    cmd->add_option("--seeds", o.seeds, "trial seeds")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--out", o.out, "report output directory");
}

lrmem::OptimizerSettings to_settings(const CommonOptions& o) {
    lrmem::OptimizerSettings s;
    s.variant = lrmem::parse_variant(o.variant);
    s.eta_init = o.eta;
    s.meta_rate = o.xi;
    s.model_count = o.models;
    s.clip_bound = o.clip;
    s.overlap = o.overlap;
    s.rate_max = o.rate_max;
    return s;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void print_iteration_summary(const lrmem::ExperimentReport& report) {
    for (const auto& agg : lrmem::aggregate(report)) {
        std::cout << "task=" << agg.task
                  << " median_steps_to_threshold=" << fmt(agg.median_iterations_capped)
                  << " never=" << agg.never_count
                  << " diverged=" << agg.diverged_count << "\n";
    }
}

void print_prefix_summary(const lrmem::ExperimentReport& report) {
    for (const auto& agg : lrmem::aggregate(report)) {
        std::cout << "task=" << agg.task
                  << " mean_prefix_loss=" << fmt(agg.mean_prefix_loss)
                  << " diverged=" << agg.diverged_count << "\n";
    }
}

int run_rosenbrock(const CommonOptions& common, int runs, int steps, double start_x,
                   double start_y, bool fresh, bool gd_reference) {
    const auto settings = to_settings(common);
    const auto plan = lrmem::make_rosenbrock_plan(settings, runs, steps, common.seeds,
                                                  !fresh, start_x, start_y);
    const auto report = lrmem::run_experiment(plan);
    if (!common.out.empty()) lrmem::write_report(report, common.out);
    std::cout << "threshold=" << fmt(plan.loss_threshold) << "\n";
    print_iteration_summary(report);
    if (gd_reference && settings.variant != lrmem::OptimizerVariant::Gd) {
        auto gd = settings;
        gd.variant = lrmem::OptimizerVariant::Gd;
        const auto gd_plan = lrmem::make_rosenbrock_plan(gd, 1, steps, common.seeds,
                                                         false, start_x, start_y);
        const auto gd_report = lrmem::run_experiment(gd_plan);
        for (const auto& agg : lrmem::aggregate(gd_report)) {
            std::cout << "task=gd_reference"
                      << " median_steps_to_threshold="
                      << fmt(agg.median_iterations_capped)
                      << " never=" << agg.never_count
                      << " diverged=" << agg.diverged_count << "\n";
        }
    }
    return 0;
}

int run_classify(const CommonOptions& common, bool transfer, int iters,
                 const lrmem::ClassificationDataConfig& data) {
    const auto plan = lrmem::make_classification_plan(to_settings(common), transfer,
                                                      common.seeds, data, iters);
    const auto report = lrmem::run_experiment(plan);
    if (!common.out.empty()) lrmem::write_report(report, common.out);
    std::cout << "threshold=" << fmt(plan.loss_threshold) << "\n";
    print_iteration_summary(report);
    return 0;
}

int run_dynamics(const CommonOptions& common, bool reload, int samples, int batch) {
    const auto plan = lrmem::make_dynamics_plan(to_settings(common), reload,
                                                common.seeds, samples, batch);
    const auto report = lrmem::run_experiment(plan);
    if (!common.out.empty()) lrmem::write_report(report, common.out);
    std::cout << "prefix_batches=" << plan.prefix_batches << "\n";
    print_prefix_summary(report);
    return 0;
}

int run_inspect(const std::string& path, int grid, const std::string& csv_path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const lrmem::MemorySnapshot snap = lrmem::snapshot_from_json(buffer.str());

    double cap = 1.0;
    for (double t : snap.theta) cap = std::max(cap, t);
    const lrmem::LearningRateMemory memory = lrmem::restore(snap, cap);

    std::cout << "version=" << snap.version << " M=" << snap.model_count
              << " clip_bound=" << fmt(snap.clip_bound)
              << " eta_init=" << fmt(snap.eta_init)
              << " overlap=" << fmt(snap.overlap) << "\n";
    std::cout << "m,center,width,rate\n";
    for (int m = 0; m < memory.model_count(); ++m) {
        const auto model = memory.model(m);
        std::cout << m << ',' << fmt(model.center) << ',' << fmt(model.width) << ','
                  << fmt(model.rate) << "\n";
    }

    std::ostringstream landscape;
    landscape << "z,predicted_rate\n";
    const double g = memory.clip_bound();
    for (int i = 0; i < grid; ++i) {
        const double z = grid == 1 ? -g : -g + 2.0 * g * i / (grid - 1);
        landscape << fmt(z) << ',' << fmt(memory.predict_rate(z)) << "\n";
    }
    std::cout << landscape.str();
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("cannot open for writing: " + csv_path);
        csv << landscape.str();
        if (!csv) throw std::runtime_error("write failed: " + csv_path);
    }
    return 0;
}

int run_timing(int steps, std::uint64_t seed) {
    const lrmem::TimingReport report = lrmem::timing_probe(steps, seed);
    const auto line = [](const char* name, const lrmem::TimingStats& s) {
        std::cout << "config=" << name << " median_ms=" << fmt(s.median_ms)
                  << " p95_ms=" << fmt(s.p95_ms) << " mean_ms=" << fmt(s.mean_ms)
                  << " steps=" << s.steps << "\n";
    };
    line("meta_base", report.meta_base);
    line("meta_double_models", report.meta_double_models);
    line("meta_double_params", report.meta_double_params);
    line("gd_base", report.gd_base);
    std::cout << "params_base=" << report.base_param_count
              << " params_double=" << report.double_param_count << "\n";
    std::cout << "ratio_double_models="
              << fmt(report.meta_double_models.median_ms / report.meta_base.median_ms)
              << " ratio_double_params="
              << fmt(report.meta_double_params.median_ms / report.meta_base.median_ms)
              << "\n";
    std::cout << "reference_ms=3\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Benchmark suite for the learning-rate memory optimizer"};
    app.set_config("--config", "", "read defaults from an INI file");
    app.require_subcommand(1);

    CommonOptions ros_common;
    ros_common.xi = 0.007;
    int ros_runs = 2;
    int ros_steps = 2000;
    double ros_x = -1.2;
    double ros_y = 1.0;
    bool ros_fresh = false;
    bool ros_no_ref = false;
    auto* ros = app.add_subcommand("rosenbrock",
                                   "consecutive valley-descent runs with memory carry-over");
    add_common(ros, ros_common);
    ros->add_option("--runs", ros_runs, "consecutive runs")->capture_default_str();
    ros->add_option("--steps", ros_steps, "steps per run")->capture_default_str();
    ros->add_option("--start-x", ros_x, "start point x")->capture_default_str();
    ros->add_option("--start-y", ros_y, "start point y")->capture_default_str();
    ros->add_flag("--fresh", ros_fresh, "do not carry memory between runs");
    ros->add_flag("--no-gd-reference", ros_no_ref, "skip the plain GD comparison run");

    CommonOptions cls_common;
    cls_common.eta = 0.01;
    cls_common.xi = 1.0;
    bool cls_transfer = false;
    int cls_iters = 100;
    lrmem::ClassificationDataConfig cls_data;
    auto* cls = app.add_subcommand("classify",
                                   "three sequential binary digit tasks");
    add_common(cls, cls_common);
    cls->add_flag("--transfer", cls_transfer,
                  "start tasks 2 and 3 from the previous task's memory");
    cls->add_option("--iters", cls_iters, "iteration cap per task")->capture_default_str();
    cls->add_option("--images", cls_data.images_path, "IDX image file (else synthetic)");
    cls->add_option("--labels", cls_data.labels_path, "IDX label file");
    cls->add_option("--cap", cls_data.per_class_cap, "rows per class per task")
        ->capture_default_str();
    cls->add_option("--dataset-seed", cls_data.dataset_seed, "synthetic dataset seed")
        ->capture_default_str();

    CommonOptions dyn_common;
    dyn_common.xi = 0.003;
    dyn_common.models = 200;
    dyn_common.clip = 1.0;
    bool dyn_reload = false;
    int dyn_samples = 3000;
    int dyn_batch = 10;
    auto* dyn = app.add_subcommand("dynamics",
                                   "sequential payload-change regression stream");
    add_common(dyn, dyn_common);
    dyn->add_flag("--reload", dyn_reload,
                  "carry network and memory across payload variants");
    dyn->add_option("--samples", dyn_samples, "samples per variant")->capture_default_str();
    dyn->add_option("--batch", dyn_batch, "sequential batch size")->capture_default_str();

    std::string ins_path;
    int ins_grid = 101;
    std::string ins_csv;
    auto* ins = app.add_subcommand("inspect-memory",
                                   "print a memory snapshot and its rate landscape");
    ins->add_option("snapshot", ins_path, "memory snapshot JSON")->required();
    ins->add_option("--grid", ins_grid, "landscape sample count")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    ins->add_option("--csv", ins_csv, "also write the landscape to this CSV file");

    int tim_steps = 150;
    std::uint64_t tim_seed = 1;
    auto* tim = app.add_subcommand("timing", "per-step wall-time statistics");
    tim->add_option("--steps", tim_steps, "timed steps per configuration")
        ->capture_default_str();
    tim->add_option("--seed", tim_seed, "stream seed")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (ros->parsed())
            return run_rosenbrock(ros_common, ros_runs, ros_steps, ros_x, ros_y,
                                  ros_fresh, !ros_no_ref);
        if (cls->parsed()) return run_classify(cls_common, cls_transfer, cls_iters, cls_data);
        if (dyn->parsed()) return run_dynamics(dyn_common, dyn_reload, dyn_samples, dyn_batch);
        if (ins->parsed()) return run_inspect(ins_path, ins_grid, ins_csv);
        if (tim->parsed()) return run_timing(tim_steps, tim_seed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
