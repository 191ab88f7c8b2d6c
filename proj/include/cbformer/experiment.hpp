#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cbformer/analysis.hpp"
#include "cbformer/ar.hpp"
#include "cbformer/autoformer.hpp"
#include "cbformer/checkpoint.hpp"
#include "cbformer/data.hpp"
#include "cbformer/intervention.hpp"
#include "cbformer/training.hpp"
#include "json.hpp"

namespace cbf {

// Aggregated configuration problems; what() lists all of them.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct DatasetSection {
    std::string csv;  // empty selects the synthetic generator
    std::string date_column = "date";
    data::SynthSpec synthetic;
    data::SplitSpec split;
    std::size_t input_len = 96;
    std::size_t output_len = 24;
    std::size_t window_stride = 1;

    bool is_synthetic() const { return csv.empty(); }
};

struct ArSection {
    std::size_t order = 0;  // 0 means input_len
    double ridge = 1e-3;
};

struct AnalysisSection {
    std::vector<std::string> concepts{"ar", "hour_of_day", "day_of_week", "day_of_month", "day_of_year"};
    std::size_t report_batches = 3;
    std::size_t report_batch_size = 32;
    std::string mask_value = "zero";
    std::string lens_origin = "bottleneck";
    std::string lens_mask = "all";
    std::vector<std::size_t> lens_windows{0};
    std::vector<long> shifts;  // empty means 0..23
    bool shift_future = true;
    std::vector<double> alphas{0.0, 0.3, 0.5, 0.7, 1.0};
    std::vector<std::uint64_t> seeds;  // alpha sweep; empty means training.seed only
};

// Key schema (JSON): name, output_dir, dataset{...}, model{...},
// bottleneck{...}, training{...}, ar{...}, analysis{...}. model.channels,
// model.input_len and model.output_len are taken from the dataset.
struct ExperimentConfig {
    std::string name = "experiment";
    std::string output_dir;  // empty: $CBF_OUTPUT_ROOT, else "runs"
    DatasetSection dataset;
    ModelConfig model;
    BottleneckSpec bottleneck;
    TrainConfig training;
    ArSection ar;
    AnalysisSection analysis;

    // Every violated invariant across sections.
    std::vector<std::string> problems() const;
    nlohmann::json to_json() const;
    // Rejects unknown keys and ill-typed values together with problems().
    static ExperimentConfig from_json(const nlohmann::json& j);
    std::filesystem::path run_dir() const;
    std::vector<long> effective_shifts() const;
};

// "training.alpha=0.5": the value is parsed as JSON when possible, otherwise
// taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

struct LensResult {
    std::vector<std::filesystem::path> files;
};

struct AlphaRow {
    double alpha = 0.0;
    Summary mse;
    Summary mae;
    std::map<std::string, Summary> concept_scores;
    bool forecast_degenerate = false;
};

// Pipeline steps over one run directory. Artifacts: config.json, ar.json,
// checkpoint.bin, history.jsonl, metrics.json, report.json,
// heatmap_<hash>.svg, forecasts/, intervention.json, intervention.svg,
// alpha_sweep.json, alpha_sweep.csv.
class Experiment {
public:
    explicit Experiment(ExperimentConfig config);

    const ExperimentConfig& config() const { return config_; }
    std::filesystem::path dir() const { return config_.run_dir(); }
    std::filesystem::path default_checkpoint() const { return dir() / "checkpoint.bin"; }

    const data::Dataset& dataset();
    const std::vector<data::TimeSeriesWindow>& windows(const std::string& split);

    ar::ArModel fit_ar();
    // Loads ar.json when it matches the dataset, otherwise fits it.
    ar::ArModel ar_model();

    TrainResult train(const StepCallback& on_step = {});
    Metrics evaluate(const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
    CkaReport cka_report(const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
    LensResult lens(const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                    const std::optional<std::string>& mask = std::nullopt,
                    const std::optional<std::string>& origin = std::nullopt);
    std::vector<ShiftRecord> intervene(const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                                       const std::optional<std::vector<long>>& shifts = std::nullopt);
    std::vector<AlphaRow> alpha_sweep(const std::optional<std::vector<double>>& alphas = std::nullopt,
                                      const StepCallback& on_step = {});

private:
    void prepare_dir();
    std::filesystem::path checkpoint_path(const std::optional<std::filesystem::path>& p) const;

    ExperimentConfig config_;
    std::optional<data::Dataset> dataset_;
    std::map<std::string, std::vector<data::TimeSeriesWindow>> windows_;
};

// Regenerates the figures of a finished run from its JSON artifacts. Throws
// listing every missing artifact.
std::vector<std::filesystem::path> emit_reports(const std::filesystem::path& run_dir);

}  // namespace cbf
