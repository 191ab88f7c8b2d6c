#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cbformer/ar.hpp"
#include "cbformer/autoformer.hpp"
#include "cbformer/concepts.hpp"
#include "cbformer/data.hpp"
#include "json.hpp"

namespace cbf {

class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CkaReport {
    std::string checkpoint_id;
    std::string component_kind;  // "ff" slices or "heads"
    std::size_t batch_size = 0;
    std::size_t batches = 0;
    std::vector<std::string> concepts;
    // scores[layer][component][concept]
    std::vector<std::vector<std::vector<double>>> scores;

    double at(std::size_t layer, std::size_t component, const std::string& concept_name) const;
    nlohmann::json to_json() const;
    static CkaReport from_json(const nlohmann::json& j);
};

// Per-batch CKA of every encoder layer's components against each concept,
// averaged over the first `batches` consecutive batches of `windows`.
CkaReport cka_report(const Autoformer& model, const std::vector<data::TimeSeriesWindow>& windows,
                     const ar::ArModel& ar_model, const std::vector<Concept>& concepts, std::size_t batches = 3,
                     std::size_t batch_size = 32, const std::string& checkpoint_id = "");

enum class LensOrigin { Bottleneck, Final };
enum class MaskValue { Zero, Mean };

std::string to_string(LensOrigin o);
LensOrigin parse_lens_origin(const std::string& s);
MaskValue parse_mask_value(const std::string& s);

// keep[i] leaves component i active; masked components are replaced by zero
// or by their mean over batch and time.
Tensor decoder_lens(const Autoformer& model, const Batch& batch, const std::vector<bool>& keep, LensOrigin origin,
                    MaskValue mask_value = MaskValue::Zero);

// Parses "1,3" (1-based component numbers), "all" or "none".
std::vector<bool> parse_mask(const std::string& text, std::size_t components);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

// SVG heat map: one row per (layer, component), one column per concept; each
// cell carries data-layer, data-component, data-concept and data-value.
std::string heatmap_svg(const CkaReport& report);

struct ShiftRecord;
std::string intervention_svg(const std::vector<ShiftRecord>& records);

// Columns t, truth, plain, lens_comp<k>..., ar for one window and channel.
struct ForecastTable {
    std::vector<std::string> timestamps;
    std::vector<double> truth, plain, ar;
    std::vector<std::vector<double>> lens;
    std::vector<std::size_t> lens_components;  // 1-based labels of `lens`; empty means 1..n
};
void write_forecast_csv(const ForecastTable& table, const std::filesystem::path& path);
// Line chart of every column of the table against the step index.
std::string forecast_svg(const ForecastTable& table, const std::string& title);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cbf
