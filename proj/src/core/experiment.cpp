#include "cbformer/experiment.hpp"

#include <cmath>
#include <concepts>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cbformer/concepts.hpp"

namespace cbf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
    return out;
}

// Walks one JSON object, reading known keys and recording type errors and
// unknown keys.
class Reader {
public:
    Reader(const json* obj, std::string path, std::vector<std::string>& problems)
        : obj_(obj), path_(std::move(path)), problems_(problems) {}

    ~Reader() {
        if (!obj_) return;
        for (const auto& [key, value] : obj_->items()) {
            if (!seen_.count(key)) problems_.push_back("unknown key '" + where(key) + "'");
        }
    }

    Reader section(const std::string& key) {
        const json* v = find(key);
        if (v && !v->is_object()) {
            bad(key, "an object");
            v = nullptr;
        }
        return Reader(v, where(key), problems_);
    }

    static bool non_negative_integer(const json& v) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }

    template <std::unsigned_integral T>
    void get(const std::string& key, T& out) {
        if (const json* v = find(key)) {
            if (non_negative_integer(*v)) out = v->get<T>();
            else bad(key, "a non-negative integer");
        }
    }
    void get(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (v->is_number()) out = v->get<double>();
            else bad(key, "a number");
        }
    }
    void get(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else bad(key, "true or false");
        }
    }
    void get(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (v->is_string()) out = v->get<std::string>();
            else bad(key, "a string");
        }
    }
    template <class T, class Check>
    void get_list(const std::string& key, std::vector<T>& out, Check ok, const char* what) {
        if (const json* v = find(key)) {
            if (!v->is_array()) return bad(key, std::string("a list of ") + what);
            std::vector<T> items;
            for (const auto& e : *v) {
                if (!ok(e)) return bad(key, std::string("a list of ") + what);
                items.push_back(e.get<T>());
            }
            out = items;
        }
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        if (!obj_) return nullptr;
        const auto it = obj_->find(key);
        return it == obj_->end() ? nullptr : &*it;
    }

private:
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    void bad(const std::string& key, const std::string& expected) {
        problems_.push_back(where(key) + " must be " + expected);
    }

    const json* obj_;
    std::string path_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

template <class F>
void collect(std::vector<std::string>& problems, const std::string& prefix, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        problems.push_back(prefix + e.what());
    }
}

std::string alpha_tag(double a) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", a);
    return buf;
}

std::string dataset_fingerprint(const data::Dataset& ds) {
    const auto& v = ds.train.values;
    return fnv1a_hex(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
}

json metrics_json(const Metrics& m) { return {{"mse", m.mse}, {"mae", m.mae}}; }

Metrics metrics_from_json(const json& j) { return {j.at("mse").get<double>(), j.at("mae").get<double>()}; }

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration:\n  - " + join(problems, "\n  - ")), problems_(std::move(problems)) {}

std::vector<std::string> ExperimentConfig::problems() const {
    std::vector<std::string> p;
    if (name.empty()) p.push_back("name must not be empty");
    for (char ch : name) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) {
            p.push_back("name may only contain letters, digits, '-', '_' and '.'");
            break;
        }
    }
    collect(p, "dataset.split: ", [&] { dataset.split.validate(); });
    if (dataset.is_synthetic()) collect(p, "dataset.synthetic: ", [&] { dataset.synthetic.validate(); });
    if (dataset.input_len == 0) p.push_back("dataset.input_len must be positive");
    if (dataset.output_len == 0) p.push_back("dataset.output_len must be positive");
    if (dataset.window_stride == 0) p.push_back("dataset.window_stride must be at least 1");

    ModelConfig m = model;
    if (m.channels == 0) m.channels = 1;  // CSV channel count is checked on load
    for (const auto& s : m.problems()) p.push_back(s);
    for (const auto& s : bottleneck.problems(m)) p.push_back(s);
    for (const auto& s : training.problems()) p.push_back(s);
    if (!(ar.ridge >= 0.0)) p.push_back("ar.ridge must be non-negative");

    for (const auto& c : analysis.concepts) collect(p, "analysis.concepts: ", [&] { parse_concept(c); });
    if (analysis.concepts.empty()) p.push_back("analysis.concepts must not be empty");
    if (analysis.report_batches == 0) p.push_back("analysis.report_batches must be at least 1");
    if (analysis.report_batch_size < 2) p.push_back("analysis.report_batch_size must be at least 2 (CKA needs two examples)");
    collect(p, "analysis.mask_value: ", [&] { parse_mask_value(analysis.mask_value); });
    collect(p, "analysis.lens_origin: ", [&] { parse_lens_origin(analysis.lens_origin); });
    if (bottleneck.active()) collect(p, "analysis.lens_mask: ", [&] { parse_mask(analysis.lens_mask, bottleneck.components); });
    for (long s : analysis.shifts) {
        if (s < 0 || s > 23) p.push_back("analysis.shifts entries must lie in 0..23 (got " + std::to_string(s) + ")");
    }
    for (double a : analysis.alphas) {
        if (!(a >= 0.0 && a <= 1.0)) p.push_back("analysis.alphas entries must lie in [0, 1]");
    }
    return p;
}

json ExperimentConfig::to_json() const {
    const auto& s = dataset.synthetic;
    json sinusoids = json::array();
    for (const auto& w : s.sinusoids) sinusoids.push_back({{"period", w.period}, {"amplitude", w.amplitude}, {"phase", w.phase}});
    json ds{{"input_len", dataset.input_len},
            {"output_len", dataset.output_len},
            {"window_stride", dataset.window_stride},
            {"split", {{"train", dataset.split.train}, {"val", dataset.split.val}, {"test", dataset.split.test}}}};
    if (dataset.is_synthetic()) {
        ds["synthetic"] = {{"length", s.length},
                           {"channels", s.channels},
                           {"start", s.start},
                           {"sinusoids", sinusoids},
                           {"hour_profile_amplitude", s.hour_profile_amplitude},
                           {"ar_phi1", s.ar_phi1},
                           {"ar_phi2", s.ar_phi2},
                           {"ar_innovation_std", s.ar_innovation_std},
                           {"noise_std", s.noise_std},
                           {"channel_gain", s.channel_gain},
                           {"channel_phase", s.channel_phase},
                           {"seed", s.seed}};
    } else {
        ds["csv"] = dataset.csv;
        ds["date_column"] = dataset.date_column;
    }
    json mj = cbf::to_json(model);
    for (const char* k : {"input_len", "output_len", "channels"}) mj.erase(k);
    return {{"name", name},
            {"output_dir", output_dir},
            {"dataset", ds},
            {"model", mj},
            {"bottleneck", cbf::to_json(bottleneck)},
            {"training",
             {{"alpha", training.alpha},
              {"learning_rate", training.learning_rate},
              {"batch_size", training.batch_size},
              {"max_epochs", training.max_epochs},
              {"patience", training.patience},
              {"seed", training.seed},
              {"lr_halving", training.lr_halving},
              {"cka_branch", training.cka_branch}}},
            {"ar", {{"order", ar.order}, {"ridge", ar.ridge}}},
            {"analysis",
             {{"concepts", analysis.concepts},
              {"report_batches", analysis.report_batches},
              {"report_batch_size", analysis.report_batch_size},
              {"mask_value", analysis.mask_value},
              {"lens_origin", analysis.lens_origin},
              {"lens_mask", analysis.lens_mask},
              {"lens_windows", analysis.lens_windows},
              {"shifts", analysis.shifts},
              {"shift_future", analysis.shift_future},
              {"alphas", analysis.alphas},
              {"seeds", analysis.seeds}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    std::vector<std::string> p;
    if (!j.is_object()) throw ValidationError({"configuration must be a JSON object"});
    ExperimentConfig c;
    {
        Reader root(&j, "", p);
        root.get("name", c.name);
        root.get("output_dir", c.output_dir);
        {
            Reader d = root.section("dataset");
            d.get("csv", c.dataset.csv);
            d.get("date_column", c.dataset.date_column);
            d.get("input_len", c.dataset.input_len);
            d.get("output_len", c.dataset.output_len);
            d.get("window_stride", c.dataset.window_stride);
            {
                Reader s = d.section("split");
                s.get("train", c.dataset.split.train);
                s.get("val", c.dataset.split.val);
                s.get("test", c.dataset.split.test);
            }
            if (d.find("synthetic") && !c.dataset.csv.empty()) {
                p.push_back("dataset: give either csv or synthetic, not both");
            }
            Reader s = d.section("synthetic");
            auto& y = c.dataset.synthetic;
            s.get("length", y.length);
            s.get("channels", y.channels);
            s.get("start", y.start);
            s.get("hour_profile_amplitude", y.hour_profile_amplitude);
            s.get("ar_phi1", y.ar_phi1);
            s.get("ar_phi2", y.ar_phi2);
            s.get("ar_innovation_std", y.ar_innovation_std);
            s.get("noise_std", y.noise_std);
            s.get("channel_gain", y.channel_gain);
            s.get("channel_phase", y.channel_phase);
            s.get("seed", y.seed);
            if (const json* list = s.find("sinusoids")) {
                if (!list->is_array()) {
                    p.push_back("dataset.synthetic.sinusoids must be a list of objects");
                } else {
                    y.sinusoids.clear();
                    for (std::size_t i = 0; i < list->size(); ++i) {
                        data::Sinusoid w;
                        Reader r(&(*list)[i], "dataset.synthetic.sinusoids[" + std::to_string(i) + "]", p);
                        r.get("period", w.period);
                        r.get("amplitude", w.amplitude);
                        r.get("phase", w.phase);
                        y.sinusoids.push_back(w);
                    }
                }
            }
        }
        {
            Reader m = root.section("model");
            m.get("d_model", c.model.d_model);
            m.get("heads", c.model.heads);
            m.get("encoder_layers", c.model.encoder_layers);
            m.get("decoder_layers", c.model.decoder_layers);
            m.get("moving_avg", c.model.moving_avg);
            m.get("d_ff", c.model.d_ff);
            m.get("autocorr_factor", c.model.autocorr_factor);
            m.get("label_len", c.model.label_len);
        }
        {
            Reader b = root.section("bottleneck");
            std::string type = to_string(c.bottleneck.type), axis = to_string(c.bottleneck.slice_axis);
            b.get("type", type);
            b.get("slice_axis", axis);
            b.get("layer", c.bottleneck.layer);
            b.get("components", c.bottleneck.components);
            collect(p, "bottleneck.type: ", [&] { c.bottleneck.type = parse_bottleneck_type(type); });
            collect(p, "bottleneck.slice_axis: ", [&] { c.bottleneck.slice_axis = parse_slice_axis(axis); });
        }
        {
            Reader t = root.section("training");
            t.get("alpha", c.training.alpha);
            t.get("learning_rate", c.training.learning_rate);
            t.get("batch_size", c.training.batch_size);
            t.get("max_epochs", c.training.max_epochs);
            t.get("patience", c.training.patience);
            t.get("seed", c.training.seed);
            t.get("lr_halving", c.training.lr_halving);
            t.get("cka_branch", c.training.cka_branch);
        }
        {
            Reader a = root.section("ar");
            a.get("order", c.ar.order);
            a.get("ridge", c.ar.ridge);
        }
        {
            Reader a = root.section("analysis");
            auto& an = c.analysis;
            a.get_list("concepts", an.concepts, [](const json& e) { return e.is_string(); }, "strings");
            a.get("report_batches", an.report_batches);
            a.get("report_batch_size", an.report_batch_size);
            a.get("mask_value", an.mask_value);
            a.get("lens_origin", an.lens_origin);
            a.get("lens_mask", an.lens_mask);
            a.get_list("lens_windows", an.lens_windows, [](const json& e) { return Reader::non_negative_integer(e); },
                       "non-negative integers");
            a.get_list("shifts", an.shifts, [](const json& e) { return e.is_number_integer(); }, "integers");
            a.get("shift_future", an.shift_future);
            a.get_list("alphas", an.alphas, [](const json& e) { return e.is_number(); }, "numbers");
            a.get_list("seeds", an.seeds, [](const json& e) { return Reader::non_negative_integer(e); },
                       "non-negative integers");
        }
    }
    c.model.input_len = c.dataset.input_len;
    c.model.output_len = c.dataset.output_len;
    c.model.channels = c.dataset.is_synthetic() ? c.dataset.synthetic.channels : 0;
    for (const auto& s : c.problems()) p.push_back(s);
    if (!p.empty()) throw ValidationError(p);
    return c;
}

fs::path ExperimentConfig::run_dir() const {
    fs::path base = output_dir;
    if (base.empty()) {
        const char* env = std::getenv("CBF_OUTPUT_ROOT");
        base = env && *env ? fs::path(env) : fs::path("runs");
    }
    return base / name;
}

std::vector<long> ExperimentConfig::effective_shifts() const {
    if (!analysis.shifts.empty()) return analysis.shifts;
    std::vector<long> all(24);
    for (long s = 0; s < 24; ++s) all[static_cast<std::size_t>(s)] = s;
    return all;
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError({"override '" + assignment + "' must have the form key.path=value"});
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &config;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*node)[parts[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ValidationError({"override '" + key + "': '" + parts[i] + "' is not a section"});
        node = &next;
    }
    (*node)[parts.back()] = value;
}

ExperimentConfig load_experiment_config(const fs::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ValidationError({"cannot read config file '" + path.string() + "'"});
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ValidationError({"config file '" + path.string() + "' is not valid JSON: " + e.what()});
    }
    for (const auto& o : overrides) apply_override(j, o);
    ExperimentConfig c = ExperimentConfig::from_json(j);
    if (!c.dataset.csv.empty() && fs::path(c.dataset.csv).is_relative()) {
        c.dataset.csv = (path.parent_path() / c.dataset.csv).lexically_normal().string();
    }
    return c;
}

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
    if (const auto p = config_.problems(); !p.empty()) throw ValidationError(p);
}

const data::Dataset& Experiment::dataset() {
    if (dataset_) return *dataset_;
    const auto& d = config_.dataset;
    const data::RawSeries raw = d.is_synthetic() ? data::synth_hourly(d.synthetic) : data::load_csv(d.csv, d.date_column);
    config_.model.channels = raw.channel_count();
    if (const auto p = config_.problems(); !p.empty()) throw ValidationError(p);
    dataset_ = data::prepare_dataset(raw, d.split);
    return *dataset_;
}

const std::vector<data::TimeSeriesWindow>& Experiment::windows(const std::string& split) {
    auto it = windows_.find(split);
    if (it != windows_.end()) return it->second;
    const std::size_t stride = split == "train" ? config_.dataset.window_stride : 1;
    auto w = data::make_windows(dataset().by_name(split), config_.dataset.input_len, config_.dataset.output_len, stride);
    return windows_.emplace(split, std::move(w)).first->second;
}

void Experiment::prepare_dir() {
    dataset();
    std::error_code ec;
    fs::create_directories(dir(), ec);
    if (ec) throw std::runtime_error("cannot create run directory '" + dir().string() + "': " + ec.message());
    write_json(dir() / "config.json", config_.to_json());
}

fs::path Experiment::checkpoint_path(const std::optional<fs::path>& p) const {
    const fs::path path = p ? *p : default_checkpoint();
    if (!fs::exists(path)) {
        throw std::runtime_error("checkpoint '" + path.string() + "' not found (run train first or pass --checkpoint)");
    }
    return path;
}

ar::ArModel Experiment::fit_ar() {
    prepare_dir();
    const auto& ds = dataset();
    const std::size_t order = config_.ar.order == 0 ? config_.dataset.input_len : config_.ar.order;
    ar::ArModel m = ar::fit_ar(ds.train.values, order, config_.ar.ridge);
    m.dataset_id = dataset_fingerprint(ds);
    m.normalization_id = ds.normalizer.id();
    ar::save_ar(m, dir() / "ar.json");
    return m;
}

ar::ArModel Experiment::ar_model() {
    const fs::path path = dir() / "ar.json";
    if (fs::exists(path)) {
        const auto& ds = dataset();
        const std::size_t order = config_.ar.order == 0 ? config_.dataset.input_len : config_.ar.order;
        try {
            ar::ArModel m = ar::load_ar(path);
            if (m.dataset_id == dataset_fingerprint(ds) && m.normalization_id == ds.normalizer.id() &&
                m.order == order && m.ridge == config_.ar.ridge) {
                return m;
            }
        } catch (const ar::ArError&) {
        }
    }
    return fit_ar();
}

namespace {

void check_compatible(const Checkpoint& ck, const ModelConfig& data_side, const fs::path& path) {
    std::vector<std::string> p;
    if (ck.model.channels != data_side.channels) {
        p.push_back("checkpoint expects " + std::to_string(ck.model.channels) + " channels, dataset has " +
                    std::to_string(data_side.channels));
    }
    if (ck.model.input_len != data_side.input_len || ck.model.output_len != data_side.output_len) {
        p.push_back("checkpoint window " + std::to_string(ck.model.input_len) + "/" +
                    std::to_string(ck.model.output_len) + " differs from dataset.input_len/output_len " +
                    std::to_string(data_side.input_len) + "/" + std::to_string(data_side.output_len));
    }
    if (!p.empty()) throw ValidationError({"'" + path.string() + "': " + join(p, "; ")});
}

}  // namespace

TrainResult Experiment::train(const StepCallback& on_step) {
    const ar::ArModel arm = ar_model();
    Autoformer model(config_.model, config_.bottleneck, config_.training.seed);
    TrainResult r = cbf::train(model, windows("train"), windows("val"), arm, config_.training, on_step);
    r.best.metadata["experiment"] = config_.name;
    r.best.metadata["dataset_id"] = arm.dataset_id;
    r.best.metadata["stop_reason"] = r.history.stop_reason;
    save_checkpoint(r.best, default_checkpoint());
    write_text(dir() / "history.jsonl", r.history.to_jsonl(false));
    if (r.diverged) throw std::runtime_error("training " + r.history.stop_reason);
    return r;
}

Metrics Experiment::evaluate(const std::optional<fs::path>& checkpoint) {
    const fs::path path = checkpoint_path(checkpoint);
    prepare_dir();
    const Checkpoint ck = load_checkpoint(path);
    check_compatible(ck, config_.model, path);
    const auto model = ck.instantiate();
    const ar::ArModel arm = ar_model();
    const auto& test = windows("test");
    const Metrics m = cbf::evaluate(*model, test, config_.training.batch_size);
    double se = 0.0, ae = 0.0;
    std::size_t n = 0;
    for (const auto& w : test) {
        const data::RowMatrix f = ar::ar_forecast(arm, w.x, config_.dataset.output_len);
        se += (f - w.y).squaredNorm();
        ae += (f - w.y).cwiseAbs().sum();
        n += static_cast<std::size_t>(f.size());
    }
    const Metrics ar_m{se / static_cast<double>(n), ae / static_cast<double>(n)};
    write_json(dir() / "metrics.json", {{"checkpoint", file_hash(path)},
                                        {"windows", test.size()},
                                        {"test", metrics_json(m)},
                                        {"ar_baseline", metrics_json(ar_m)}});
    return m;
}

CkaReport Experiment::cka_report(const std::optional<fs::path>& checkpoint) {
    const fs::path path = checkpoint_path(checkpoint);
    prepare_dir();
    const Checkpoint ck = load_checkpoint(path);
    check_compatible(ck, config_.model, path);
    const auto model = ck.instantiate();
    std::vector<Concept> concepts;
    for (const auto& c : config_.analysis.concepts) concepts.push_back(parse_concept(c));
    const std::string id = file_hash(path);
    CkaReport r = cbf::cka_report(*model, windows("test"), ar_model(), concepts, config_.analysis.report_batches,
                                  config_.analysis.report_batch_size, id);
    write_json(dir() / "report.json", r.to_json());
    write_text(dir() / ("heatmap_" + id + ".svg"), heatmap_svg(r));
    return r;
}

LensResult Experiment::lens(const std::optional<fs::path>& checkpoint, const std::optional<std::string>& mask,
                            const std::optional<std::string>& origin) {
    const fs::path path = checkpoint_path(checkpoint);
    prepare_dir();
    const Checkpoint ck = load_checkpoint(path);
    check_compatible(ck, config_.model, path);
    const auto model = ck.instantiate();
    if (!model->spec().active()) {
        throw AnalysisError("decoder lens requires a bottleneck model (bottleneck.type is none)");
    }
    const std::size_t c = model->spec().components;
    const auto keep = parse_mask(mask.value_or(config_.analysis.lens_mask), c);
    const LensOrigin o = parse_lens_origin(origin.value_or(config_.analysis.lens_origin));
    const MaskValue mv = parse_mask_value(config_.analysis.mask_value);
    const ar::ArModel arm = ar_model();
    const auto& ds = dataset();
    const auto& test = windows("test");
    const std::size_t I = config_.dataset.input_len, O = config_.dataset.output_len;

    LensResult out;
    fs::create_directories(dir() / "forecasts");
    for (std::size_t wi : config_.analysis.lens_windows) {
        if (wi >= test.size()) {
            throw AnalysisError("analysis.lens_windows entry " + std::to_string(wi) + " exceeds the " +
                                std::to_string(test.size()) + " test windows");
        }
        const Batch b = make_batch(test, {wi});
        auto to_raw = [&](const Tensor& t) {
            data::RowMatrix m(static_cast<long>(O), static_cast<long>(model->config().channels));
            std::copy(t.values().begin(), t.values().end(), m.data());
            return ds.normalizer.invert(m);
        };
        const data::RowMatrix plain = to_raw(model->forward(b).forecast);
        std::vector<data::RowMatrix> lenses;
        std::vector<std::size_t> kept;
        for (std::size_t i = 0; i < c; ++i) {
            if (!keep[i]) continue;
            std::vector<bool> only(c, false);
            only[i] = true;
            lenses.push_back(to_raw(decoder_lens(*model, b, only, o, mv)));
            kept.push_back(i);
        }
        const data::RowMatrix arf = ds.normalizer.invert(ar::ar_forecast(arm, test[wi].x, O));
        const std::size_t first = test[wi].start + I;
        for (std::size_t ch = 0; ch < model->config().channels; ++ch) {
            ForecastTable t;
            for (std::size_t k = 0; k < O; ++k) {
                const long row = static_cast<long>(k), col = static_cast<long>(ch);
                t.timestamps.push_back(data::format_instant(ds.test.timestamps[first + k]));
                t.truth.push_back(ds.test.raw_values(static_cast<long>(first + k), col));
                t.plain.push_back(plain(row, col));
                t.ar.push_back(arf(row, col));
            }
            t.lens.assign(kept.size(), {});
            for (std::size_t i : kept) t.lens_components.push_back(i + 1);
            for (std::size_t i = 0; i < kept.size(); ++i) {
                for (std::size_t k = 0; k < O; ++k) t.lens[i].push_back(lenses[i](static_cast<long>(k), static_cast<long>(ch)));
            }
            const std::string stem = "w" + std::to_string(wi) + "_ch" + std::to_string(ch);
            const fs::path csv = dir() / "forecasts" / (stem + ".csv");
            write_forecast_csv(t, csv);
            const fs::path svg = dir() / "forecasts" / (stem + ".svg");
            write_text(svg, forecast_svg(t, "window " + std::to_string(wi) + ", channel " + ds.channels[ch] +
                                                ", lens origin " + to_string(o)));
            out.files.push_back(csv);
            out.files.push_back(svg);
        }
    }
    return out;
}

std::vector<ShiftRecord> Experiment::intervene(const std::optional<fs::path>& checkpoint,
                                               const std::optional<std::vector<long>>& shifts) {
    const fs::path path = checkpoint_path(checkpoint);
    prepare_dir();
    const Checkpoint ck = load_checkpoint(path);
    check_compatible(ck, config_.model, path);
    const auto model = ck.instantiate();
    const std::vector<long> s = shifts.value_or(config_.effective_shifts());
    for (long v : s) {
        if (v < 0 || v > 23) throw ValidationError({"shifts must lie in 0..23 (got " + std::to_string(v) + ")"});
    }
    const auto records = shift_sweep(*model, dataset().test, s, config_.analysis.shift_future,
                                     config_.training.batch_size);
    json list = json::array();
    for (const auto& r : records) list.push_back(cbf::to_json(r));
    write_json(dir() / "intervention.json",
               {{"checkpoint", file_hash(path)}, {"shift_future", config_.analysis.shift_future}, {"records", list}});
    write_text(dir() / "intervention.svg", intervention_svg(records));
    return records;
}

std::vector<AlphaRow> Experiment::alpha_sweep(const std::optional<std::vector<double>>& alphas,
                                              const StepCallback& on_step) {
    prepare_dir();
    const std::vector<double> list = alphas.value_or(config_.analysis.alphas);
    std::vector<std::uint64_t> seeds = config_.analysis.seeds;
    if (seeds.empty()) seeds.push_back(config_.training.seed);
    const bool concepts_on = config_.bottleneck.active();

    std::vector<AlphaRow> rows;
    json jrows = json::array();
    std::string csv = "alpha,mse_mean,mse_std,mae_mean,mae_std,cka_ar,cka_hour_of_day,runs,forecast_degenerate\n";
    for (double a : list) {
        if (!(a >= 0.0 && a <= 1.0)) throw ValidationError({"alphas must lie in [0, 1]"});
        std::vector<double> mses, maes;
        std::map<std::string, std::vector<double>> scores;
        for (std::uint64_t seed : seeds) {
            ExperimentConfig sub = config_;
            sub.output_dir = (dir() / "alpha_sweep").string();
            sub.name = "alpha_" + alpha_tag(a) + "_seed_" + std::to_string(seed);
            sub.training.alpha = a;
            sub.training.seed = seed;
            sub.analysis.concepts = {"ar", "hour_of_day"};
            Experiment e(sub);
            e.train(on_step);
            const Metrics m = e.evaluate();
            mses.push_back(m.mse);
            maes.push_back(m.mae);
            if (concepts_on) {
                const CkaReport r = e.cka_report();
                for (std::size_t k = 0; k < r.concepts.size() && k < sub.bottleneck.components; ++k) {
                    scores[r.concepts[k]].push_back(r.scores.at(sub.bottleneck.layer).at(k).at(k));
                }
            }
        }
        AlphaRow row;
        row.alpha = a;
        row.mse = summarize(mses);
        row.mae = summarize(maes);
        for (const auto& [name, v] : scores) row.concept_scores[name] = summarize(v);
        // Without an MSE term nothing ties the output to the target.
        row.forecast_degenerate = a == 1.0;
        rows.push_back(row);

        json cj = json::object();
        for (const auto& [name, s] : row.concept_scores) cj[name] = {{"mean", s.mean}, {"std", s.stddev}};
        jrows.push_back({{"alpha", a},
                         {"mse", {{"mean", row.mse.mean}, {"std", row.mse.stddev}}},
                         {"mae", {{"mean", row.mae.mean}, {"std", row.mae.stddev}}},
                         {"concept_scores", cj},
                         {"runs", row.mse.count},
                         {"forecast_degenerate", row.forecast_degenerate}});
        auto score = [&](const char* k) {
            const auto it = row.concept_scores.find(k);
            return it == row.concept_scores.end() ? std::string() : std::to_string(it->second.mean);
        };
        std::ostringstream line;
        line.precision(10);
        line << a << ',' << row.mse.mean << ',' << row.mse.stddev << ',' << row.mae.mean << ',' << row.mae.stddev << ','
             << score("ar") << ',' << score("hour_of_day") << ',' << row.mse.count << ','
             << (row.forecast_degenerate ? "true" : "false") << '\n';
        csv += line.str();
    }
    write_json(dir() / "alpha_sweep.json", {{"seeds", seeds}, {"rows", jrows}});
    write_text(dir() / "alpha_sweep.csv", csv);
    return rows;
}

std::vector<fs::path> emit_reports(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw AnalysisError("run directory '" + run_dir.string() + "' does not exist");
    std::vector<std::string> required{"config.json", "checkpoint.bin", "history.jsonl", "metrics.json", "report.json"};
    bool bottleneck = false;
    if (fs::exists(run_dir / "config.json")) {
        const json cfg = read_json(run_dir / "config.json");
        bottleneck = cfg.contains("bottleneck") && cfg["bottleneck"].value("type", "none") != "none";
    }
    if (bottleneck) required.push_back("intervention.json");
    std::vector<std::string> missing;
    for (const auto& f : required) {
        if (!fs::exists(run_dir / f)) missing.push_back(f);
    }
    if (!fs::is_directory(run_dir / "forecasts") && bottleneck) missing.push_back("forecasts/");
    if (!missing.empty()) {
        throw AnalysisError("run directory '" + run_dir.string() + "' is missing: " + join(missing, ", "));
    }
    std::vector<fs::path> written;
    const CkaReport report = CkaReport::from_json(read_json(run_dir / "report.json"));
    const fs::path heat = run_dir / ("heatmap_" + report.checkpoint_id + ".svg");
    write_text(heat, heatmap_svg(report));
    written.push_back(heat);
    if (bottleneck) {
        const json j = read_json(run_dir / "intervention.json");
        std::vector<ShiftRecord> records;
        for (const auto& r : j.at("records")) {
            ShiftRecord s;
            s.shift = r.at("shift").get<long>();
            s.shifted = metrics_from_json(r.at("shifted"));
            s.intervened = metrics_from_json(r.at("intervened"));
            s.baseline = metrics_from_json(r.at("baseline"));
            records.push_back(s);
        }
        const fs::path svg = run_dir / "intervention.svg";
        write_text(svg, intervention_svg(records));
        written.push_back(svg);
    }
    return written;
}

}  // namespace cbf
