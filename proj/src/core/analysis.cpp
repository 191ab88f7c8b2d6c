#include "cbformer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "cbformer/cka.hpp"
#include "cbformer/intervention.hpp"
#include "cbformer/ops.hpp"

namespace cbf {

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

std::string exact(double v) { return fmt("%.17g", v); }

// White (0) to deep blue (1).
std::string cell_color(double v) {
    const double t = std::clamp(v, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(255 - t * (255 - 8)));
    const int g = static_cast<int>(std::lround(255 - t * (255 - 48)));
    const int b = static_cast<int>(std::lround(255 - t * (255 - 107)));
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

std::size_t lens_label(const ForecastTable& t, std::size_t i) {
    return i < t.lens_components.size() ? t.lens_components[i] : i + 1;
}

}  // namespace

double CkaReport::at(std::size_t layer, std::size_t component, const std::string& concept_name) const {
    const auto it = std::find(concepts.begin(), concepts.end(), concept_name);
    if (it == concepts.end()) throw AnalysisError("report has no concept '" + concept_name + "'");
    return scores.at(layer).at(component).at(static_cast<std::size_t>(it - concepts.begin()));
}

nlohmann::json CkaReport::to_json() const {
    nlohmann::json layers = nlohmann::json::object();
    for (std::size_t l = 0; l < scores.size(); ++l) {
        nlohmann::json comps = nlohmann::json::object();
        for (std::size_t c = 0; c < scores[l].size(); ++c) {
            nlohmann::json cells = nlohmann::json::object();
            for (std::size_t k = 0; k < concepts.size(); ++k) cells[concepts[k]] = scores[l][c][k];
            comps["component" + std::to_string(c + 1)] = cells;
        }
        layers["layer" + std::to_string(l)] = comps;
    }
    return {{"checkpoint", checkpoint_id}, {"component_kind", component_kind}, {"n", batch_size},
            {"batches", batches},         {"concepts", concepts},             {"scores", layers}};
}

CkaReport CkaReport::from_json(const nlohmann::json& j) {
    CkaReport r;
    r.checkpoint_id = j.value("checkpoint", "");
    r.component_kind = j.value("component_kind", "");
    r.batch_size = j.at("n").get<std::size_t>();
    r.batches = j.at("batches").get<std::size_t>();
    r.concepts = j.at("concepts").get<std::vector<std::string>>();
    const auto& layers = j.at("scores");
    for (std::size_t l = 0; layers.contains("layer" + std::to_string(l)); ++l) {
        const auto& comps = layers.at("layer" + std::to_string(l));
        std::vector<std::vector<double>> rows;
        for (std::size_t c = 0; comps.contains("component" + std::to_string(c + 1)); ++c) {
            const auto& cells = comps.at("component" + std::to_string(c + 1));
            std::vector<double> row;
            for (const auto& name : r.concepts) row.push_back(cells.at(name).get<double>());
            rows.push_back(row);
        }
        r.scores.push_back(rows);
    }
    return r;
}

CkaReport cka_report(const Autoformer& model, const std::vector<data::TimeSeriesWindow>& windows,
                     const ar::ArModel& ar_model, const std::vector<Concept>& concepts, std::size_t batches,
                     std::size_t batch_size, const std::string& checkpoint_id) {
    if (batches == 0 || batch_size < 2) throw AnalysisError("CKA report needs at least one batch of two examples");
    if (concepts.empty()) throw AnalysisError("CKA report needs at least one concept");
    if (windows.size() < batches * batch_size) {
        throw AnalysisError("CKA report needs " + std::to_string(batches) + " full batches of " +
                            std::to_string(batch_size) + " windows, only " + std::to_string(windows.size()) +
                            " available (short by " + std::to_string(batches * batch_size - windows.size()) + ")");
    }
    CkaReport report;
    report.checkpoint_id = checkpoint_id;
    report.component_kind = model.spec().type == BottleneckType::FF ? "ff" : "heads";
    report.batch_size = batch_size;
    report.batches = batches;
    for (Concept c : concepts) report.concepts.push_back(to_string(c));

    const std::size_t layers = model.config().encoder_layers;
    for (std::size_t b = 0; b < batches; ++b) {
        std::vector<std::size_t> idx(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) idx[i] = b * batch_size + i;
        const Batch batch = make_batch(windows, idx);
        const ForwardResult fr = model.forward(batch, true);
        std::vector<Tensor> targets;
        for (Concept c : concepts) targets.push_back(concept_target(c, batch, ar_model, model.config().output_len));
        if (report.scores.empty()) {
            report.scores.resize(layers);
            for (std::size_t l = 0; l < layers; ++l) {
                report.scores[l].assign(model.components(fr.layers[l]).size(),
                                        std::vector<double>(concepts.size(), 0.0));
            }
        }
        for (std::size_t l = 0; l < layers; ++l) {
            const auto& comps = model.components(fr.layers[l]);
            for (std::size_t c = 0; c < comps.size(); ++c) {
                for (std::size_t k = 0; k < targets.size(); ++k) {
                    report.scores[l][c][k] += cka::linear_cka_value(comps[c], targets[k]) / static_cast<double>(batches);
                }
            }
        }
    }
    return report;
}

std::string to_string(LensOrigin o) { return o == LensOrigin::Bottleneck ? "bottleneck" : "final"; }

LensOrigin parse_lens_origin(const std::string& s) {
    if (s == "bottleneck") return LensOrigin::Bottleneck;
    if (s == "final") return LensOrigin::Final;
    throw ConfigError("lens origin must be bottleneck or final (got '" + s + "')");
}

MaskValue parse_mask_value(const std::string& s) {
    if (s == "zero") return MaskValue::Zero;
    if (s == "mean") return MaskValue::Mean;
    throw ConfigError("mask value must be zero or mean (got '" + s + "')");
}

std::vector<bool> parse_mask(const std::string& text, std::size_t components) {
    if (text == "all") return std::vector<bool>(components, true);
    if (text == "none" || text.empty()) return std::vector<bool>(components, false);
    std::vector<bool> keep(components, false);
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size() || v < 1 || v > components) {
            throw ConfigError("mask entry '" + item + "' is not a component number in 1.." + std::to_string(components));
        }
        keep[v - 1] = true;
    }
    return keep;
}

Tensor decoder_lens(const Autoformer& model, const Batch& batch, const std::vector<bool>& keep, LensOrigin origin,
                    MaskValue mask_value) {
    const auto& spec = model.spec();
    if (!spec.active()) throw AnalysisError("decoder lens requires a bottleneck model (bottleneck.type is none)");
    if (keep.size() != spec.components) {
        throw AnalysisError("mask has " + std::to_string(keep.size()) + " entries, model has " +
                            std::to_string(spec.components) + " components");
    }
    const bool all = std::all_of(keep.begin(), keep.end(), [](bool k) { return k; });
    const ComponentHook hook = [&](std::size_t i, const Tensor& computed) {
        if (keep[i]) return computed;
        const Tensor zeros = Tensor::zeros(computed.shape());
        if (mask_value == MaskValue::Zero) return zeros;
        return zeros + mean(mean(computed.detach(), 0, true), 1, true);
    };
    const Tensor emb = model.embed_encoder(batch.x, batch.marks);
    Tensor state = model.encode_prefix(emb, spec.layer + 1, nullptr, all ? nullptr : &hook);
    if (origin == LensOrigin::Final) state = model.encode_suffix(state, spec.layer + 1);
    return model.decode(model.encoder_norm(state), batch.x, batch.marks, batch.future_marks);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal-length series");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

std::string heatmap_svg(const CkaReport& report) {
    const int cell_w = 96, cell_h = 28, left = 150, top = 60;
    std::size_t rows = 0;
    for (const auto& layer : report.scores) rows += layer.size();
    const int width = left + cell_w * static_cast<int>(report.concepts.size()) + 20;
    const int height = top + cell_h * static_cast<int>(rows) + 20;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"10\" y=\"20\" font-size=\"14\">CKA " << report.checkpoint_id << " (" << report.batches
        << " batches of " << report.batch_size << ")</text>\n";
    for (std::size_t k = 0; k < report.concepts.size(); ++k) {
        svg << "<text x=\"" << left + cell_w * static_cast<int>(k) + cell_w / 2 << "\" y=\"" << top - 8
            << "\" text-anchor=\"middle\">" << report.concepts[k] << "</text>\n";
    }
    int row = 0;
    for (std::size_t l = 0; l < report.scores.size(); ++l) {
        for (std::size_t c = 0; c < report.scores[l].size(); ++c, ++row) {
            const int y = top + cell_h * row;
            svg << "<text x=\"10\" y=\"" << y + cell_h / 2 + 4 << "\">layer" << l << " comp" << c + 1 << "</text>\n";
            for (std::size_t k = 0; k < report.concepts.size(); ++k) {
                const double v = report.scores[l][c][k];
                const int x = left + cell_w * static_cast<int>(k);
                svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\"" << cell_h
                    << "\" fill=\"" << cell_color(v) << "\" stroke=\"#ffffff\" data-layer=\"" << l
                    << "\" data-component=\"" << c + 1 << "\" data-concept=\"" << report.concepts[k]
                    << "\" data-value=\"" << exact(v) << "\"/>\n";
                svg << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4
                    << "\" text-anchor=\"middle\" fill=\"" << (v > 0.55 ? "#ffffff" : "#000000") << "\">"
                    << fmt("%.2f", v) << "</text>\n";
            }
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string intervention_svg(const std::vector<ShiftRecord>& records) {
    const double width = 640, height = 360, left = 60, right = 20, top = 30, bottom = 40;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    long max_shift = 1;
    for (const auto& r : records) {
        for (double v : {r.shifted.mse, r.intervened.mse, r.baseline.mse}) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        max_shift = std::max(max_shift, r.shift);
    }
    if (records.empty()) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto px = [&](long s) { return left + (width - left - right) * static_cast<double>(s) / static_cast<double>(max_shift); };
    auto py = [&](double v) { return top + (height - top - bottom) * (hi - v) / (hi - lo); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">Test MSE under shifted timestamps</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right << "\" y2=\""
        << height - bottom << "\" stroke=\"#000\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << height - bottom
        << "\" stroke=\"#000\"/>\n";
    svg << "<text x=\"" << (width + left) / 2 << "\" y=\"" << height - 8 << "\" text-anchor=\"middle\">shift (hours)</text>\n";
    svg << "<text x=\"12\" y=\"" << top + 10 << "\">" << fmt("%.3f", hi) << "</text>\n";
    svg << "<text x=\"12\" y=\"" << height - bottom << "\">" << fmt("%.3f", lo) << "</text>\n";
    if (!records.empty()) {
        const double base = records.front().baseline.mse;
        svg << "<line x1=\"" << left << "\" y1=\"" << py(base) << "\" x2=\"" << width - right << "\" y2=\"" << py(base)
            << "\" stroke=\"#555555\" stroke-dasharray=\"6,4\" data-series=\"baseline\" data-value=\"" << exact(base)
            << "\"/>\n";
    }
    const struct {
        const char* name;
        const char* color;
        double ShiftRecord::*unused;
    } series[] = {{"shifted", "#d62728", nullptr}, {"intervened", "#1f77b4", nullptr}};
    for (const auto& s : series) {
        svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" data-series=\"" << s.name
            << "\" points=\"";
        for (const auto& r : records) {
            const double v = std::string(s.name) == "shifted" ? r.shifted.mse : r.intervened.mse;
            svg << px(r.shift) << ',' << py(v) << ' ';
        }
        svg << "\"/>\n";
        for (const auto& r : records) {
            const double v = std::string(s.name) == "shifted" ? r.shifted.mse : r.intervened.mse;
            svg << "<circle cx=\"" << px(r.shift) << "\" cy=\"" << py(v) << "\" r=\"3\" fill=\"" << s.color
                << "\" data-series=\"" << s.name << "\" data-shift=\"" << r.shift << "\" data-value=\"" << exact(v)
                << "\"/>\n";
        }
    }
    svg << "<text x=\"" << width - 200 << "\" y=\"" << top + 10 << "\" fill=\"#d62728\">no intervention</text>\n";
    svg << "<text x=\"" << width - 200 << "\" y=\"" << top + 26 << "\" fill=\"#1f77b4\">intervened</text>\n";
    svg << "<text x=\"" << width - 200 << "\" y=\"" << top + 42 << "\" fill=\"#555555\">original stamps</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

void write_forecast_csv(const ForecastTable& t, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw AnalysisError("cannot write '" + path.string() + "'");
    out << "t,truth,plain";
    for (std::size_t c = 0; c < t.lens.size(); ++c) out << ",lens_comp" << lens_label(t, c);
    out << ",ar\n";
    out.precision(17);
    for (std::size_t i = 0; i < t.truth.size(); ++i) {
        out << t.timestamps.at(i) << ',' << t.truth[i] << ',' << t.plain.at(i);
        for (const auto& l : t.lens) out << ',' << l.at(i);
        out << ',' << t.ar.at(i) << '\n';
    }
}

std::string forecast_svg(const ForecastTable& t, const std::string& title) {
    const double width = 640, height = 320, left = 60, right = 120, top = 30, bottom = 30;
    std::vector<std::pair<std::string, const std::vector<double>*>> series{{"truth", &t.truth}, {"plain", &t.plain}};
    for (std::size_t c = 0; c < t.lens.size(); ++c) series.emplace_back("lens_comp" + std::to_string(lens_label(t, c)), &t.lens[c]);
    series.emplace_back("ar", &t.ar);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [name, v] : series) {
        for (double x : *v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    }
    if (!(hi > lo)) lo -= 0.5, hi += 0.5;
    const std::size_t n = t.truth.size();
    auto px = [&](std::size_t i) {
        return left + (width - left - right) * (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
    };
    auto py = [&](double v) { return top + (height - top - bottom) * (hi - v) / (hi - lo); };
    static const char* colors[] = {"#000000", "#7f7f7f", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">" << title << "</text>\n";
    svg << "<text x=\"8\" y=\"" << top + 10 << "\">" << fmt("%.3g", hi) << "</text>\n";
    svg << "<text x=\"8\" y=\"" << height - bottom << "\">" << fmt("%.3g", lo) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = s + 1 == series.size() ? "#d62728" : colors[std::min<std::size_t>(s, 6)];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << (s == 0 ? 2 : 1.5)
            << "\" data-series=\"" << series[s].first << "\" points=\"";
        for (std::size_t i = 0; i < series[s].second->size(); ++i) svg << px(i) << ',' << py((*series[s].second)[i]) << ' ';
        svg << "\"/>\n";
        svg << "<text x=\"" << width - right + 10 << "\" y=\"" << top + 16 * static_cast<int>(s) + 10 << "\" fill=\""
            << color << "\">" << series[s].first << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw AnalysisError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw AnalysisError("failed writing '" + path.string() + "'");
}

}  // namespace cbf
