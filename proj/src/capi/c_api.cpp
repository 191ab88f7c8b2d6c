#include "cbformer/cbformer.h"

#include <memory>
#include <string>
#include <vector>

#include "cbformer/experiment.hpp"
#include "cbformer/selfcheck.hpp"

struct cbf_experiment {
    std::unique_ptr<cbf::Experiment> impl;
    std::string run_dir;
    std::string config_json;
};

struct cbf_model {
    std::unique_ptr<cbf::Autoformer> impl;
};

namespace {

thread_local std::string last_error;

cbf_status fail(cbf_status s, const std::string& message) {
    last_error = message;
    return s;
}

template <class F>
cbf_status guarded(F&& f) {
    try {
        last_error.clear();
        return f();
    } catch (const cbf::ValidationError& e) {
        return fail(CBF_ERR_VALIDATION, e.what());
    } catch (const cbf::ConfigError& e) {
        return fail(CBF_ERR_VALIDATION, e.what());
    } catch (const std::exception& e) {
        return fail(CBF_ERR_RUNTIME, e.what());
    } catch (...) {
        return fail(CBF_ERR_RUNTIME, "unknown error");
    }
}

std::optional<std::filesystem::path> optional_path(const char* p) {
    if (!p || !*p) return std::nullopt;
    return std::filesystem::path(p);
}

cbf::StepCallback step_callback(cbf_step_fn fn, void* user) {
    if (!fn) return {};
    return [fn, user](std::size_t epoch, std::size_t step, double loss) { fn(epoch, step, loss, user); };
}

}  // namespace

extern "C" {

const char* cbf_last_error(void) { return last_error.c_str(); }

const char* cbf_version(void) { return "0.1.0"; }

cbf_status cbf_experiment_open(const char* config_path, const char* const* overrides, size_t override_count,
                               cbf_experiment** out) {
    if (!config_path || !out) return fail(CBF_ERR_INVALID_ARGUMENT, "config path and output handle are required");
    if (override_count && !overrides) return fail(CBF_ERR_INVALID_ARGUMENT, "override list is null");
    *out = nullptr;
    return guarded([&] {
        std::vector<std::string> ov;
        for (size_t i = 0; i < override_count; ++i) {
            if (!overrides[i]) return fail(CBF_ERR_INVALID_ARGUMENT, "override " + std::to_string(i) + " is null");
            ov.emplace_back(overrides[i]);
        }
        auto exp = std::make_unique<cbf_experiment>();
        exp->impl = std::make_unique<cbf::Experiment>(cbf::load_experiment_config(config_path, ov));
        exp->run_dir = exp->impl->dir().string();
        *out = exp.release();
        return CBF_OK;
    });
}

void cbf_experiment_close(cbf_experiment* exp) { delete exp; }

const char* cbf_experiment_run_dir(const cbf_experiment* exp) { return exp ? exp->run_dir.c_str() : ""; }

const char* cbf_experiment_config_json(cbf_experiment* exp) {
    if (!exp) return "";
    exp->config_json = exp->impl->config().to_json().dump(2);
    return exp->config_json.c_str();
}

#define CBF_REQUIRE_EXP(exp) \
    if (!(exp)) return fail(CBF_ERR_INVALID_ARGUMENT, "experiment handle is null")

cbf_status cbf_fit_ar(cbf_experiment* exp) {
    CBF_REQUIRE_EXP(exp);
    return guarded([&] {
        exp->impl->fit_ar();
        return CBF_OK;
    });
}

cbf_status cbf_train(cbf_experiment* exp, cbf_step_fn on_step, void* user) {
    CBF_REQUIRE_EXP(exp);
    return guarded([&] {
        exp->impl->train(step_callback(on_step, user));
        return CBF_OK;
    });
}

cbf_status cbf_evaluate(cbf_experiment* exp, const char* checkpoint, double* mse, double* mae) {
    CBF_REQUIRE_EXP(exp);
    return guarded([&] {
        const cbf::Metrics m = exp->impl->evaluate(optional_path(checkpoint));
        if (mse) *mse = m.mse;
        if (mae) *mae = m.mae;
        return CBF_OK;
    });
}

cbf_status cbf_cka_report(cbf_experiment* exp, const char* checkpoint) {
    CBF_REQUIRE_EXP(exp);
    return guarded([&] {
        exp->impl->cka_report(optional_path(checkpoint));
        return CBF_OK;
    });
}

cbf_status cbf_lens(cbf_experiment* exp, const char* checkpoint, const char* mask, const char* origin) {
    CBF_REQUIRE_EXP(exp);
    return guarded([&] {
        exp->impl->lens(optional_path(checkpoint), mask ? std::optional<std::string>(mask) : std::nullopt,
                        origin ? std::optional<std::string>(origin) : std::nullopt);
        return CBF_OK;
    });
}

cbf_status cbf_intervene(cbf_experiment* exp, const char* checkpoint, const long* shifts, size_t shift_count) {
    CBF_REQUIRE_EXP(exp);
    return guarded([&] {
        std::optional<std::vector<long>> s;
        if (shifts) s = std::vector<long>(shifts, shifts + shift_count);
        exp->impl->intervene(optional_path(checkpoint), s);
        return CBF_OK;
    });
}

cbf_status cbf_alpha_sweep(cbf_experiment* exp, const double* alphas, size_t alpha_count, cbf_step_fn on_step,
                           void* user) {
    CBF_REQUIRE_EXP(exp);
    return guarded([&] {
        std::optional<std::vector<double>> a;
        if (alphas) a = std::vector<double>(alphas, alphas + alpha_count);
        exp->impl->alpha_sweep(a, step_callback(on_step, user));
        return CBF_OK;
    });
}

cbf_status cbf_emit_reports(const char* run_dir) {
    if (!run_dir) return fail(CBF_ERR_INVALID_ARGUMENT, "run directory is null");
    return guarded([&] {
        cbf::emit_reports(run_dir);
        return CBF_OK;
    });
}

cbf_status cbf_selfcheck(cbf_suite_fn on_suite, void* user) {
    return guarded([&] {
        bool all = true;
        std::string failed;
        for (const auto& r : cbf::run_selfcheck([&](const cbf::SuiteResult& s) {
                 if (on_suite) on_suite(s.name.c_str(), s.passed ? 1 : 0, s.detail.c_str(), user);
             })) {
            if (!r.passed) {
                all = false;
                failed += (failed.empty() ? "" : ", ") + r.name;
            }
        }
        return all ? CBF_OK : fail(CBF_ERR_SELFCHECK, "failed suites: " + failed);
    });
}

cbf_status cbf_model_load(const char* checkpoint, cbf_model** out) {
    if (!checkpoint || !out) return fail(CBF_ERR_INVALID_ARGUMENT, "checkpoint path and output handle are required");
    *out = nullptr;
    return guarded([&] {
        auto m = std::make_unique<cbf_model>();
        m->impl = cbf::load_checkpoint(checkpoint).instantiate();
        *out = m.release();
        return CBF_OK;
    });
}

void cbf_model_free(cbf_model* model) { delete model; }

cbf_status cbf_model_shape(const cbf_model* model, size_t* input_len, size_t* output_len, size_t* channels) {
    if (!model) return fail(CBF_ERR_INVALID_ARGUMENT, "model handle is null");
    const auto& c = model->impl->config();
    if (input_len) *input_len = c.input_len;
    if (output_len) *output_len = c.output_len;
    if (channels) *channels = c.channels;
    last_error.clear();
    return CBF_OK;
}

cbf_status cbf_model_forecast(const cbf_model* model, const double* x, const double* marks,
                              const double* future_marks, size_t batch, double* out) {
    if (!model) return fail(CBF_ERR_INVALID_ARGUMENT, "model handle is null");
    if (!x || !marks || !future_marks || !out) return fail(CBF_ERR_INVALID_ARGUMENT, "input and output buffers are required");
    if (batch == 0) return fail(CBF_ERR_INVALID_ARGUMENT, "batch must be positive");
    return guarded([&] {
        const auto& c = model->impl->config();
        const std::size_t I = c.input_len, O = c.output_len, d = c.channels;
        cbf::Batch b;
        b.x = cbf::Tensor::from({batch, I, d}, std::vector<double>(x, x + batch * I * d));
        b.marks = cbf::Tensor::from({batch, I, 4}, std::vector<double>(marks, marks + batch * I * 4));
        b.future_marks = cbf::Tensor::from({batch, O, 4}, std::vector<double>(future_marks, future_marks + batch * O * 4));
        const cbf::Tensor f = model->impl->forward(b).forecast;
        std::copy(f.values().begin(), f.values().end(), out);
        return CBF_OK;
    });
}

}  // extern "C"
