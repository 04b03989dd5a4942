/*
 * Copyright 2026 The snle-evidence Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "snle/flows.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "snle/errors.hpp"

namespace snle::flows {

namespace {

constexpr int kFormatVersion = 1;

std::vector<std::size_t> maf_order(std::size_t dim, std::size_t k)
{
    std::vector<std::size_t> order(dim);
    for (std::size_t s = 0; s < dim; ++s) {
        order[s] = (k % 2 == 0) ? s : dim - 1 - s;
    }
    return order;
}

std::vector<bool> coupling_pattern(std::size_t dim, std::size_t k)
{
    std::vector<bool> pass(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        pass[j] = (j + k) % 2 == 1;
    }
    return pass;
}

void check_hidden(const std::vector<std::size_t>& hidden)
{
    if (hidden.empty()) {
        throw ConfigError("flow: hidden layer list is empty");
    }
    for (auto h : hidden) {
        if (h == 0) {
            throw ConfigError("flow: hidden width must be positive");
        }
    }
}

void require_finite(const Matrix& m, const char* what)
{
    for (double v : m.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("flow: non-finite ") + what);
        }
    }
}

nlohmann::json matrix_to_json(const Matrix& m)
{
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const nlohmann::json& j)
{
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string to_string(Architecture a)
{
    return a == Architecture::MAF ? "MAF" : "RealNVP";
}

Architecture architecture_from_string(const std::string& s)
{
    if (s == "MAF" || s == "maf") {
        return Architecture::MAF;
    }
    if (s == "RealNVP" || s == "realnvp") {
        return Architecture::RealNVP;
    }
    throw ConfigError("unknown flow architecture '" + s + "'");
}

std::string param_name(std::size_t k, const std::string& tensor)
{
    return "t" + std::to_string(k) + "." + tensor;
}

MadeMasks build_masks(std::size_t dim, std::size_t context_dim, const std::vector<std::size_t>& hidden,
                      const std::vector<std::size_t>& order)
{
    if (dim == 0) {
        throw ConfigError("build_masks: dimension must be at least 1");
    }
    check_hidden(hidden);
    if (order.size() != dim) {
        throw ConfigError("build_masks: order has wrong length");
    }

    MadeMasks m;
    m.input_degrees.assign(dim, 0);
    std::vector<bool> seen(dim, false);
    for (std::size_t s = 0; s < dim; ++s) {
        if (order[s] >= dim || seen[order[s]]) {
            throw ConfigError("build_masks: order is not a permutation");
        }
        seen[order[s]] = true;
        m.input_degrees[order[s]] = static_cast<int>(s) + 1;
    }

    const int lo = (context_dim > 0 || dim == 1) ? 0 : 1;
    const int span = static_cast<int>(dim) - lo;
    for (auto width : hidden) {
        std::vector<int> deg(width);
        for (std::size_t u = 0; u < width; ++u) {
            deg[u] = span > 0 ? lo + static_cast<int>(u % static_cast<std::size_t>(span)) : 0;
        }
        m.hidden_degrees.push_back(std::move(deg));
    }

    Matrix first(dim, hidden[0]);
    for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t u = 0; u < hidden[0]; ++u) {
            first(j, u) = m.hidden_degrees[0][u] >= m.input_degrees[j] ? 1.0 : 0.0;
        }
    }
    m.layers.push_back(std::move(first));
    for (std::size_t l = 1; l < hidden.size(); ++l) {
        Matrix mid(hidden[l - 1], hidden[l]);
        for (std::size_t a = 0; a < hidden[l - 1]; ++a) {
            for (std::size_t b = 0; b < hidden[l]; ++b) {
                mid(a, b) = m.hidden_degrees[l][b] >= m.hidden_degrees[l - 1][a] ? 1.0 : 0.0;
            }
        }
        m.layers.push_back(std::move(mid));
    }
    Matrix out(hidden.back(), dim);
    for (std::size_t u = 0; u < hidden.back(); ++u) {
        for (std::size_t i = 0; i < dim; ++i) {
            out(u, i) = m.input_degrees[i] > m.hidden_degrees.back()[u] ? 1.0 : 0.0;
        }
    }
    m.layers.push_back(std::move(out));
    m.output_mask = Matrix(1, dim, 1.0);
    return m;
}

MadeMasks build_coupling_masks(std::size_t dim, const std::vector<std::size_t>& hidden,
                               const std::vector<bool>& pass_through)
{
    if (dim == 0) {
        throw ConfigError("build_coupling_masks: dimension must be at least 1");
    }
    check_hidden(hidden);
    if (pass_through.size() != dim) {
        throw ConfigError("build_coupling_masks: pattern has wrong length");
    }
    MadeMasks m;
    Matrix first(dim, hidden[0]);
    for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t u = 0; u < hidden[0]; ++u) {
            first(j, u) = pass_through[j] ? 1.0 : 0.0;
        }
    }
    m.layers.push_back(std::move(first));
    for (std::size_t l = 1; l < hidden.size(); ++l) {
        m.layers.emplace_back(hidden[l - 1], hidden[l], 1.0);
    }
    Matrix out(hidden.back(), dim);
    m.output_mask = Matrix(1, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        const double active = pass_through[i] ? 0.0 : 1.0;
        m.output_mask(0, i) = active;
        for (std::size_t u = 0; u < hidden.back(); ++u) {
            out(u, i) = active;
        }
    }
    m.layers.push_back(std::move(out));
    return m;
}

Flow::Flow(FlowConfig config, std::uint64_t init_seed) : config_(std::move(config))
{
    if (config_.dim == 0) {
        throw ConfigError("flow: dimension must be at least 1");
    }
    if (config_.transforms == 0) {
        throw ConfigError("flow: at least one transform required");
    }
    check_hidden(config_.hidden);
    for (std::size_t k = 0; k < config_.transforms; ++k) {
        if (config_.architecture == Architecture::MAF) {
            masks_.push_back(build_masks(config_.dim, config_.context_dim, config_.hidden, maf_order(config_.dim, k)));
        } else {
            masks_.push_back(build_coupling_masks(config_.dim, config_.hidden, coupling_pattern(config_.dim, k)));
        }
    }
    data_shift_.assign(config_.dim, 0.0);
    data_scale_.assign(config_.dim, 1.0);
    ctx_shift_.assign(config_.context_dim, 0.0);
    ctx_scale_.assign(config_.context_dim, 1.0);
    reinitialize(init_seed);
}

void Flow::reinitialize(std::uint64_t seed)
{
    Rng rng(seed);
    const auto& h = config_.hidden;
    const std::size_t d = config_.dim;
    const std::size_t c = config_.context_dim;
    ad::ParamSet ps;
    auto uniform = [&](std::size_t rows, std::size_t cols, double fan_in) {
        Matrix m(rows, cols);
        const double bound = 1.0 / std::sqrt(fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : m.data()) {
            v = u(rng);
        }
        return m;
    };
    for (std::size_t k = 0; k < config_.transforms; ++k) {
        const double fan0 = static_cast<double>(d + c);
        ps.add(param_name(k, "w0"), uniform(d, h[0], fan0));
        if (c > 0) {
            ps.add(param_name(k, "c0"), uniform(c, h[0], fan0));
        }
        ps.add(param_name(k, "b0"), Matrix(1, h[0]));
        for (std::size_t l = 1; l < h.size(); ++l) {
            ps.add(param_name(k, "w" + std::to_string(l)), uniform(h[l - 1], h[l], static_cast<double>(h[l - 1])));
            ps.add(param_name(k, "b" + std::to_string(l)), Matrix(1, h[l]));
        }
        ps.add(param_name(k, "wm"), Matrix(h.back(), d));
        ps.add(param_name(k, "bm"), Matrix(1, d));
        ps.add(param_name(k, "wa"), Matrix(h.back(), d));
        ps.add(param_name(k, "ba"), Matrix(1, d));
    }
    params_ = std::move(ps);
}

void Flow::set_temperature(double t)
{
    if (!(t > 0.0) || !std::isfinite(t)) {
        throw ConfigError("temperature must be positive and finite, got " + std::to_string(t));
    }
    temperature_ = t;
}

Flow Flow::with_temperature(double t) const
{
    Flow out = *this;
    out.set_temperature(t);
    return out;
}

void Flow::set_data_standardization(std::vector<double> shift, std::vector<double> scale)
{
    if (shift.size() != config_.dim || scale.size() != config_.dim) {
        throw DimensionError("data standardization has wrong dimension");
    }
    for (double s : scale) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ConfigError("standardization scale must be positive");
        }
    }
    data_shift_ = std::move(shift);
    data_scale_ = std::move(scale);
}

void Flow::set_context_standardization(std::vector<double> shift, std::vector<double> scale)
{
    if (shift.size() != config_.context_dim || scale.size() != config_.context_dim) {
        throw DimensionError("context standardization has wrong dimension");
    }
    for (double s : scale) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ConfigError("standardization scale must be positive");
        }
    }
    ctx_shift_ = std::move(shift);
    ctx_scale_ = std::move(scale);
}

double Flow::data_log_scale_sum() const noexcept
{
    double s = 0.0;
    for (double v : data_scale_) {
        s += std::log(v);
    }
    return s;
}

Matrix Flow::standardize_data(const Matrix& x) const
{
    if (x.cols() != config_.dim) {
        throw DimensionError("flow: data has " + std::to_string(x.cols()) + " columns, expected " +
                             std::to_string(config_.dim));
    }
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(r, c) = (x(r, c) - data_shift_[c]) / data_scale_[c];
        }
    }
    return out;
}

Matrix Flow::standardize_context(const Matrix& context) const
{
    if (context.cols() != config_.context_dim) {
        throw DimensionError("flow: context has " + std::to_string(context.cols()) + " columns, expected " +
                             std::to_string(config_.context_dim));
    }
    Matrix out(context.rows(), context.cols());
    for (std::size_t r = 0; r < context.rows(); ++r) {
        for (std::size_t c = 0; c < context.cols(); ++c) {
            out(r, c) = (context(r, c) - ctx_shift_[c]) / ctx_scale_[c];
        }
    }
    return out;
}

void Flow::check_context(const Matrix* context, std::size_t rows) const
{
    if (conditional()) {
        if (context == nullptr) {
            throw UsageError("conditional flow requires a context");
        }
        if (context->cols() != config_.context_dim) {
            throw DimensionError("flow: context has wrong dimension");
        }
        if (context->rows() != rows && context->rows() != 1) {
            throw DimensionError("flow: context rows must be 1 or match the data");
        }
        require_finite(*context, "context");
    } else if (context != nullptr && context->cols() != 0) {
        throw UsageError("unconditional flow given a context");
    }
}

std::vector<ad::Var> Flow::bind_masks(ad::Tape& tape, std::size_t k) const
{
    std::vector<ad::Var> out;
    for (const auto& m : masks_[k].layers) {
        out.push_back(tape.constant_ref(m));
    }
    out.push_back(tape.constant_ref(masks_[k].output_mask));
    return out;
}

std::pair<ad::Var, ad::Var> Flow::conditioner_graph(ad::Tape& /*tape*/, const ad::Bindings& params,
                                                     const std::vector<ad::Var>& masks, std::size_t k, ad::Var u,
                                                     std::optional<ad::Var> ctx) const
{
    auto p = [&](const std::string& t) { return params.at(param_name(k, t)); };
    const std::size_t n_hidden = config_.hidden.size();

    ad::Var pre = masked_matmul(u, p("w0"), masks[0]);
    if (ctx) {
        pre = pre + matmul(*ctx, p("c0"));
    }
    ad::Var h = ad::tanh(pre + p("b0"));
    for (std::size_t l = 1; l < n_hidden; ++l) {
        const std::string s = std::to_string(l);
        h = ad::tanh(masked_matmul(h, p("w" + s), masks[l]) + p("b" + s));
    }
    const ad::Var& out_mask = masks[n_hidden];
    const ad::Var& keep = masks[n_hidden + 1];
    ad::Var shift = masked_matmul(h, p("wm"), out_mask) + p("bm");
    ad::Var raw = masked_matmul(h, p("wa"), out_mask) + p("ba");
    ad::Var log_scale = ad::scale(ad::tanh(ad::scale(raw, 1.0 / kLogScaleBound)), kLogScaleBound);
    if (config_.architecture == Architecture::RealNVP) {
        shift = shift * keep;
        log_scale = log_scale * keep;
    }
    return {shift, log_scale};
}

ad::Var Flow::log_prob_graph(ad::Tape& tape, const ad::Bindings& params, ad::Var x_std,
                             std::optional<ad::Var> context_std) const
{
    ad::Var u = x_std;
    std::optional<ad::Var> log_det;
    for (std::size_t k = 0; k < config_.transforms; ++k) {
        auto masks = bind_masks(tape, k);
        auto [shift, log_scale] = conditioner_graph(tape, params, masks, k, u, context_std);
        u = (u - shift) * ad::exp(-log_scale);
        ad::Var ld = ad::row_sum(log_scale);
        log_det = log_det ? *log_det + ld : ld;
    }
    const double t = temperature_;
    const double norm = -0.5 * static_cast<double>(config_.dim) * std::log(2.0 * std::numbers::pi * t);
    ad::Var base = ad::add_scalar(ad::scale(ad::row_sum(u * u), -0.5 / t), norm);
    return base - *log_det;
}

AffineParams Flow::conditioner(std::size_t k, const Matrix& u, const Matrix* context_std) const
{
    if (k >= config_.transforms) {
        throw UsageError("conditioner: transform index out of range");
    }
    ad::Tape tape;
    auto bindings = tape.bind(params_, false);
    auto masks = bind_masks(tape, k);
    std::optional<ad::Var> ctx;
    if (conditional()) {
        if (context_std == nullptr) {
            throw UsageError("conditional flow requires a context");
        }
        ctx = tape.constant_ref(*context_std);
    }
    auto [shift, log_scale] = conditioner_graph(tape, bindings, masks, k, tape.constant_ref(u), ctx);
    return AffineParams{shift.value(), log_scale.value()};
}

std::vector<double> Flow::log_prob(const Matrix& x, const Matrix* context) const
{
    require_finite(x, "input");
    check_context(context, x.rows());
    ad::Tape tape;
    auto bindings = tape.bind(params_, false);
    const Matrix xs = standardize_data(x);
    std::optional<ad::Var> ctx;
    Matrix cs;
    if (conditional()) {
        cs = standardize_context(*context);
        ctx = tape.constant_ref(cs);
    }
    ad::Var lp = log_prob_graph(tape, bindings, tape.constant_ref(xs), ctx);
    const Matrix& v = lp.value();
    const double correction = data_log_scale_sum();
    std::vector<double> out(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) {
        out[r] = v(r, 0) - correction;
    }
    return out;
}

double Flow::log_prob(std::span<const double> x, std::span<const double> context) const
{
    const Matrix xm = Matrix::row(x);
    if (conditional()) {
        const Matrix cm = Matrix::row(context);
        return log_prob(xm, &cm)[0];
    }
    if (!context.empty()) {
        throw UsageError("unconditional flow given a context");
    }
    return log_prob(xm, nullptr)[0];
}

Matrix Flow::to_noise(const Matrix& x, const Matrix* context, std::vector<double>* log_det) const
{
    require_finite(x, "input");
    check_context(context, x.rows());
    Matrix u = standardize_data(x);
    Matrix cs;
    if (conditional()) {
        cs = standardize_context(*context);
    }
    std::vector<double> ld(x.rows(), -data_log_scale_sum());
    for (std::size_t k = 0; k < config_.transforms; ++k) {
        AffineParams a = conditioner(k, u, conditional() ? &cs : nullptr);
        for (std::size_t r = 0; r < u.rows(); ++r) {
            for (std::size_t c = 0; c < u.cols(); ++c) {
                u(r, c) = (u(r, c) - a.shift(r, c)) * std::exp(-a.log_scale(r, c));
                ld[r] -= a.log_scale(r, c);
            }
        }
    }
    if (log_det != nullptr) {
        *log_det = std::move(ld);
    }
    return u;
}

Matrix Flow::from_noise(const Matrix& z, const Matrix* context) const
{
    require_finite(z, "noise");
    if (z.cols() != config_.dim) {
        throw DimensionError("from_noise: wrong dimension");
    }
    check_context(context, z.rows());
    Matrix cs;
    if (conditional()) {
        cs = standardize_context(*context);
    }
    const Matrix* cptr = conditional() ? &cs : nullptr;
    const std::size_t d = config_.dim;
    Matrix u = z;
    for (std::size_t k = config_.transforms; k-- > 0;) {
        if (config_.architecture == Architecture::MAF) {
            const auto order = maf_order(d, k);
            Matrix out(u.rows(), d);
            for (std::size_t s = 0; s < d; ++s) {
                AffineParams a = conditioner(k, out, cptr);
                const std::size_t i = order[s];
                for (std::size_t r = 0; r < u.rows(); ++r) {
                    out(r, i) = u(r, i) * std::exp(a.log_scale(r, i)) + a.shift(r, i);
                }
            }
            u = std::move(out);
        } else {
            AffineParams a = conditioner(k, u, cptr);
            for (std::size_t r = 0; r < u.rows(); ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    u(r, c) = u(r, c) * std::exp(a.log_scale(r, c)) + a.shift(r, c);
                }
            }
        }
    }
    for (std::size_t r = 0; r < u.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            u(r, c) = u(r, c) * data_scale_[c] + data_shift_[c];
        }
    }
    return u;
}

double Flow::base_log_prob(std::span<const double> z) const
{
    double ss = 0.0;
    for (double v : z) {
        ss += v * v;
    }
    return -0.5 * ss / temperature_ -
           0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi * temperature_);
}

Matrix Flow::sample(std::size_t n, std::span<const double> context, Rng& rng) const
{
    if (n == 0) {
        throw UsageError("sample: n must be at least 1");
    }
    Matrix z(n, config_.dim);
    const double sd = std::sqrt(temperature_);
    for (double& v : z.data()) {
        v = sd * standard_normal(rng);
    }
    if (conditional()) {
        const Matrix cm = Matrix::row(context);
        return from_noise(z, &cm);
    }
    if (!context.empty()) {
        throw UsageError("unconditional flow given a context");
    }
    return from_noise(z, nullptr);
}

nlohmann::json Flow::to_json() const
{
    nlohmann::json j;
    j["format"] = "snle-flow";
    j["version"] = kFormatVersion;
    j["architecture"] = to_string(config_.architecture);
    j["dim"] = config_.dim;
    j["context_dim"] = config_.context_dim;
    j["transforms"] = config_.transforms;
    j["hidden"] = config_.hidden;
    j["temperature"] = temperature_;
    j["data_shift"] = data_shift_;
    j["data_scale"] = data_scale_;
    j["context_shift"] = ctx_shift_;
    j["context_scale"] = ctx_scale_;
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& m : masks_) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& l : m.layers) {
            layers.push_back(matrix_to_json(l));
        }
        masks.push_back({{"layers", layers}, {"output_mask", matrix_to_json(m.output_mask)}});
    }
    j["masks"] = masks;
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, m] : params_) {
        params[name] = matrix_to_json(m);
    }
    j["params"] = params;
    return j;
}

Flow Flow::from_json(const nlohmann::json& j)
{
    try {
        if (j.at("format").get<std::string>() != "snle-flow") {
            throw FileError("flow file: unexpected format tag");
        }
        const int version = j.at("version").get<int>();
        if (version != kFormatVersion) {
            throw FileError("flow file: unsupported version " + std::to_string(version));
        }
        FlowConfig cfg;
        cfg.architecture = architecture_from_string(j.at("architecture").get<std::string>());
        cfg.dim = j.at("dim").get<std::size_t>();
        cfg.context_dim = j.at("context_dim").get<std::size_t>();
        cfg.transforms = j.at("transforms").get<std::size_t>();
        cfg.hidden = j.at("hidden").get<std::vector<std::size_t>>();
        Flow f(cfg, 0);
        f.set_temperature(j.at("temperature").get<double>());
        f.set_data_standardization(j.at("data_shift").get<std::vector<double>>(),
                                   j.at("data_scale").get<std::vector<double>>());
        f.set_context_standardization(j.at("context_shift").get<std::vector<double>>(),
                                      j.at("context_scale").get<std::vector<double>>());
        const auto& masks = j.at("masks");
        if (masks.size() != cfg.transforms) {
            throw FileError("flow file: mask count does not match transforms");
        }
        for (std::size_t k = 0; k < cfg.transforms; ++k) {
            MadeMasks m = f.masks_[k];
            const auto& layers = masks[k].at("layers");
            if (layers.size() != m.layers.size()) {
                throw FileError("flow file: wrong number of mask layers");
            }
            for (std::size_t l = 0; l < layers.size(); ++l) {
                Matrix lm = matrix_from_json(layers[l]);
                if (!lm.same_shape(m.layers[l])) {
                    throw FileError("flow file: mask shape mismatch");
                }
                m.layers[l] = std::move(lm);
            }
            m.output_mask = matrix_from_json(masks[k].at("output_mask"));
            f.masks_[k] = std::move(m);
        }
        for (auto& [name, value] : f.params_) {
            Matrix pm = matrix_from_json(j.at("params").at(name));
            if (!pm.same_shape(value)) {
                throw FileError("flow file: parameter '" + name + "' has wrong shape");
            }
            value = std::move(pm);
        }
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw FileError(std::string("flow file: ") + e.what());
    }
}

void Flow::save(const std::filesystem::path& path) const
{
    std::ofstream os(path);
    if (!os) {
        throw FileError("cannot write " + path.string());
    }
    os << to_json().dump() << '\n';
}

Flow Flow::load(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw FileError("cannot read " + path.string());
    }
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FileError("flow file " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace snle::flows
