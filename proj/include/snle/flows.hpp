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

#pragma once

// Normalizing-flow density estimators: MADE-masked autoregressive transforms
// stacked into a MAF, and RealNVP affine coupling layers. Both share one
// masked conditioner network per transform; only the masks differ.
//
// Density evaluation runs the inverse pass (data -> noise). Sampling runs the
// forward pass, which is sequential over coordinates for MAF and a single pass
// for RealNVP. The base is N(0, T I), where the temperature T can be changed
// after training without touching the transforms.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "snle/adcore.hpp"
#include "snle/rng.hpp"

namespace snle::flows {

using ad::Matrix;

enum class Architecture { MAF, RealNVP };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct FlowConfig {
    Architecture architecture = Architecture::MAF;
    std::size_t dim = 1;
    std::size_t context_dim = 0;
    std::size_t transforms = 5;
    std::vector<std::size_t> hidden{64, 64};

    friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

/// Binary connectivity of one conditioner network.
struct MadeMasks {
    /// layers[0] is (dim x hidden[0]); layers.back() is (hidden.back() x dim).
    std::vector<Matrix> layers;
    /// (1 x dim); zero for coordinates a transform leaves untouched.
    Matrix output_mask;
    std::vector<int> input_degrees;
    std::vector<std::vector<int>> hidden_degrees;
};

/// Autoregressive masks. `order[s]` is the coordinate placed s-th; output i may
/// depend on inputs strictly earlier in the order and on the whole context.
/// Hidden degrees cycle over 1..dim-1 for unconditional networks and over
/// 0..dim-1 when a context is present (degree-0 units see only the context).
MadeMasks build_masks(std::size_t dim, std::size_t context_dim, const std::vector<std::size_t>& hidden,
                      const std::vector<std::size_t>& order);

/// Coupling masks: coordinates with pass_through[j] feed the network and are
/// copied unchanged; the others get an affine map.
MadeMasks build_coupling_masks(std::size_t dim, const std::vector<std::size_t>& hidden,
                               const std::vector<bool>& pass_through);

/// Shift and log-scale produced by one transform's conditioner.
struct AffineParams {
    Matrix shift;
    Matrix log_scale;
};

class Flow {
public:
    /// Bound on |log-scale|, enforced as kLogScaleBound * tanh(raw / kLogScaleBound).
    static constexpr double kLogScaleBound = 7.0;

    Flow(FlowConfig config, std::uint64_t init_seed);

    const FlowConfig& config() const noexcept { return config_; }
    std::size_t dim() const noexcept { return config_.dim; }
    std::size_t context_dim() const noexcept { return config_.context_dim; }
    bool conditional() const noexcept { return config_.context_dim > 0; }

    double temperature() const noexcept { return temperature_; }
    /// Rescales the base variance to T * I. Throws ConfigError when T <= 0.
    void set_temperature(double t);
    Flow with_temperature(double t) const;

    /// Fresh initialization: hidden weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// output layers and biases zero, so the flow starts as the identity.
    void reinitialize(std::uint64_t seed);

    /// x_std = (x - shift) / scale before entering the transforms. Densities are
    /// reported in original units.
    void set_data_standardization(std::vector<double> shift, std::vector<double> scale);
    void set_context_standardization(std::vector<double> shift, std::vector<double> scale);
    const std::vector<double>& data_shift() const noexcept { return data_shift_; }
    const std::vector<double>& data_scale() const noexcept { return data_scale_; }
    const std::vector<double>& context_shift() const noexcept { return ctx_shift_; }
    const std::vector<double>& context_scale() const noexcept { return ctx_scale_; }

    ad::ParamSet& params() noexcept { return params_; }
    const ad::ParamSet& params() const noexcept { return params_; }
    const std::vector<MadeMasks>& masks() const noexcept { return masks_; }

    /// log q(x | context) per row. `context` is (rows x context_dim) or a single
    /// row broadcast to every x; pass nullptr for unconditional flows.
    std::vector<double> log_prob(const Matrix& x, const Matrix* context = nullptr) const;
    double log_prob(std::span<const double> x, std::span<const double> context = {}) const;

    /// n draws from q(. | context).
    Matrix sample(std::size_t n, std::span<const double> context, Rng& rng) const;
    Matrix sample(std::size_t n, Rng& rng) const { return sample(n, {}, rng); }

    /// Inverse pass in original units. Writes the total log|det dz/dx| per row
    /// when `log_det` is given (standardization included).
    Matrix to_noise(const Matrix& x, const Matrix* context, std::vector<double>* log_det = nullptr) const;
    /// Forward pass: noise -> data in original units.
    Matrix from_noise(const Matrix& z, const Matrix* context) const;

    /// Log-density at the temperature T of noise points z.
    double base_log_prob(std::span<const double> z) const;

    /// Conditioner output of transform k on standardized inputs.
    AffineParams conditioner(std::size_t k, const Matrix& u, const Matrix* context_std) const;

    /// Differentiable per-row log-density of standardized inputs, excluding the
    /// constant standardization Jacobian. Result is (rows x 1).
    ad::Var log_prob_graph(ad::Tape& tape, const ad::Bindings& params, ad::Var x_std,
                           std::optional<ad::Var> context_std) const;

    Matrix standardize_data(const Matrix& x) const;
    Matrix standardize_context(const Matrix& context) const;
    /// Sum of log(data_scale); subtract from standardized log-densities.
    double data_log_scale_sum() const noexcept;

    nlohmann::json to_json() const;
    static Flow from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Flow load(const std::filesystem::path& path);

private:
    std::pair<ad::Var, ad::Var> conditioner_graph(ad::Tape& tape, const ad::Bindings& params,
                                                   const std::vector<ad::Var>& masks, std::size_t k, ad::Var u,
                                                   std::optional<ad::Var> ctx) const;
    std::vector<ad::Var> bind_masks(ad::Tape& tape, std::size_t k) const;
    void check_context(const Matrix* context, std::size_t rows) const;

    FlowConfig config_;
    double temperature_ = 1.0;
    ad::ParamSet params_;
    std::vector<MadeMasks> masks_;
    std::vector<double> data_shift_;
    std::vector<double> data_scale_;
    std::vector<double> ctx_shift_;
    std::vector<double> ctx_scale_;
};

/// Parameter name of transform k's tensor, e.g. "t3.w0".
std::string param_name(std::size_t k, const std::string& tensor);

}  // namespace snle::flows
