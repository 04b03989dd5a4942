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

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "snle/adcore.hpp"
#include "snle/flows.hpp"
#include "snle/rng.hpp"

namespace snle::train {

using ad::Matrix;

/// Paired records: row i of `context` conditions row i of `data`. `context`
/// has zero columns for unconditional density estimation.
struct Dataset {
    Matrix context;
    Matrix data;

    std::size_t size() const noexcept { return data.rows(); }
    Dataset subset(const std::vector<std::size_t>& rows) const;
    static Dataset unconditional(Matrix data);
};

struct TrainConfig {
    double learning_rate = 5e-4;
    std::size_t batch_size = 100;
    std::size_t max_epochs = 500;
    std::size_t patience = 20;
    double validation_fraction = 0.1;
    /// Fit data shift/scale to the training split before optimizing.
    bool standardize_data = true;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_nll = 0.0;
    bool stopped_early = false;
    double initial_val_nll = 0.0;

    /// "epoch,train_nll,val_nll" rows.
    std::string to_csv() const;

    friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

/// Random disjoint split with ceil(N (1 - f)) training records.
std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double fraction, Rng& rng);

/// Adaptive-moment gradient descent over a ParamSet.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(ad::ParamSet& params, const ad::Gradients& grads);

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::size_t t_ = 0;
    std::map<std::string, Matrix> m_;
    std::map<std::string, Matrix> v_;
};

/// Mean negative log-likelihood of `dataset` under `flow`, in original units.
double mean_nll(const flows::Flow& flow, const Dataset& dataset);

/// Maximum-likelihood fit with validation early stopping. On return `flow`
/// holds the parameters of the best validation epoch.
TrainReport fit_mle(flows::Flow& flow, const Dataset& dataset, const TrainConfig& config, Rng& rng);

}  // namespace snle::train
